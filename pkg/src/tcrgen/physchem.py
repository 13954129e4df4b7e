"""Per-residue physicochemical descriptors.

Each residue carries a 5-vector:

    [aromatic, charge, hbond, hydrophobicity, mass_ratio]

- aromatic: 1 for F, W, Y, H (side chain contains an aromatic ring), else 0
- charge: formal side-chain charge at pH 7 (H gets a small +0.1 fraction)
- hbond: side-chain hydrogen-bond donor + acceptor count
- hydrophobicity: Kyte-Doolittle scale
- mass_ratio: average residue mass divided by the tryptophan residue mass,
  so values lie in (0, 1] with exactly W at 1.0

Values ship as a pinned, checksummed data file. The z-scored form uses
population statistics over the 20 canonical residues; the ambiguous residue
X and all special tokens get a zero z-scored vector.
"""

import hashlib
from importlib import resources

import numpy as np

from .errors import UnknownResidue
from .vocab import AMINO_ACIDS, RESIDUES, Vocabulary

N_FEATURES = 5

DESCRIPTOR_FILE = "descriptors.tsv"
DESCRIPTOR_SHA256 = "7eca427bd28fb0a1f38ef74c17c130716c5275480fb779233958bfb710b575a6"


def _data_bytes(name: str) -> bytes:
    return resources.files("tcrgen.data").joinpath(name).read_bytes()


def descriptor_file_checksum() -> str:
    """sha256 of the shipped descriptor file (raw bytes, no table access)."""
    return hashlib.sha256(_data_bytes(DESCRIPTOR_FILE)).hexdigest()


class DescriptorTable:
    """Immutable raw + z-scored descriptor lookup.

    ``total_reads`` counts every lookup through the accessors; it exists so
    the no-phys ablation can assert the table is never consulted.
    """

    total_reads = 0  # class-wide instrumentation counter

    def __init__(self):
        raw = {}
        text = _data_bytes(DESCRIPTOR_FILE).decode("utf-8")
        for line in text.splitlines():
            if not line or line.startswith("#"):
                continue
            sym, *vals = line.split("\t")
            raw[sym] = np.array([float(v) for v in vals], dtype=np.float64)
        missing = [c for c in RESIDUES if c not in raw]
        if missing:
            raise ValueError(f"descriptor file missing rows: {missing}")
        self._raw = raw
        canonical = np.stack([raw[c] for c in AMINO_ACIDS])
        self.mu = canonical.mean(axis=0)
        self.sigma = canonical.std(axis=0)  # population std over the 20 rows
        if np.any(self.sigma <= 0):
            raise ValueError("descriptor components must have positive spread")
        self._z = {c: (raw[c] - self.mu) / self.sigma for c in AMINO_ACIDS}
        self._z["X"] = np.zeros(N_FEATURES)

    def raw(self, residue: str) -> np.ndarray:
        if residue not in self._raw:
            raise UnknownResidue(residue, "descriptor table")
        DescriptorTable.total_reads += 1
        return self._raw[residue].copy()

    def zscore(self, residue: str) -> np.ndarray:
        if residue not in self._z:
            raise UnknownResidue(residue, "descriptor table")
        DescriptorTable.total_reads += 1
        return self._z[residue].copy()

    def zscored_rows(self, vocab: Vocabulary) -> np.ndarray:
        """(vocab_size, 5) matrix of z-scored descriptors, zeros for specials."""
        DescriptorTable.total_reads += 1
        rows = np.zeros((len(vocab), N_FEATURES))
        for c in RESIDUES:
            rows[vocab.id(c)] = self._z[c]
        return rows


def descriptor_raw(residue: str, table: DescriptorTable) -> np.ndarray:
    return table.raw(residue)


def zscore(table: DescriptorTable, residue: str) -> np.ndarray:
    return table.zscore(residue)
