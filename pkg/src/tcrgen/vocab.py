"""Token alphabet and conversion between residue strings and token id sequences.

Source sequences are ``MHC <SEP> peptide`` padded to a fixed length; target
sequences are ``<SOS> residues <EOS>``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import OverlongSource, OverlongTarget, UnknownResidue

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
AMBIGUOUS = "X"
RESIDUES = AMINO_ACIDS + AMBIGUOUS

PAD = "<PAD>"
SEP = "<SEP>"
SOS = "<SOS>"
EOS = "<EOS>"
UNK = "<UNK>"
SPECIALS = [PAD, SEP, SOS, EOS, UNK]

MAX_SRC_LEN = 55
MAX_TCR_LEN = 26


@dataclass(frozen=True)
class Vocabulary:
    """Fixed 26-symbol alphabet: 21 residue symbols followed by specials."""

    symbols: tuple = field(default_factory=tuple)
    index: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.symbols)

    def id(self, symbol: str) -> int:
        return self.index[symbol]

    def symbol(self, token_id: int) -> str:
        return self.symbols[token_id]

    @property
    def pad_id(self):
        return self.index[PAD]

    @property
    def sep_id(self):
        return self.index[SEP]

    @property
    def sos_id(self):
        return self.index[SOS]

    @property
    def eos_id(self):
        return self.index[EOS]

    @property
    def residue_ids(self):
        """Ids of the 21 residue symbols (canonical + X), in symbol order."""
        return tuple(self.index[c] for c in RESIDUES)


@dataclass(frozen=True)
class TokenSeq:
    ids: np.ndarray
    kind: str  # "source" | "target"

    def __len__(self):
        return len(self.ids)


def build_vocab() -> Vocabulary:
    """Return the canonical vocabulary; deterministic, ids 0..25."""
    symbols = tuple(list(RESIDUES) + SPECIALS)
    index = {s: i for i, s in enumerate(symbols)}
    return Vocabulary(symbols=symbols, index=index)


def _residue_ids(seq: str, vocab: Vocabulary, where: str) -> list:
    ids = []
    for ch in seq:
        if ch not in RESIDUES:
            raise UnknownResidue(ch, where)
        ids.append(vocab.index[ch])
    return ids


def encode_source(mhc: str, peptide: str, vocab: Vocabulary,
                  max_len: int = MAX_SRC_LEN) -> TokenSeq:
    """Encode ``mhc ++ SEP ++ peptide``, PAD-filled to exactly ``max_len``."""
    needed = len(mhc) + 1 + len(peptide)
    if needed > max_len:
        raise OverlongSource(
            f"mhc({len(mhc)}) + SEP + peptide({len(peptide)}) = {needed} exceeds {max_len}")
    ids = _residue_ids(mhc, vocab, "mhc")
    ids.append(vocab.sep_id)
    ids.extend(_residue_ids(peptide, vocab, "peptide"))
    ids.extend([vocab.pad_id] * (max_len - len(ids)))
    return TokenSeq(ids=np.asarray(ids, dtype=np.int64), kind="source")


def encode_target(tcr: str, vocab: Vocabulary) -> TokenSeq:
    """Encode a receptor string as ``SOS ++ residues ++ EOS``."""
    if len(tcr) > MAX_TCR_LEN:
        raise OverlongTarget(f"receptor length {len(tcr)} exceeds {MAX_TCR_LEN}")
    ids = [vocab.sos_id] + _residue_ids(tcr, vocab, "tcr") + [vocab.eos_id]
    return TokenSeq(ids=np.asarray(ids, dtype=np.int64), kind="target")


def decode_tokens(seq, vocab: Vocabulary) -> str:
    """Strip special tokens and concatenate residue symbols."""
    ids = seq.ids if isinstance(seq, TokenSeq) else seq
    residues = set(vocab.residue_ids)
    return "".join(vocab.symbols[i] for i in ids if int(i) in residues)
