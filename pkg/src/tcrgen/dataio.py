"""Triple ingestion and leakage-free context-level splits.

Input is UTF-8 TSV with a header naming the columns mhc, peptide, tcr in
any order; rows are uppercased and validated against the residue alphabet.
Splits partition distinct (mhc, peptide) context keys, so a context never
straddles two splits.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MalformedRow, MissingColumn, TooFewContexts, UnknownResidue
from .vocab import MAX_TCR_LEN, RESIDUES

REQUIRED_COLUMNS = ("mhc", "peptide", "tcr")


@dataclass(frozen=True)
class Triple:
    mhc: str
    peptide: str
    tcr: str

    @property
    def context(self):
        return (self.mhc, self.peptide)


@dataclass
class SplitSet:
    train: list = field(default_factory=list)
    valid: list = field(default_factory=list)
    test: list = field(default_factory=list)
    context_map: dict = field(default_factory=dict)  # context -> split name

    def counts(self):
        return {"train": len(self.train), "valid": len(self.valid),
                "test": len(self.test)}


def _clean_field(value: str, column: str, line_no: int) -> str:
    value = value.strip().upper()
    if not value:
        raise MalformedRow(line_no, f"empty {column}")
    for ch in value:
        if ch in RESIDUES:
            continue
        if ch.isalpha():
            raise UnknownResidue(ch, f"{column} (line {line_no})")
        raise MalformedRow(line_no, f"invalid character {ch!r} in {column}")
    return value


def load_tsv(path) -> list:
    """Parse and validate triples; duplicate rows are preserved."""
    with open(path, encoding="utf-8", newline="") as f:
        lines = f.read().splitlines()
    if not lines:
        raise MissingColumn(f"{path}: empty file")
    header = [h.strip().lower() for h in lines[0].split("\t")]
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise MissingColumn(f"{path}: missing columns {missing}")
    cols = {c: header.index(c) for c in REQUIRED_COLUMNS}
    triples = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < len(header):
            raise MalformedRow(line_no, f"expected {len(header)} columns, got {len(parts)}")
        mhc = _clean_field(parts[cols["mhc"]], "mhc", line_no)
        peptide = _clean_field(parts[cols["peptide"]], "peptide", line_no)
        tcr = _clean_field(parts[cols["tcr"]], "tcr", line_no)
        if len(tcr) > MAX_TCR_LEN:
            raise MalformedRow(line_no, f"tcr longer than {MAX_TCR_LEN} residues")
        triples.append(Triple(mhc=mhc, peptide=peptide, tcr=tcr))
    return triples


def largest_remainder(n: int, ratios) -> list:
    """Apportion n into integer counts proportional to ratios."""
    total = sum(ratios)
    quotas = [n * r / total for r in ratios]
    counts = [int(q) for q in quotas]
    short = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (counts[i] - quotas[i], i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def split_contexts(triples, ratios=(7, 1, 2), seed: int = 0) -> SplitSet:
    """Partition distinct context keys by seeded shuffle + largest remainder."""
    contexts = sorted({t.context for t in triples})
    if len(contexts) < 10:
        raise TooFewContexts(f"need at least 10 distinct contexts, got {len(contexts)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(contexts))
    shuffled = [contexts[i] for i in order]
    n_train, n_valid, n_test = largest_remainder(len(contexts), ratios)
    assignment = {}
    for key in shuffled[:n_train]:
        assignment[key] = "train"
    for key in shuffled[n_train:n_train + n_valid]:
        assignment[key] = "valid"
    for key in shuffled[n_train + n_valid:]:
        assignment[key] = "test"
    out = SplitSet(context_map=assignment)
    for t in triples:
        getattr(out, assignment[t.context]).append(t)
    return out


def split_contexts_strict(triples, ratios=(7, 1, 2), seed: int = 0) -> SplitSet:
    """Stricter split: MHC and peptide sets are also disjoint across splits.

    Contexts sharing an MHC or a peptide are grouped into connected
    components; whole components are dealt to the split furthest below its
    target context count. Ratios are approximate when components are few.
    """
    contexts = sorted({t.context for t in triples})
    if len(contexts) < 10:
        raise TooFewContexts(f"need at least 10 distinct contexts, got {len(contexts)}")
    parent = list(range(len(contexts)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[rj] = ri

    by_mhc, by_pep = {}, {}
    for i, (mhc, pep) in enumerate(contexts):
        by_mhc.setdefault(mhc, []).append(i)
        by_pep.setdefault(pep, []).append(i)
    for group in list(by_mhc.values()) + list(by_pep.values()):
        for i in group[1:]:
            union(group[0], i)
    components = {}
    for i in range(len(contexts)):
        components.setdefault(find(i), []).append(i)
    comps = sorted(components.values(), key=lambda c: (-len(c), c[0]))
    rng = np.random.default_rng(seed)
    rng.shuffle(comps)
    comps.sort(key=len, reverse=True)  # stable: seeded order within equal sizes
    targets = largest_remainder(len(contexts), ratios)
    names = ["train", "valid", "test"]
    assigned = [0, 0, 0]
    assignment = {}
    for comp in comps:
        deficits = [targets[s] - assigned[s] for s in range(3)]
        s = max(range(3), key=lambda i: (deficits[i], -i))
        for i in comp:
            assignment[contexts[i]] = names[s]
        assigned[s] += len(comp)
    out = SplitSet(context_map=assignment)
    for t in triples:
        getattr(out, assignment[t.context]).append(t)
    return out


def write_triples(path, triples):
    with open(path, "w", encoding="utf-8") as f:
        f.write("mhc\tpeptide\ttcr\n")
        for t in triples:
            f.write(f"{t.mhc}\t{t.peptide}\t{t.tcr}\n")


def write_splits(splits: SplitSet, outdir, seed: int, ratios, strict: bool = False):
    """Write train/valid/test TSVs plus a manifest of the split recipe."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in ("train", "valid", "test"):
        p = outdir / f"{name}.tsv"
        write_triples(p, getattr(splits, name))
        paths[name] = str(p)
    manifest = {
        "seed": seed,
        "ratios": list(ratios),
        "strict": strict,
        "counts": splits.counts(),
        "context_counts": {
            name: sum(1 for v in splits.context_map.values() if v == name)
            for name in ("train", "valid", "test")
        },
    }
    with open(outdir / "split_manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return paths
