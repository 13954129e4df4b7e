"""Nearest-neighbour retrieval baseline.

For a query context the index returns the receptor of the most similar
training context under the normalized local-alignment score. Retrieval, not
generation: outputs always exist verbatim in the training set.
"""

from dataclasses import dataclass, field

from . import metrics
from .errors import EmptyIndex


@dataclass
class RetrievalIndex:
    contexts: list = field(default_factory=list)   # sorted context strings
    receptors: dict = field(default_factory=dict)  # context -> sorted receptor list

    @classmethod
    def build(cls, triples) -> "RetrievalIndex":
        receptors = {}
        for t in triples:
            receptors.setdefault(t.mhc + t.peptide, []).append(t.tcr)
        for key in receptors:
            receptors[key] = sorted(receptors[key])
        return cls(contexts=sorted(receptors), receptors=receptors)

    def __len__(self):
        return sum(len(v) for v in self.receptors.values())


def ann_retrieve(mhc: str, peptide: str, index: RetrievalIndex,
                 matrix=None) -> str:
    """Exhaustive scan; ties break lexicographically by context then receptor."""
    if not index.contexts:
        raise EmptyIndex("retrieval index is empty")
    if matrix is None:
        matrix = metrics.load_blosum62()
    query = mhc + peptide
    best_ctx, best_sim = None, -1.0
    for ctx in index.contexts:  # lexicographic order, so first max wins ties
        sim = metrics.similarity_sw(query, ctx, matrix)
        if sim > best_sim:
            best_ctx, best_sim = ctx, sim
    return index.receptors[best_ctx][0]
