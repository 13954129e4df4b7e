import numpy as np
import pytest

from tcrgen.dataio import Triple
from tcrgen.model import ModelConfig
from tcrgen.vocab import AMINO_ACIDS, build_vocab

HYDROPHOBIC = "ILVFM"
POLAR = "DEKRN"

# bundled demo corpus: (actual, generated, lev, sim, lcs)
GOLDEN_PAIRS = [
    ("CASSPGTVAYEQYF", "CASSPGTAYEQYF", 1, 0.963, 13),
    ("CASSQSPGGMQYF", "CASSQSPGGTQYF", 1, 0.923, 12),
    ("CASSLQGGNYGYTF", "CASSPQGGNYGYTF", 1, 0.929, 13),
    ("CASSPQTGTIYGYTGF", "CASSPTGTGYGYTF", 3, 0.867, 13),
    ("CASSLGPNTGELFF", "CASSLAGNTGELFF", 2, 0.929, 13),
    ("CASSDRSSYEQYF", "CASSIRSSYEQYF", 1, 0.923, 12),
    ("CASSGQGYGYAF", "CASSGQGYGYTF", 1, 0.917, 11),
    ("CASSLGTSAYEQYF", "CASSLGGGSYEQYF", 3, 0.857, 12),
    ("CASSFTGLGQPQHF", "CASSFGGLGQPQHF", 1, 0.929, 13),
    ("CASSQVLGFSYEQYF", "CASSLGGGSYEQYF", 4, 0.828, 12),
]


def random_residues(rng, n):
    return "".join(rng.choice(list(AMINO_ACIDS), size=n))


def make_triples(n_contexts, seed=0, per_context=1, phys_signal=False,
                 mhc_len=(8, 13), pep_len=(7, 10)):
    """Synthetic corpus; with phys_signal the receptor core tracks peptide
    hydrophobicity so the descriptor channel carries usable information."""
    from tcrgen.physchem import DescriptorTable
    rng = np.random.default_rng(seed)
    table = DescriptorTable() if phys_signal else None
    triples = []
    for _ in range(n_contexts):
        mhc = random_residues(rng, int(rng.integers(*mhc_len)))
        pep = random_residues(rng, int(rng.integers(*pep_len)))
        for _ in range(per_context):
            core_len = int(rng.integers(5, 9))
            if phys_signal:
                hydro = float(np.mean([table.raw(c)[3] for c in pep]))
                alphabet = HYDROPHOBIC if hydro > 0 else POLAR
                core = "".join(rng.choice(list(alphabet), size=core_len))
            else:
                core = random_residues(rng, core_len)
            triples.append(Triple(mhc=mhc, peptide=pep, tcr="CASS" + core + "F"))
    return triples


def write_triples_tsv(path, triples):
    with open(path, "w") as f:
        f.write("mhc\tpeptide\ttcr\n")
        for t in triples:
            f.write(f"{t.mhc}\t{t.peptide}\t{t.tcr}\n")
    return str(path)


def tiny_config(**overrides):
    base = dict(d_t=8, d_p=4, d_s=4, n_head=2, d_ff=32,
                max_src_len=16, max_tgt_len=10, seed=0)
    base.update(overrides)
    return ModelConfig(**base)


def conditioned_params(model, seed=11, scale=0.5):
    """Redraw parameters at O(1/sqrt(fan-in)) scale; keeps gradient checks
    well conditioned without touching the production init."""
    rng = np.random.default_rng(seed)
    for name, p in model.params.items():
        if name.endswith(".g"):
            p[:] = 1.0 + rng.normal(0.0, 0.1, p.shape)
        elif p.ndim >= 2:
            p[:] = rng.normal(0.0, scale / np.sqrt(p.shape[0]), p.shape)
        else:
            p[:] = rng.normal(0.0, 0.05, p.shape)
    return model


@pytest.fixture(scope="session")
def vocab():
    return build_vocab()


@pytest.fixture(scope="session")
def blosum():
    from tcrgen.metrics import load_blosum62
    return load_blosum62()
