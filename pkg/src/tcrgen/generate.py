"""Four-stage inference: multi-start temperature-beam search, legality
filtering, length-normalized likelihood ranking, and diversity selection.

Beam expansion is restricted to residue tokens plus EOS; scores are sums of
temperature-scaled full-softmax log-probabilities, so a returned path's
score equals its teacher-forced recomputation at the same temperature.
Ranking (``e_llh``) always rescales at temperature 1.
"""

from dataclasses import dataclass, field, asdict

import numpy as np

from . import metrics
from .errors import EmptySequence
from .model import Model, token_nll
from .vocab import encode_source, encode_target


@dataclass
class GenConfig:
    n_starts: int = 20
    t_min: float = 0.6
    t_max: float = 1.0
    beam_min: int = 3
    beam_max: int = 10
    l_min: int = 10
    l_max: int = 26
    k: int = 20
    selection: str = "unique"   # "unique" | "mmr"
    mmr_lambda: float = 0.5
    pool: str = "map"           # "map" (MAP path per start) | "wide" (all finished)
    pool_cap: int = 1024
    max_len: int = 26
    seed: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class Candidate:
    sequence: str
    logprob: float        # teacher-forced total log-likelihood at T=1
    e_llh: float          # -logprob / (len + 1), EOS counted
    provenance: tuple     # (start index, temperature, beam width)


@dataclass
class CandidateSet:
    raw: list = field(default_factory=list)     # (sequence, search score, provenance)
    legal: list = field(default_factory=list)
    selected: list = field(default_factory=list)  # Candidate, rank order


def _log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _default_allowed(vocab):
    return list(vocab.residue_ids) + [vocab.eos_id]


def beam_search(model: Model, src_ids, temperature: float, beam_width: int,
                max_len: int = 26, allowed_ids=None, return_all: bool = False):
    """Length-capped beam search over decoder steps.

    Hypotheses that emit EOS (or hit the length cap) freeze but keep
    competing for beam slots on total score, so with beam_width 1 the search
    follows the per-step argmax exactly like greedy decoding. Scores are
    summed temperature-scaled log-probabilities; ties break toward the
    lexicographically smaller sequence.

    Returns the best finished (sequence, score); with ``return_all`` the
    search runs until every slot freezes and returns them all, best first.
    """
    vocab = model.vocab
    if allowed_ids is None:
        allowed_ids = _default_allowed(vocab)
    allowed = np.asarray(sorted(allowed_ids), dtype=np.int64)
    max_len = min(max_len, model.cfg.max_tgt_len - 2)  # positional capacity
    eos = vocab.eos_id
    src = np.asarray(src_ids, dtype=np.int64)[None, :]
    h_src, cross_mask, _, _ = model.encode(src)

    # slot: (sequence string, token ids incl. SOS, score, finished)
    beams = [("", (vocab.sos_id,), 0.0, False)]
    for _ in range(max_len + 1):
        live = [s for s in beams if not s[3]]
        if not live:
            break
        if not return_all and beams[0][3]:
            break  # scores only decrease, nothing can overtake a finished top
        tgt_in = np.asarray([ids for _, ids, _, _ in live], dtype=np.int64)
        h = np.repeat(h_src, len(live), axis=0)
        cm = np.repeat(cross_mask, len(live), axis=0)
        logits, _, _ = model.decode(tgt_in, h, cm)
        logp = _log_softmax(logits[:, -1, :] / temperature)[:, allowed]
        candidates = [s for s in beams if s[3]]
        for (seq, ids, score, _), row in zip(live, logp):
            for tok, lp in zip(allowed, row):
                total = score + float(lp)
                if tok == eos:
                    candidates.append((seq, ids, total, True))
                else:
                    new_ids = (*ids, int(tok))
                    done = len(new_ids) - 1 == max_len  # cap: freeze, no EOS step
                    candidates.append((seq + vocab.symbols[tok], new_ids,
                                       total, done))
        candidates.sort(key=lambda s: (-s[2], s[0]))
        beams = candidates[:beam_width]
    finished = [(seq, score) for seq, _, score, done in beams if done]
    finished.sort(key=lambda e: (-e[1], e[0]))
    if return_all:
        return finished
    return finished[0]


def greedy_decode(model: Model, src_ids, max_len: int = 26, allowed_ids=None) -> str:
    """Argmax decoding; ties go to the lowest token id."""
    vocab = model.vocab
    if allowed_ids is None:
        allowed_ids = _default_allowed(vocab)
    allowed = np.asarray(sorted(allowed_ids), dtype=np.int64)
    max_len = min(max_len, model.cfg.max_tgt_len - 2)  # positional capacity
    src = np.asarray(src_ids, dtype=np.int64)[None, :]
    h_src, cross_mask, _, _ = model.encode(src)
    ids = [vocab.sos_id]
    for _ in range(max_len):
        tgt_in = np.asarray([ids], dtype=np.int64)
        logits, _, _ = model.decode(tgt_in, h_src, cross_mask)
        tok = int(allowed[np.argmax(logits[0, -1, allowed])])
        if tok == vocab.eos_id:
            break
        ids.append(tok)
    return "".join(vocab.symbols[t] for t in ids[1:])


def multi_start(model: Model, src_ids, cfg: GenConfig):
    """n_starts beam searches with (T, b) drawn from a seeded stream.

    Returns the raw pool as (sequence, search score, (start, T, b)) tuples;
    duplicates allowed. In "wide" mode every finished beam of every start is
    kept, capped at pool_cap.
    """
    rng = np.random.default_rng(cfg.seed)
    pool = []
    for start in range(cfg.n_starts):
        temp = float(rng.uniform(cfg.t_min, cfg.t_max))
        width = int(rng.integers(cfg.beam_min, cfg.beam_max + 1))
        if cfg.pool == "wide":
            for seq, score in beam_search(model, src_ids, temp, width,
                                          cfg.max_len, return_all=True):
                pool.append((seq, score, (start, temp, width)))
        else:
            seq, score = beam_search(model, src_ids, temp, width, cfg.max_len)
            pool.append((seq, score, (start, temp, width)))
    return pool[:cfg.pool_cap]


def legality_filter(pool, exclusion, l_min: int, l_max: int):
    """Keep sequences inside the length bounds and absent from the index."""
    return [entry for entry in pool
            if l_min <= len(entry[0]) <= l_max and entry[0] not in exclusion]


def score_llh(model: Model, src_ids, sequence: str) -> float:
    """Teacher-forced negative mean log-likelihood at temperature 1.

    The EOS step counts in both the sum and the denominator.
    """
    if not sequence:
        raise EmptySequence("cannot score an empty sequence")
    tgt = encode_target(sequence, model.vocab).ids
    src = np.asarray(src_ids, dtype=np.int64)[None, :]
    tgt_in = tgt[None, :-1]
    labels = tgt[None, 1:]
    logits, _, _ = model.forward(src, tgt_in)
    mask = np.ones_like(labels, dtype=np.float64)
    nll = token_nll(logits, labels, mask)
    return float(nll.sum() / labels.shape[1])


def rank_candidates(model: Model, src_ids, legal_pool):
    """Distinct sequences of the legal pool as Candidates, best e_llh first.

    e_llh is a pure function of (sequence, context, params), so duplicates
    collapse to their first occurrence; ties order lexicographically.
    """
    seen = {}
    for seq, _, prov in legal_pool:
        if seq not in seen:
            seen[seq] = prov
    cands = []
    for seq, prov in seen.items():
        e = score_llh(model, src_ids, seq)
        cands.append(Candidate(sequence=seq, logprob=-e * (len(seq) + 1),
                               e_llh=e, provenance=prov))
    cands.sort(key=lambda c: (c.e_llh, c.sequence))
    return cands


def select_diverse(ranked, k: int, mode: str = "unique",
                   mmr_lambda: float = 0.5, matrix=None):
    """Final selection over a ranked (ascending e_llh) candidate list.

    "unique": first k distinct sequences in rank order. "mmr": greedy
    maximum-marginal-relevance with min-max-normalized relevance and the
    normalized local-alignment score as similarity; ties break by rank then
    lexicographically. mmr_lambda = 1 reduces to "unique".
    """
    distinct = []
    seen = set()
    for c in ranked:
        if c.sequence not in seen:
            seen.add(c.sequence)
            distinct.append(c)
    if mode == "unique" or len(distinct) <= 1:
        return distinct[:k]
    if mode != "mmr":
        raise ValueError(f"unknown selection mode {mode!r}")
    if matrix is None:
        matrix = metrics.load_blosum62()
    neg = np.array([-c.e_llh for c in distinct])
    span = neg.max() - neg.min()
    rel = np.ones_like(neg) if span == 0 else (neg - neg.min()) / span
    sim_cache = {}

    def sim(i, j):
        key = (min(i, j), max(i, j))
        if key not in sim_cache:
            sim_cache[key] = metrics.similarity_sw(
                distinct[key[0]].sequence, distinct[key[1]].sequence, matrix)
        return sim_cache[key]

    selected = []
    remaining = list(range(len(distinct)))
    while remaining and len(selected) < k:
        best = None
        for pos, i in enumerate(remaining):
            penalty = max((sim(i, j) for j in selected), default=0.0)
            score = mmr_lambda * rel[i] - (1.0 - mmr_lambda) * penalty
            key = (-score, i, distinct[i].sequence)  # rank then lexicographic
            if best is None or key < best[0]:
                best = (key, pos)
        selected.append(remaining.pop(best[1]))
    return [distinct[i] for i in selected]


def generate_for_context(model: Model, mhc: str, peptide: str, cfg: GenConfig,
                         exclusion=frozenset(), matrix=None) -> CandidateSet:
    """Run the full pipeline for one (MHC, peptide) context."""
    src = encode_source(mhc, peptide, model.vocab, model.cfg.max_src_len).ids
    out = CandidateSet()
    out.raw = multi_start(model, src, cfg)
    out.legal = legality_filter(out.raw, exclusion, cfg.l_min, cfg.l_max)
    ranked = rank_candidates(model, src, out.legal)
    out.selected = select_diverse(ranked, cfg.k, cfg.selection,
                                  cfg.mmr_lambda, matrix)
    return out


def build_exclusion_index(triples) -> frozenset:
    """Exact receptor strings of the training set."""
    return frozenset(t.tcr for t in triples)
