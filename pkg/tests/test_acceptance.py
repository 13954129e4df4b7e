"""Acceptance suite: one test per shipped criterion, each printing a
PASS/FAIL line (run with ``pytest tests/test_acceptance.py -v -s``)."""

import functools
import itertools
import time

import numpy as np
import pytest

from conftest import (GOLDEN_PAIRS, conditioned_params, make_triples,
                      random_residues, tiny_config, write_triples_tsv)
from tcrgen.cli import main
from tcrgen.checkpoint import load_checkpoint
from tcrgen.dataio import largest_remainder, split_contexts
from tcrgen.generate import (GenConfig, beam_search, generate_for_context,
                             greedy_decode)
from tcrgen.metrics import calibrate_similarity, evaluate, lcs_ratio
from tcrgen.model import Model, ModelConfig, pack_batch
from tcrgen.physchem import DescriptorTable
from tcrgen.train import (TrainConfig, adamw_step, clip_gradients, cosine_lr,
                          init_adamw_state, perplexity, train)
from tcrgen.vocab import build_vocab, encode_source, encode_target

PASS = "ACCEPTANCE {n} PASS: {msg}"


def report(n, msg):
    print("\n" + PASS.format(n=n, msg=msg))


# ---------------------------------------------------------------------------
def test_criterion_1_metric_golden_corpus():
    pairs = [(a, g) for a, g, *_ in GOLDEN_PAIRS]
    t0 = time.time()
    rep = evaluate(pairs)
    elapsed = time.time() - t0
    lev = [r.levenshtein for r in rep.per_pair]
    lcs = [r.lcs for r in rep.per_pair]
    assert lev == [1, 1, 1, 3, 2, 1, 1, 3, 1, 4]
    assert lcs == [13, 12, 13, 13, 13, 12, 11, 12, 13, 12]
    assert elapsed < 1.0

    targets = [sim for *_, sim, _ in GOLDEN_PAIRS]
    cal = calibrate_similarity(pairs, targets)
    if cal.matched:
        msg = f"similarity matched within 0.01 by {cal.best}"
    else:
        lcs_err = max(abs(lcs_ratio(a, g) - t)
                      for (a, g), t in zip(pairs, targets))
        msg = (f"Lev/LCS exact in {elapsed:.2f}s; similarity NOT reproducible "
               f"by any alignment convention (best {cal.best}, max err "
               f"{cal.max_abs_err:.3f} > 0.01) - reported, not forced; "
               f"reference column equals 2*LCS/(|a|+|b|) to {lcs_err:.4f}")
        assert cal.note
    report(1, msg)


# ---------------------------------------------------------------------------
def lev_oracle(a, b):
    @functools.lru_cache(maxsize=None)
    def rec(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(rec(i - 1, j - 1) + (a[i - 1] != b[j - 1]),
                   rec(i - 1, j) + 1,
                   rec(i, j - 1) + 1)
    return rec(len(a), len(b))


def lcs_oracle(a, b):
    def is_subseq(u, s):
        it = iter(s)
        return all(c in it for c in u)
    best = 0
    for bits in range(1 << len(a)):
        u = [a[i] for i in range(len(a)) if bits >> i & 1]
        if len(u) > best and is_subseq(u, b):
            best = len(u)
    return best


def test_criterion_2_oracle_equivalence():
    from tcrgen.metrics import lcs_len, levenshtein
    alpha = "ACGT"
    t0 = time.time()
    mism = 0
    # full enumeration of all pairs with lengths <= 4
    short = [""]
    for length in range(1, 5):
        short += ["".join(c) for c in itertools.product(alpha, repeat=length)]
    for a in short:
        for b in short:
            if levenshtein(a, b) != lev_oracle(a, b):
                mism += 1
            if lcs_len(a, b) != lcs_oracle(a, b):
                mism += 1
    n_full = len(short) ** 2
    # 1e5 random pairs with lengths <= 7
    rng = np.random.default_rng(2024)
    for _ in range(100_000):
        a = "".join(rng.choice(list(alpha), size=int(rng.integers(0, 8))))
        b = "".join(rng.choice(list(alpha), size=int(rng.integers(0, 8))))
        if levenshtein(a, b) != lev_oracle(a, b):
            mism += 1
        if lcs_len(a, b) != lcs_oracle(a, b):
            mism += 1
    assert mism == 0
    report(2, f"{n_full} enumerated + 100000 random pairs, "
              f"0 mismatches in {time.time() - t0:.0f}s")


# ---------------------------------------------------------------------------
def test_criterion_3_gradient_correctness():
    vocab = build_vocab()
    cfg = ModelConfig(d_t=8, d_p=4, d_s=4, n_head=1, n_enc=2, n_dec=2,
                      d_ff=32, max_src_len=12, max_tgt_len=10, seed=0)
    model = conditioned_params(Model(cfg), seed=11, scale=0.5)
    src = encode_source("ACDEFG", "HIK", vocab, max_len=12).ids   # len 12
    tgt = encode_target("CASSLD", vocab).ids                      # len 8
    batch = pack_batch([(src, tgt)], vocab.pad_id)
    src_b, tgt_in, labels, mask = batch

    t0 = time.time()
    loss, grads = model.loss_and_grad(src_b, tgt_in, labels, mask, 0.1)
    h = 1e-4
    checked = 0
    worst = 0.0
    for name, p in model.params.items():
        flat = p.ravel()
        g = grads[name].ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = model.loss_only(src_b, tgt_in, labels, mask, 0.1)
            flat[i] = orig - h
            lm = model.loss_only(src_b, tgt_in, labels, mask, 0.1)
            flat[i] = orig
            num = (lp - lm) / (2 * h)
            err = abs(num - g[i])
            tol = max(1e-8, 1e-4 * max(abs(num), abs(g[i])))
            assert err <= tol, f"{name}[{i}]: analytic {g[i]} numeric {num}"
            worst = max(worst, err / max(abs(num), abs(g[i]), 1e-8))
            checked += 1
    elapsed = time.time() - t0
    assert elapsed < 120.0
    report(3, f"{checked} components within tolerance "
              f"(worst floored rel err {worst:.1e}) in {elapsed:.0f}s")


# ---------------------------------------------------------------------------
def test_criterion_4_causality():
    vocab = build_vocab()
    rng = np.random.default_rng(404)
    model = Model(tiny_config(seed=40))
    violations = 0
    for trial in range(100):
        mhc = random_residues(rng, int(rng.integers(3, 9)))
        pep = random_residues(rng, int(rng.integers(3, 6)))
        tcr = random_residues(rng, int(rng.integers(4, 8)))
        src = encode_source(mhc, pep, vocab, model.cfg.max_src_len).ids
        tgt = encode_target(tcr, vocab).ids
        src_b, tgt_in, labels, mask = pack_batch([(src, tgt)], vocab.pad_id)
        logits1, _, _ = model.forward(src_b, tgt_in)
        j = int(rng.integers(1, tgt_in.shape[1]))
        mod = tgt_in.copy()
        mod[0, j] = vocab.id("W") if mod[0, j] != vocab.id("W") else vocab.id("A")
        logits2, _, _ = model.forward(src_b, mod)
        if not np.array_equal(logits1[0, :j], logits2[0, :j]):
            violations += 1
    assert violations == 0
    report(4, "100/100 perturbations left earlier logits bit-identical")


# ---------------------------------------------------------------------------
def test_criterion_5_overfit_capacity():
    vocab = build_vocab()
    rng = np.random.default_rng(77)
    triples = make_triples(32, seed=77, mhc_len=(8, 13), pep_len=(7, 10))
    max_src = 24
    pairs = [(encode_source(t.mhc, t.peptide, vocab, max_src).ids,
              encode_target(t.tcr, vocab).ids) for t in triples]
    src, tgt_in, labels, mask = pack_batch(pairs, vocab.pad_id)

    cfg = ModelConfig(d_t=32, d_p=16, d_s=16, n_head=4, d_ff=256,
                      max_src_len=max_src, seed=5)
    model = Model(cfg)
    # memorization-capacity run: smoothing off so the target is plain NLL
    tcfg = TrainConfig(lr_peak=1e-3, label_smoothing=0.0, seed=5)
    state = init_adamw_state(model.params)
    t0 = time.time()
    hit_step = None
    loss = float("inf")
    for step in range(2000):
        loss, grads = model.loss_and_grad(src, tgt_in, labels, mask, 0.0)
        if loss < 0.1:
            hit_step = step
            break
        clip_gradients(grads, tcfg.clip_norm)
        adamw_step(model.params, grads, state,
                   cosine_lr(step, 2000, 100, tcfg.lr_peak), tcfg)
    assert hit_step is not None, f"loss still {loss:.3f} after 2000 steps"
    train_ppl = perplexity(model, pairs)
    assert train_ppl < 1.2
    reproduced = sum(
        greedy_decode(model, encode_source(t.mhc, t.peptide, vocab, max_src).ids)
        == t.tcr for t in triples)
    elapsed = time.time() - t0
    assert reproduced >= 29  # >= 90% of 32
    assert elapsed < 600.0
    report(5, f"loss {loss:.3f} < 0.1 at step {hit_step} (train ppl "
              f"{train_ppl:.3f}); greedy reproduced {reproduced}/32 "
              f"receptors in {elapsed:.0f}s")


# ---------------------------------------------------------------------------
def test_criterion_6_ablation_contract(tmp_path):
    triples = make_triples(24, seed=60)
    data = write_triples_tsv(tmp_path / "all.tsv", triples)
    assert main(["split", "--in", data, "--out-dir", str(tmp_path / "s"),
                 "--seed", "2"]) == 0

    common = ["--train", str(tmp_path / "s" / "train.tsv"),
              "--valid", str(tmp_path / "s" / "valid.tsv"),
              "--seed", "1", "--d-t", "8", "--d-p", "4", "--d-s", "4",
              "--n-head", "2", "--d-ff", "32", "--max-src-len", "26",
              "--max-epochs", "1", "--batch-size", "8", "--no-figures"]
    assert main(["train", "--out", str(tmp_path / "phys.ckpt")] + common) == 0

    reads_before = DescriptorTable.total_reads
    assert main(["train", "--out", str(tmp_path / "abl.ckpt"), "--no-phys"]
                + common) == 0
    # identical pipeline end-to-end on the ablated checkpoint
    contexts = tmp_path / "ctx.tsv"
    with open(tmp_path / "s" / "test.tsv") as f:
        rows = [ln.split("\t") for ln in f.read().splitlines()[1:3]]
    contexts.write_text("mhc\tpeptide\n" +
                        "".join(f"{m}\t{p}\n" for m, p, _ in rows))
    assert main(["generate", "--checkpoint", str(tmp_path / "abl.ckpt"),
                 "--contexts", str(contexts), "--out", str(tmp_path / "g.tsv"),
                 "--seed", "3", "--n-starts", "3", "--l-min", "1",
                 "--pool", "wide",
                 "--exclude", str(tmp_path / "s" / "train.tsv")]) == 0
    produced = (tmp_path / "g.tsv").read_text().splitlines()
    assert len(produced) > 1, "ablated pipeline produced no candidates"
    assert DescriptorTable.total_reads == reads_before, \
        "ablated run consulted the descriptor table"

    cfg_p, params_p, _, _ = load_checkpoint(tmp_path / "phys.ckpt")
    cfg_a, params_a, _, _ = load_checkpoint(tmp_path / "abl.ckpt")
    n_phys = sum(int(np.prod(p.shape)) for p in params_p.values())
    n_abl = sum(int(np.prod(p.shape)) for p in params_a.values())
    assert cfg_a.phys_enabled is False
    assert n_abl < n_phys
    report(6, f"no-phys: {n_abl} < {n_phys} params, 0 descriptor reads, "
              f"train/generate ran end-to-end")


# ---------------------------------------------------------------------------
def test_criterion_7_beam_search():
    vocab = build_vocab()
    # (a) beam-1 at T=1 equals greedy on 100 contexts
    rng = np.random.default_rng(700)
    matches = 0
    for trial in range(100):
        model = Model(tiny_config(seed=int(rng.integers(1 << 30))))
        model.params["head.b"][vocab.eos_id] = float(rng.uniform(-4, 0))
        mhc = random_residues(rng, int(rng.integers(3, 9)))
        pep = random_residues(rng, int(rng.integers(3, 6)))
        src = encode_source(mhc, pep, vocab, model.cfg.max_src_len).ids
        seq, _ = beam_search(model, src, 1.0, 1)
        matches += seq == greedy_decode(model, src)
    assert matches == 100

    # (b) sufficient width recovers the brute-force MAP on 50 toy instances
    allowed_res = [vocab.id(c) for c in "ACDE"]
    allowed = allowed_res + [vocab.eos_id]
    found = 0
    for seed in range(50):
        model = conditioned_params(Model(tiny_config(seed=seed)),
                                   seed=seed, scale=0.6)
        rng2 = np.random.default_rng(seed)
        mhc = random_residues(rng2, 6)
        pep = random_residues(rng2, 4)
        src = encode_source(mhc, pep, vocab, model.cfg.max_src_len).ids
        temperature = float(rng2.uniform(0.6, 1.0))
        bs_seq, bs_score = beam_search(model, src, temperature, 256,
                                       max_len=4, allowed_ids=allowed)
        bf_seq, bf_score = _batched_brute_force(model, src, allowed_res,
                                                temperature, max_len=4)
        found += bs_seq == bf_seq and abs(bs_score - bf_score) < 1e-9
    assert found == 50
    report(7, "beam-1 == greedy on 100/100 contexts; "
              "width-256 beam == brute-force MAP on 50/50 toy instances")


def _batched_brute_force(model, src_ids, allowed_res, temperature, max_len):
    """Score every sequence over the restricted alphabet by teacher forcing."""
    vocab = model.vocab
    seqs = [()]
    for length in range(1, max_len + 1):
        seqs += list(itertools.product(allowed_res, repeat=length))
    pad = vocab.pad_id
    tgt_in = np.full((len(seqs), max_len + 1), pad, dtype=np.int64)
    for i, combo in enumerate(seqs):
        tgt_in[i, 0] = vocab.sos_id
        tgt_in[i, 1:1 + len(combo)] = combo
    src = np.repeat(np.asarray(src_ids)[None, :], len(seqs), axis=0)
    logits, _, _ = model.forward(src, tgt_in)
    z = logits / temperature
    z = z - z.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    best = None
    for i, combo in enumerate(seqs):
        score = sum(float(logp[i, j, tok]) for j, tok in enumerate(combo))
        if len(combo) < max_len:
            score += float(logp[i, len(combo), vocab.eos_id])
        seq = "".join(vocab.symbols[t] for t in combo)
        key = (-score, seq)
        if best is None or key < best[0]:
            best = (key, seq, score)
    return best[1], best[2]


# ---------------------------------------------------------------------------
def test_criterion_8_pipeline_determinism_and_containment():
    model = conditioned_params(Model(tiny_config(seed=80)), seed=80, scale=0.6)
    model.params["head.b"][model.vocab.eos_id] = -3.0
    exclusion = frozenset({"SSSSSS"})
    cfg = GenConfig(n_starts=8, seed=8, pool="wide", l_min=3, l_max=26, k=6)
    runs = [generate_for_context(model, "ACDEFGH", "IKLMN", cfg, exclusion)
            for _ in range(2)]
    s1 = [(c.sequence, c.e_llh) for c in runs[0].selected]
    s2 = [(c.sequence, c.e_llh) for c in runs[1].selected]
    assert s1 == s2 and len(s1) > 1
    for c in runs[0].selected:
        assert cfg.l_min <= len(c.sequence) <= cfg.l_max
        assert c.sequence not in exclusion
    mmr_cfg = GenConfig(n_starts=8, seed=8, pool="wide", l_min=3, l_max=26,
                        k=6, selection="mmr", mmr_lambda=1.0)
    mmr = generate_for_context(model, "ACDEFGH", "IKLMN", mmr_cfg, exclusion)
    assert [c.sequence for c in mmr.selected] == [c.sequence for c in runs[0].selected]
    report(8, f"identical S_K across runs ({len(s1)} members, all legal); "
              f"MMR(lambda=1) == unique-ranked")


# ---------------------------------------------------------------------------
def test_criterion_9_split_hygiene():
    triples = make_triples(500, seed=90)
    assert len({t.context for t in triples}) == 500
    for seed in range(100):
        splits = split_contexts(triples, (7, 1, 2), seed=seed)
        ctx = [{t.context for t in bucket}
               for bucket in (splits.train, splits.valid, splits.test)]
        assert not (ctx[0] & ctx[1] or ctx[0] & ctx[2] or ctx[1] & ctx[2])
        assert [len(c) for c in ctx] == largest_remainder(500, (7, 1, 2))
        assert [len(c) for c in ctx] == [350, 50, 100]
    report(9, "100 seeded splits: contexts pairwise disjoint, "
              "counts exactly 350/50/100")


# ---------------------------------------------------------------------------
def test_criterion_10_directional_smoke():
    """Non-gating: tiny-scale stand-in for the full-corpus comparison."""
    vocab = build_vocab()
    triples = make_triples(500, seed=100, per_context=4, phys_signal=True)
    assert len(triples) == 2000
    wins = 0
    results = []
    for seed in range(5):
        splits = split_contexts(triples, (7, 1, 2), seed=seed)
        enc = lambda ts: [(encode_source(t.mhc, t.peptide, vocab, 26).ids,
                           encode_target(t.tcr, vocab).ids) for t in ts]
        tr, va = enc(splits.train), enc(splits.valid)
        ppl = {}
        for phys in (True, False):
            cfg = ModelConfig(d_t=16, d_p=8, d_s=8, n_head=4, d_ff=128,
                              max_src_len=26, phys_enabled=phys, seed=seed)
            model = Model(cfg)
            tcfg = TrainConfig(lr_peak=1e-3, batch_size=128, max_epochs=3,
                               warmup_steps=5, seed=seed)
            _, rep = train(model, tr, va, tcfg)
            ppl[phys] = rep.best_val_ppl
        results.append((seed, ppl[True], ppl[False]))
        wins += ppl[True] <= ppl[False]
    detail = "; ".join(f"seed {s}: phys {p:.3f} vs ablated {a:.3f}"
                       for s, p, a in results)
    outcome = "PASS" if wins >= 3 else "LOGGED (non-gating failure)"
    report(10, f"phys <= ablated in {wins}/5 seeds [{outcome}] - {detail}")
    # explicitly non-gating: the result is logged either way


# ---------------------------------------------------------------------------
def test_criterion_11_physchem_sanity():
    from tcrgen.model import attn_phys_decomposition
    from tcrgen.vocab import AMINO_ACIDS
    table = DescriptorTable()
    z = np.stack([table.zscore(aa) for aa in AMINO_ACIDS])
    assert np.allclose(z.mean(axis=0), 0.0, atol=1e-10)
    assert np.allclose(z.std(axis=0), 1.0, atol=1e-10)
    model = Model(tiny_config(seed=110))
    pairs = [("F", "W"), ("D", "K"), ("A", "A"), ("X", "R")]
    for i, j in pairs:
        assert attn_phys_decomposition(model, table, i, j) == pytest.approx(
            attn_phys_decomposition(model, table, j, i), abs=1e-15)
    model.params["fuse.w_phys"][:] = 0.0
    assert all(attn_phys_decomposition(model, table, i, j) == 0.0
               for i, j in pairs)
    report(11, "z-table mean 0 / std 1 within 1e-10; diagnostic symmetric "
               "and zero at W_phys = 0")
