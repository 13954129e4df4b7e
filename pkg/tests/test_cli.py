import json

import pytest

from conftest import GOLDEN_PAIRS, make_triples, write_triples_tsv
from tcrgen.checkpoint import load_checkpoint
from tcrgen.cli import main


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    triples = make_triples(24, seed=30)
    path = write_triples_tsv(root / "all.tsv", triples)
    assert main(["split", "--in", path, "--out-dir", str(root / "splits"),
                 "--seed", "3"]) == 0
    return root


def test_split_outputs_and_manifest(corpus):
    splits = corpus / "splits"
    for name in ("train.tsv", "valid.tsv", "test.tsv",
                 "split_manifest.json", "manifest.json"):
        assert (splits / name).exists()
    manifest = json.loads((splits / "manifest.json").read_text())
    assert manifest["command"] == "split"
    assert manifest["seeds"] == {"seed": 3}
    assert "descriptor_sha256" in manifest


@pytest.fixture(scope="module")
def checkpoint(corpus):
    out = corpus / "run" / "model.ckpt"
    rc = main(["train", "--train", str(corpus / "splits" / "train.tsv"),
               "--valid", str(corpus / "splits" / "valid.tsv"),
               "--out", str(out), "--seed", "1",
               "--d-t", "8", "--d-p", "4", "--d-s", "4", "--n-head", "2",
               "--d-ff", "32", "--max-src-len", "26",
               "--max-epochs", "2", "--batch-size", "8"])
    assert rc == 0
    return out


def test_train_outputs(checkpoint):
    assert checkpoint.exists()
    assert checkpoint.with_suffix(".report.json").exists()
    assert checkpoint.with_suffix(".manifest.json").exists()
    assert (checkpoint.parent / "model_curves.png").exists()
    report = json.loads(checkpoint.with_suffix(".report.json").read_text())
    assert len(report["epochs"]) == 2
    cfg, params, header, _ = load_checkpoint(checkpoint)
    assert cfg.phys_enabled is True


def test_train_no_phys_records_flag(corpus):
    out = corpus / "run" / "ablated.ckpt"
    rc = main(["train", "--train", str(corpus / "splits" / "train.tsv"),
               "--valid", str(corpus / "splits" / "valid.tsv"),
               "--out", str(out), "--seed", "1", "--no-phys",
               "--d-t", "8", "--d-p", "4", "--d-s", "4", "--n-head", "2",
               "--d-ff", "32", "--max-src-len", "26",
               "--max-epochs", "1", "--batch-size", "8", "--no-figures"])
    assert rc == 0
    cfg, params, _, _ = load_checkpoint(out)
    assert cfg.phys_enabled is False
    assert "fuse.w_phys" not in params


def test_generate_idempotent(corpus, checkpoint):
    contexts = corpus / "contexts.tsv"
    with open(corpus / "splits" / "test.tsv") as f:
        lines = f.read().splitlines()
    with open(contexts, "w") as f:
        f.write("mhc\tpeptide\n")
        for line in lines[1:3]:
            mhc, pep, _ = line.split("\t")
            f.write(f"{mhc}\t{pep}\n")
    outs = []
    for run in range(2):
        out = corpus / f"gen{run}.tsv"
        rc = main(["generate", "--checkpoint", str(checkpoint),
                   "--contexts", str(contexts), "--out", str(out),
                   "--seed", "5", "--n-starts", "4", "--l-min", "1",
                   "--pool", "wide",
                   "--exclude", str(corpus / "splits" / "train.tsv")])
        assert rc == 0
        assert out.with_suffix(".manifest.json").exists()
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    header = outs[0].decode().splitlines()[0]
    assert header == "mhc\tpeptide\trank\tsequence\tlogprob\te_llh\tprovenance"


def test_evaluate_demo_matches_golden(corpus):
    outdir = corpus / "eval"
    assert main(["evaluate", "--demo", "--out-dir", str(outdir)]) == 0
    rows = (outdir / "per_pair.tsv").read_text().splitlines()[1:]
    lev = [int(r.split("\t")[4]) for r in rows]
    lcs = [int(r.split("\t")[6]) for r in rows]
    assert lev == [g[2] for g in GOLDEN_PAIRS]
    assert lcs == [g[4] for g in GOLDEN_PAIRS]
    assert (outdir / "report.json").exists()
    assert (outdir / "manifest.json").exists()
    assert (outdir / "metrics_hist.png").exists()
    assert (outdir / "metrics_by_mhc.png").exists()
    assert (outdir / "metrics_by_peptide.png").exists()


def test_baseline_ann_shares_schema(corpus):
    contexts = corpus / "contexts.tsv"
    out = corpus / "ann.tsv"
    rc = main(["baseline", "ann", "--train", str(corpus / "splits" / "train.tsv"),
               "--contexts", str(contexts), "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "mhc\tpeptide\trank\tsequence\tlogprob\te_llh\tprovenance"
    train_receptors = {line.split("\t")[2]
                       for line in (corpus / "splits" / "train.tsv")
                       .read_text().splitlines()[1:]}
    for line in lines[1:]:
        assert line.split("\t")[3] in train_receptors


def test_config_file_precedence(corpus, checkpoint, tmp_path):
    # defaults < config file < explicit flags
    cfg_file = tmp_path / "gen.json"
    cfg_file.write_text(json.dumps(
        {"generate": {"n_starts": 2, "l_min": 1, "pool": "wide"}}))
    out = tmp_path / "g.tsv"
    rc = main(["generate", "--checkpoint", str(checkpoint),
               "--contexts", str(corpus / "contexts.tsv"), "--out", str(out),
               "--seed", "5", "--config", str(cfg_file), "--n-starts", "3"])
    assert rc == 0
    manifest = json.loads(out.with_suffix(".manifest.json").read_text())
    resolved = manifest["config"]["generate"]
    assert resolved["n_starts"] == 3      # flag beats file
    assert resolved["l_min"] == 1         # file beats default
    assert resolved["pool"] == "wide"


def test_domain_error_exit_code(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("mhc\tpeptide\ttcr\nAC1\tGHIK\tCASSF\n")
    rc = main(["split", "--in", str(bad), "--out-dir", str(tmp_path / "o"),
               "--seed", "1"])
    assert rc == 1


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_seed_required():
    with pytest.raises(SystemExit):
        main(["split", "--in", "x.tsv", "--out-dir", "y"])
