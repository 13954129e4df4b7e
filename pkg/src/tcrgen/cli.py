"""Single entry point exposing train / generate / evaluate / baseline / split.

Configuration precedence is defaults < --config JSON file < explicit flags.
Every run writes exactly one JSON manifest alongside its outputs recording
the resolved configuration, seeds, paths, code version, the descriptor-file
checksum, and wall-clock time.
"""

import argparse
import json
import sys
import time
from dataclasses import fields
from pathlib import Path

from . import __version__, metrics, report
from .baseline import RetrievalIndex, ann_retrieve
from .checkpoint import load_checkpoint, save_checkpoint
from .dataio import load_tsv, split_contexts, split_contexts_strict, write_splits
from .errors import MissingColumn, TcrgenError, CheckpointError
from .generate import GenConfig, build_exclusion_index, generate_for_context
from .model import Model, ModelConfig
from .physchem import DescriptorTable, descriptor_file_checksum
from .train import TrainConfig, train
from .vocab import build_vocab, encode_source, encode_target


def _resolve_config(cls, args, section, flag_map):
    """defaults < config file section < explicitly passed flags.

    The JSON config file groups keys under named sections ("model",
    "train", "generate"); unknown keys inside a section are rejected.
    """
    values = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as f:
            loaded = json.load(f).get(section, {})
        names = {f.name for f in fields(cls)}
        unknown = set(loaded) - names
        if unknown:
            raise TcrgenError(f"unknown {section} config keys {sorted(unknown)}")
        values.update(loaded)
    for field_name, arg_name in flag_map.items():
        v = getattr(args, arg_name)
        if v is not None:
            values[field_name] = v
    return cls(**values)


def _write_manifest(path, command, config, seeds, inputs, outputs, t0, extra=None):
    payload = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": inputs,
        "outputs": outputs,
        "code_version": __version__,
        "descriptor_sha256": descriptor_file_checksum(),
        "wall_clock_s": round(time.time() - t0, 3),
    }
    if extra:
        payload.update(extra)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    return str(path)


def _encode_pairs(triples, vocab, max_src_len):
    return [(encode_source(t.mhc, t.peptide, vocab, max_src_len).ids,
             encode_target(t.tcr, vocab).ids) for t in triples]


def _load_contexts(path):
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    header = [h.strip().lower() for h in lines[0].split("\t")]
    for col in ("mhc", "peptide"):
        if col not in header:
            raise MissingColumn(f"{path}: missing column {col}")
    im, ip = header.index("mhc"), header.index("peptide")
    out = []
    for line in lines[1:]:
        if line.strip():
            parts = line.split("\t")
            out.append((parts[im].strip().upper(), parts[ip].strip().upper()))
    return out


# ---------------------------------------------------------------------------
# subcommands

MODEL_FLAGS = {"d_t": "d_t", "d_p": "d_p", "d_s": "d_s", "n_head": "n_head",
               "d_ff": "d_ff", "max_src_len": "max_src_len", "seed": "seed"}
TRAIN_FLAGS = {"lr_peak": "lr_peak", "beta1": "beta1", "beta2": "beta2",
               "weight_decay": "weight_decay", "batch_size": "batch_size",
               "max_epochs": "max_epochs", "warmup_steps": "warmup_steps",
               "clip_norm": "clip_norm", "patience": "patience",
               "label_smoothing": "label_smoothing", "seed": "seed"}
GEN_FLAGS = {"n_starts": "n_starts", "t_min": "t_min", "t_max": "t_max",
             "beam_min": "beam_min", "beam_max": "beam_max",
             "l_min": "l_min", "l_max": "l_max", "k": "k",
             "selection": "selection", "mmr_lambda": "mmr_lambda",
             "pool": "pool", "pool_cap": "pool_cap", "seed": "seed"}


def cmd_train(args):
    t0 = time.time()
    mcfg = _resolve_config(ModelConfig, args, "model", MODEL_FLAGS)
    if args.no_phys:
        mcfg.phys_enabled = False
    mcfg.seed = args.seed
    tcfg = _resolve_config(TrainConfig, args, "train", TRAIN_FLAGS)
    tcfg.seed = args.seed

    vocab = build_vocab()
    train_triples = load_tsv(args.train)
    valid_triples = load_tsv(args.valid)
    train_pairs = _encode_pairs(train_triples, vocab, mcfg.max_src_len)
    valid_pairs = _encode_pairs(valid_triples, vocab, mcfg.max_src_len)

    model = Model(mcfg)
    print(f"training: {len(train_pairs)} train / {len(valid_pairs)} valid triples, "
          f"{model.param_count()} parameters, phys={mcfg.phys_enabled}")
    best_params, train_report = train(model, train_pairs, valid_pairs, tcfg,
                                      log=print)
    print(f"stopped: {train_report.stop_reason} "
          f"(best epoch {train_report.best_epoch}, "
          f"val_ppl {train_report.best_val_ppl:.4f})")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, mcfg, best_params, vocab.symbols,
                    descriptor_file_checksum())
    report_path = out.with_suffix(".report.json")
    with open(report_path, "w", encoding="utf-8") as f:
        json.dump(train_report.to_dict(), f, indent=2, sort_keys=True)
    outputs = {"checkpoint": str(out), "report": str(report_path)}
    if not args.no_figures:
        outputs["figure"] = report.save_training_figure(
            train_report, out.parent, prefix=out.stem)
    _write_manifest(out.with_suffix(".manifest.json"), "train",
                    {"model": mcfg.to_dict(), "train": tcfg.to_dict()},
                    {"seed": args.seed},
                    {"train": args.train, "valid": args.valid},
                    outputs, t0)
    return 0


def _load_model(path) -> Model:
    cfg, params, header, _ = load_checkpoint(path)
    if cfg.phys_enabled:
        if header["descriptor_sha256"] != descriptor_file_checksum():
            raise CheckpointError(
                "descriptor table changed since this checkpoint was written")
        return Model(cfg, params=params, table=DescriptorTable())
    return Model(cfg, params=params)


def cmd_generate(args):
    t0 = time.time()
    gcfg = _resolve_config(GenConfig, args, "generate", GEN_FLAGS)
    gcfg.seed = args.seed
    model = _load_model(args.checkpoint)
    contexts = _load_contexts(args.contexts)
    exclusion = frozenset()
    if args.exclude:
        exclusion = build_exclusion_index(load_tsv(args.exclude))
    matrix = metrics.load_blosum62()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n_rows = 0
    with open(out, "w", encoding="utf-8") as f:
        f.write("mhc\tpeptide\trank\tsequence\tlogprob\te_llh\tprovenance\n")
        for mhc, peptide in contexts:
            result = generate_for_context(model, mhc, peptide, gcfg,
                                          exclusion, matrix)
            for rank, cand in enumerate(result.selected, start=1):
                start, temp, width = cand.provenance
                f.write(f"{mhc}\t{peptide}\t{rank}\t{cand.sequence}\t"
                        f"{cand.logprob:.6f}\t{cand.e_llh:.6f}\t"
                        f"start={start},T={temp:.3f},b={width}\n")
                n_rows += 1
    print(f"wrote {n_rows} candidates for {len(contexts)} contexts to {out}")
    _write_manifest(out.with_suffix(".manifest.json"), "generate",
                    {"generate": gcfg.to_dict()},
                    {"seed": args.seed},
                    {"checkpoint": args.checkpoint, "contexts": args.contexts,
                     "exclude": args.exclude},
                    {"candidates": str(out)}, t0)
    return 0


def _load_pairs_file(path):
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    header = [h.strip().lower() for h in lines[0].split("\t")]
    for col in ("actual", "generated"):
        if col not in header:
            raise MissingColumn(f"{path}: missing column {col}")
    idx = {c: header.index(c) for c in header}
    pairs, groups = [], []
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split("\t")
        pairs.append((parts[idx["actual"]].strip().upper(),
                      parts[idx["generated"]].strip().upper()))
        g = {}
        for key in ("mhc", "peptide"):
            if key in idx:
                g[key] = parts[idx[key]].strip()
        groups.append(g)
    return pairs, groups


def cmd_evaluate(args):
    t0 = time.time()
    if args.demo:
        from importlib import resources
        pairs_path = str(resources.files("tcrgen.data") / "demo_pairs.tsv")
    elif args.pairs:
        pairs_path = args.pairs
    else:
        raise TcrgenError("evaluate needs --pairs FILE or --demo")
    pairs, groups = _load_pairs_file(pairs_path)
    matrix = metrics.load_blosum62(gap_open=args.gap_open,
                                   gap_extend=args.gap_extend,
                                   path=args.matrix)
    rep = metrics.evaluate(pairs, matrix, groups)

    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    per_pair = outdir / "per_pair.tsv"
    with open(per_pair, "w", encoding="utf-8") as f:
        f.write("mhc\tpeptide\tactual\tgenerated\tlevenshtein\tsimilarity\tlcs\n")
        for row, g in zip(rep.per_pair, groups):
            f.write(f"{g.get('mhc', '')}\t{g.get('peptide', '')}\t{row.actual}\t"
                    f"{row.generated}\t{row.levenshtein}\t"
                    f"{row.similarity:.6f}\t{row.lcs}\n")
    summary = {
        "n_pairs": len(pairs),
        "overall": {k: {"mean": v[0], "std": v[1]}
                    for k, v in rep.overall.items() if k != "n"},
        "by_group": {key: {val: {m: s[m] for m in ("levenshtein", "similarity",
                                                   "lcs", "n")}
                           for val, s in buckets.items()}
                     for key, buckets in rep.by_group.items()},
        "gap_open": matrix.gap_open,
        "gap_extend": matrix.gap_extend,
    }
    report_path = outdir / "report.json"
    with open(report_path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    outputs = {"per_pair": str(per_pair), "report": str(report_path)}
    if not args.no_figures:
        outputs["figures"] = report.save_metrics_figures(rep, outdir)
    for name in ("levenshtein", "similarity", "lcs"):
        mean, std = rep.overall[name]
        print(f"{name:12s} mean {mean:.4f}  std {std:.4f}")
    _write_manifest(outdir / "manifest.json", "evaluate",
                    {"gap_open": matrix.gap_open, "gap_extend": matrix.gap_extend,
                     "matrix": args.matrix},
                    None, {"pairs": pairs_path}, outputs, t0)
    return 0


def cmd_baseline_ann(args):
    t0 = time.time()
    triples = load_tsv(args.train)
    index = RetrievalIndex.build(triples)
    contexts = _load_contexts(args.contexts)
    matrix = metrics.load_blosum62()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        f.write("mhc\tpeptide\trank\tsequence\tlogprob\te_llh\tprovenance\n")
        for mhc, peptide in contexts:
            tcr = ann_retrieve(mhc, peptide, index, matrix)
            f.write(f"{mhc}\t{peptide}\t1\t{tcr}\tnan\tnan\tann\n")
    print(f"retrieved receptors for {len(contexts)} contexts to {out}")
    _write_manifest(out.with_suffix(".manifest.json"), "baseline ann",
                    {"index_size": len(index)}, None,
                    {"train": args.train, "contexts": args.contexts},
                    {"candidates": str(out)}, t0)
    return 0


def cmd_split(args):
    t0 = time.time()
    triples = load_tsv(args.infile)
    ratios = tuple(int(x) for x in args.ratios.split(","))
    if len(ratios) != 3:
        raise TcrgenError("--ratios must be three comma-separated integers")
    splitter = split_contexts_strict if args.strict else split_contexts
    splits = splitter(triples, ratios, args.seed)
    paths = write_splits(splits, args.out_dir, args.seed, ratios, args.strict)
    print(f"split {len(triples)} triples -> " +
          ", ".join(f"{k}={len(getattr(splits, k))}" for k in paths))
    _write_manifest(Path(args.out_dir) / "manifest.json", "split",
                    {"ratios": list(ratios), "strict": args.strict},
                    {"seed": args.seed}, {"in": args.infile}, paths, t0)
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_train(sub):
    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--train", required=True, help="training triples TSV")
    p.add_argument("--valid", required=True, help="validation triples TSV")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", help="JSON file with config overrides")
    p.add_argument("--no-phys", action="store_true",
                   help="ablate the physicochemical channel")
    p.add_argument("--no-figures", action="store_true")
    for flag, typ in (("--d-t", int), ("--d-p", int), ("--d-s", int),
                      ("--n-head", int), ("--d-ff", int), ("--max-src-len", int)):
        p.add_argument(flag, type=typ, default=None)
    for flag, typ in (("--lr-peak", float), ("--beta1", float), ("--beta2", float),
                      ("--weight-decay", float), ("--batch-size", int),
                      ("--max-epochs", int), ("--warmup-steps", int),
                      ("--clip-norm", float), ("--patience", int),
                      ("--label-smoothing", float)):
        p.add_argument(flag, type=typ, default=None)
    p.set_defaults(func=cmd_train)


def _add_generate(sub):
    p = sub.add_parser("generate", help="run the inference pipeline")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--contexts", required=True, help="TSV with mhc, peptide columns")
    p.add_argument("--out", required=True, help="output candidates TSV")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", help="JSON file with config overrides")
    p.add_argument("--exclude", default=None,
                   help="triples TSV whose receptors are filtered out")
    for flag, typ in (("--n-starts", int), ("--t-min", float), ("--t-max", float),
                      ("--beam-min", int), ("--beam-max", int),
                      ("--l-min", int), ("--l-max", int), ("--k", int),
                      ("--mmr-lambda", float), ("--pool-cap", int)):
        p.add_argument(flag, type=typ, default=None)
    p.add_argument("--selection", choices=("unique", "mmr"), default=None)
    p.add_argument("--pool", choices=("map", "wide"), default=None)
    p.set_defaults(func=cmd_generate)


def _add_evaluate(sub):
    p = sub.add_parser("evaluate", help="string metrics over (actual, generated) pairs")
    p.add_argument("--pairs", help="TSV with mhc, peptide, actual, generated")
    p.add_argument("--demo", action="store_true",
                   help="use the bundled demo pair corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--matrix", default=None, help="substitution matrix TSV override")
    p.add_argument("--gap-open", type=float, default=metrics.DEFAULT_GAP_OPEN)
    p.add_argument("--gap-extend", type=float, default=metrics.DEFAULT_GAP_EXTEND)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_evaluate)


def _add_baseline(sub):
    p = sub.add_parser("baseline", help="reference baselines")
    bsub = p.add_subparsers(dest="baseline_kind", required=True)
    ann = bsub.add_parser("ann", help="nearest-neighbour retrieval")
    ann.add_argument("--train", required=True)
    ann.add_argument("--contexts", required=True)
    ann.add_argument("--out", required=True)
    ann.set_defaults(func=cmd_baseline_ann)


def _add_split(sub):
    p = sub.add_parser("split", help="context-level train/valid/test split")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--ratios", default="7,1,2")
    p.add_argument("--strict", action="store_true",
                   help="also keep MHC and peptide sets disjoint")
    p.set_defaults(func=cmd_split)


def build_parser():
    p = argparse.ArgumentParser(
        prog="tcrgen",
        description="receptor sequence generation, evaluation, and baselines")
    p.add_argument("--threads", type=int, default=1,
                   help="parallelism cap (execution is serial; recorded in manifests)")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    _add_train(sub)
    _add_generate(sub)
    _add_evaluate(sub)
    _add_baseline(sub)
    _add_split(sub)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except TcrgenError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1
    except FloatingPointError as exc:
        print(f"error[numeric]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
