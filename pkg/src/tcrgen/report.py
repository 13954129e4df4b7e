"""Matplotlib figures rendered next to the delimited outputs.

Evaluation runs get per-pair metric histograms and, when grouping keys are
present, per-group mean +- std bars. Training runs get loss/perplexity and
learning-rate curves.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

METRIC_LABELS = {
    "levenshtein": "Levenshtein distance",
    "similarity": "similarity",
    "lcs": "LCS length",
}
MAX_GROUPS = 12  # keep the most frequent values per key readable


def _style(ax):
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.grid(axis="y", alpha=0.3, linewidth=0.5)


def save_metrics_figures(report, outdir, prefix="metrics"):
    """Histogram panel plus optional per-group bars; returns written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.2))
    for ax, name in zip(axes, METRIC_LABELS):
        vals = [getattr(r, name) for r in report.per_pair]
        bins = 20 if name == "similarity" else range(int(max(vals)) + 2)
        ax.hist(vals, bins=bins, color="#4878a8", edgecolor="white")
        mean, std = report.overall[name]
        ax.axvline(mean, color="#c44e52", linestyle="--", linewidth=1)
        ax.set_title(f"{METRIC_LABELS[name]}\nmean {mean:.3f} ± {std:.3f}",
                     fontsize=9)
        _style(ax)
    fig.tight_layout()
    path = outdir / f"{prefix}_hist.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(str(path))

    for key, buckets in report.by_group.items():
        top = sorted(buckets, key=lambda v: (-buckets[v]["n"], v))[:MAX_GROUPS]
        fig, axes = plt.subplots(1, 3, figsize=(11.5, 3.6))
        xs = range(len(top))
        for ax, name in zip(axes, METRIC_LABELS):
            means = [buckets[v][name][0] for v in top]
            stds = [buckets[v][name][1] for v in top]
            ax.bar(xs, means, yerr=stds, capsize=2, color="#4878a8",
                   error_kw={"linewidth": 0.8})
            ax.axhline(report.overall[name][0], color="#c44e52",
                       linestyle="--", linewidth=1)
            ax.set_xticks(list(xs))
            ax.set_xticklabels(top, rotation=60, ha="right", fontsize=7)
            ax.set_title(METRIC_LABELS[name], fontsize=9)
            _style(ax)
        fig.suptitle(f"per-{key} breakdown (mean ± std)", fontsize=10)
        fig.tight_layout()
        path = outdir / f"{prefix}_by_{key}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(str(path))
    return written


def save_training_figure(report, outdir, prefix="training"):
    """Loss / validation perplexity / learning-rate curves."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    epochs = [e["epoch"] for e in report.epochs]
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.2))
    axes[0].plot(epochs, [e["train_loss"] for e in report.epochs], color="#4878a8")
    axes[0].set_title("train loss", fontsize=9)
    axes[1].plot(epochs, [e["val_ppl"] for e in report.epochs], color="#4878a8")
    if report.best_epoch > 0:
        axes[1].axvline(report.best_epoch, color="#c44e52", linestyle="--",
                        linewidth=1)
    axes[1].set_title("validation perplexity", fontsize=9)
    axes[2].plot(epochs, [e["lr"] for e in report.epochs], color="#4878a8")
    axes[2].set_title("learning rate", fontsize=9)
    for ax in axes:
        ax.set_xlabel("epoch", fontsize=8)
        _style(ax)
    fig.tight_layout()
    path = Path(outdir) / f"{prefix}_curves.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)
