"""Training loop: AdamW + cosine schedule, clipping, early stopping.

Weight decay is decoupled and applied only to matrices (LayerNorm
parameters and every bias vector are exempt). Validation perplexity is
computed without label smoothing. Batch order is derived from the seed, so
identical inputs give identical checkpoints.
"""

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import EmptySplit, ShapeMismatch
from .model import Model, pack_batch, zeros_like_params


@dataclass
class TrainConfig:
    lr_peak: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 1e-2
    batch_size: int = 256
    max_epochs: int = 100
    warmup_steps: int = -1      # -1 -> 5% of total steps
    clip_norm: float = 1.0
    patience: int = 5
    label_smoothing: float = 0.1
    seed: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # {epoch, train_loss, val_ppl, lr}
    stop_reason: str = ""
    best_epoch: int = -1
    best_val_ppl: float = math.inf

    def to_dict(self):
        return asdict(self)


def cosine_lr(step: int, total_steps: int, warmup_steps: int, lr_peak: float) -> float:
    """Linear ramp to lr_peak over warmup, cosine decay to 0 at total_steps."""
    if step < warmup_steps:
        return lr_peak * step / warmup_steps
    if step >= total_steps:
        return 0.0
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return lr_peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def global_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return math.sqrt(total)


def clip_gradients(grads: dict, clip_norm: float) -> float:
    """Rescale in place when the global L2 norm exceeds clip_norm."""
    norm = global_norm(grads)
    if norm > clip_norm:
        scale = clip_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def init_adamw_state(params: dict) -> dict:
    return {"step": 0, "m": zeros_like_params(params), "v": zeros_like_params(params)}


def adamw_step(params: dict, grads: dict, state: dict, lr: float, cfg: TrainConfig):
    """One decoupled-weight-decay Adam update, in place."""
    state["step"] += 1
    t = state["step"]
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {p.shape}")
        m = state["m"][name]
        v = state["v"][name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if cfg.weight_decay and p.ndim >= 2:
            p -= lr * cfg.weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def perplexity(model: Model, pairs, batch_size: int = 256) -> float:
    """exp(mean per-token NLL) over the split, PAD excluded, no smoothing."""
    if not pairs:
        raise EmptySplit("empty evaluation split")
    total, count = 0.0, 0
    for lo in range(0, len(pairs), batch_size):
        chunk = pairs[lo:lo + batch_size]
        src, tgt_in, labels, mask = pack_batch(chunk, model.vocab.pad_id)
        s, n = model.nll_sums(src, tgt_in, labels, mask)
        total += s
        count += n
    return math.exp(total / count)


def _check_finite(params: dict, step: int):
    for name, p in params.items():
        if not np.all(np.isfinite(p)):
            raise FloatingPointError(f"non-finite values in {name} after step {step}")


def train(model: Model, train_pairs, valid_pairs, cfg: TrainConfig,
          log=None):
    """Optimize until max_epochs or patience runs out.

    Returns (best_params, report); ``model.params`` is left at the best
    (lowest validation perplexity) epoch.
    """
    if not train_pairs or not valid_pairs:
        raise EmptySplit("train and valid splits must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    n = len(train_pairs)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.max_epochs * steps_per_epoch
    warmup = cfg.warmup_steps if cfg.warmup_steps >= 0 else max(1, total_steps // 20)

    state = init_adamw_state(model.params)
    report = TrainReport()
    best_params = None
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        losses = []
        lr = 0.0
        for lo in range(0, n, cfg.batch_size):
            batch = [train_pairs[i] for i in order[lo:lo + cfg.batch_size]]
            src, tgt_in, labels, mask = pack_batch(batch, model.vocab.pad_id)
            loss, grads = model.loss_and_grad(src, tgt_in, labels, mask,
                                              cfg.label_smoothing)
            clip_gradients(grads, cfg.clip_norm)
            lr = cosine_lr(step, total_steps, warmup, cfg.lr_peak)
            adamw_step(model.params, grads, state, lr, cfg)
            _check_finite(model.params, state["step"])
            losses.append(loss)
            step += 1
        val_ppl = perplexity(model, valid_pairs, cfg.batch_size)
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)),
                 "val_ppl": val_ppl, "lr": lr}
        report.epochs.append(entry)
        if log:
            log(f"epoch {epoch:3d}  loss {entry['train_loss']:.4f}  "
                f"val_ppl {val_ppl:.4f}  lr {lr:.2e}")
        if val_ppl < report.best_val_ppl:
            report.best_val_ppl = val_ppl
            report.best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
        elif epoch - report.best_epoch >= cfg.patience:
            report.stop_reason = f"early stop: no improvement for {cfg.patience} epochs"
            break
    else:
        report.stop_reason = "max epochs reached"
    model.params = best_params
    return best_params, report
