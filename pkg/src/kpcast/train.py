"""Adam optimization with mini-batches, a chronological validation split,
early stopping, and plateau learning-rate scheduling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .loss import BREAKDOWN_TERMS, LossConfig, alignment_loss, total_loss
from .model import ModelParams, forward
from .nnkernel import GradTape, save_checkpoint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    lr_factor: float = 0.5
    lr_patience: int = 3
    lr_floor: float = 1e-5
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.patience < 1 or self.lr_patience < 1:
            raise ConfigError("patience values must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")


@dataclass
class OptimizerState:
    """Per-parameter Adam moment accumulators and the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "OptimizerState":
        return cls(
            m={p: np.zeros_like(a) for p, a in params.items()},
            v={p: np.zeros_like(a) for p, a in params.items()},
        )


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    cfg: TrainConfig,
    lr: float | None = None,
) -> tuple[ModelParams, OptimizerState]:
    """Standard bias-corrected Adam update; returns fresh params and state."""
    lr = cfg.lr if lr is None else lr
    step = state.step + 1
    new_params = params.copy()
    new_m, new_v = {}, {}
    bc1 = 1.0 - cfg.beta1 ** step
    bc2 = 1.0 - cfg.beta2 ** step
    for path, value in params.items():
        g = grads.get(path)
        if g is None:
            g = np.zeros_like(value)
        m = cfg.beta1 * state.m[path] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[path] + (1.0 - cfg.beta2) * g * g
        new_params[path] = value - lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        new_m[path], new_v[path] = m, v
    return new_params, OptimizerState(new_m, new_v, step)


def batch_gradients(
    samples, params: ModelParams, lcfg: LossConfig, rng, mode: str = "train"
) -> tuple[dict[str, np.ndarray], dict[str, float]]:
    """Mean loss gradient over a batch, with the averaged term breakdown."""
    tape = GradTape()
    total = None
    sums = {k: 0.0 for k in ("total", *BREAKDOWN_TERMS)}
    for sample in samples:
        out = forward(sample, params, mode=mode, rng=rng, tape=tape)
        sample_loss, breakdown = total_loss(out, sample, params, lcfg, tape=tape)
        total = sample_loss if total is None else total + sample_loss
        for k, val in breakdown.items():
            sums[k] += val
    scale = 1.0 / len(samples)
    grads = tape.gradients(total * scale)
    means = {k: v * scale for k, v in sums.items()}
    # keep the logged total reconcilable with the logged terms bit-exactly
    means["total"] = sum(means[k] for k in BREAKDOWN_TERMS)
    return grads, means


def evaluate(samples, params: ModelParams, lcfg: LossConfig) -> dict:
    """Inference-mode loss breakdown, per-head accuracies, and the unscaled
    mean pairwise alignment distance. Mutates nothing."""
    sums = {k: 0.0 for k in ("total", *BREAKDOWN_TERMS)}
    correct = {"acc28": 0, "acc10": 0, "acc3": 0, "acc_high": 0}
    steps = 0
    align_dist = 0.0
    for sample in samples:
        out = forward(sample, params, mode="infer")
        _, breakdown = total_loss(out, sample, params, lcfg)
        for k, val in breakdown.items():
            sums[k] += val
        align_dist += alignment_loss(
            out.align_img.data, out.align_sat.data, out.align_kp.data,
            lcfg.wasserstein_variant,
        )
        steps += len(sample.kp_out)
        correct["acc28"] += int((out.dist28.data.argmax(axis=1) == sample.labels28).sum())
        correct["acc10"] += int((out.dist10.data.argmax(axis=1) == sample.labels10).sum())
        correct["acc3"] += int((out.dist3.data.argmax(axis=1) == sample.labels3).sum())
        correct["acc_high"] += int(((out.p_high.data >= 0.5) == sample.label_high).sum())
    n = len(samples)
    result = {k: v / n for k, v in sums.items()}
    result["total"] = sum(result[k] for k in BREAKDOWN_TERMS)
    result["align_dist"] = align_dist / n
    result.update({k: v / steps for k, v in correct.items()})
    return result


def chronological_split(samples, val_fraction: float):
    """Hold out the chronological tail; validation never precedes training data."""
    ordered = sorted(range(len(samples)), key=lambda i: samples[i].t0)
    n_val = max(1, int(round(len(samples) * val_fraction)))
    if n_val >= len(samples):
        raise ConfigError(
            f"val_fraction {val_fraction} leaves no training data for {len(samples)} samples"
        )
    train_idx, val_idx = ordered[:-n_val], ordered[-n_val:]
    return [samples[i] for i in train_idx], [samples[i] for i in val_idx]


def train_loop(
    samples,
    params0: ModelParams,
    lcfg: LossConfig,
    tcfg: TrainConfig,
    val_samples=None,
    log_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
) -> tuple[ModelParams, list[dict]]:
    """Mini-batch Adam until max_epochs or early stop; returns the parameters
    achieving the best validation loss and the per-epoch history.

    When val_samples is None the chronological tail of `samples` is held out.
    The plateau schedule halves the learning rate after lr_patience stalled
    epochs, never below lr_floor. Reruns with the same seed are bit-identical.
    """
    if val_samples is None:
        train_samples, val_samples = chronological_split(samples, tcfg.val_fraction)
    else:
        train_samples = list(samples)
    if not train_samples:
        raise ConfigError("training set is empty")

    rng = np.random.default_rng(tcfg.seed)
    params = params0.copy()
    state = OptimizerState.for_params(params)
    lr = tcfg.lr
    best_val = np.inf
    best_params = params.copy()
    stall = lr_stall = 0
    history: list[dict] = []
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    try:
        for epoch in range(1, tcfg.max_epochs + 1):
            order = rng.permutation(len(train_samples))
            epoch_sums = {k: 0.0 for k in ("total", *BREAKDOWN_TERMS)}
            n_batches = 0
            for b_start in range(0, len(order), tcfg.batch_size):
                batch = [train_samples[i] for i in order[b_start : b_start + tcfg.batch_size]]
                grads, breakdown = batch_gradients(batch, params, lcfg, rng)
                params, state = adam_step(params, grads, state, tcfg, lr=lr)
                n_batches += 1
                for k in epoch_sums:
                    epoch_sums[k] += breakdown[k]
                if log_fh:
                    fields = [str(epoch), str(n_batches)] + [
                        repr(breakdown[k]) for k in ("total", *BREAKDOWN_TERMS)
                    ]
                    log_fh.write("\t".join(fields) + "\n")

            train_terms = {k: v / n_batches for k, v in epoch_sums.items()}
            val_terms = evaluate(val_samples, params, lcfg)
            row = {"epoch": epoch, "lr": lr}
            row.update({f"train_{k}": v for k, v in train_terms.items()})
            row.update({f"val_{k}": v for k, v in val_terms.items()})
            history.append(row)

            if val_terms["total"] < best_val:
                best_val = val_terms["total"]
                best_params = params.copy()
                stall = lr_stall = 0
                if ckpt_dir:
                    name = f"ckpt_epoch{epoch:04d}.kpck"
                    save_checkpoint(best_params.arrays(), ckpt_dir / name)
                    (ckpt_dir / "manifest.txt").write_text(f"best={name}\n", encoding="utf-8")
            else:
                stall += 1
                lr_stall += 1
                if lr_stall >= tcfg.lr_patience and lr > tcfg.lr_floor:
                    lr = max(lr * tcfg.lr_factor, tcfg.lr_floor)
                    lr_stall = 0
                    log.info("epoch %d: validation stalled, lr -> %g", epoch, lr)
                if stall >= tcfg.patience:
                    log.info("early stop at epoch %d (best val %.6f)", epoch, best_val)
                    break
    finally:
        if log_fh:
            log_fh.close()
    return best_params, history


HISTORY_COLUMNS = (
    ["epoch", "lr"]
    + [f"train_{k}" for k in ("total", *BREAKDOWN_TERMS)]
    + [f"val_{k}" for k in ("total", *BREAKDOWN_TERMS)]
    + ["val_align_dist"]
    + [f"val_{k}" for k in ("acc28", "acc10", "acc3", "acc_high")]
)


def save_history(history: list[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(HISTORY_COLUMNS) + "\n")
        for row in history:
            fh.write("\t".join(repr(row[c]) if c in row else "" for c in HISTORY_COLUMNS) + "\n")
