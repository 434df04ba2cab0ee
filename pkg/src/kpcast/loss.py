"""Loss functions: discrete 1D Wasserstein distance, cross-entropies, the
modality alignment penalty, and the combined training objective.

Every function accepts plain arrays (returning floats) or graph Tensors
(returning scalar Tensors), so the same code backs both the metric test
suite and the training path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nnkernel as nn
from .errors import ConfigError, DimensionError, ValidationError
from .nnkernel import Tensor

LOG_EPS = 1e-12

BREAKDOWN_TERMS = (
    "ce28", "ce10", "ce3", "bce", "wass28", "wass10", "wass3", "align", "l2",
)


@dataclass(frozen=True)
class LossConfig:
    """Weights of the combined objective."""

    alpha: float = 0.8
    lambda_align: float = 0.1
    lambda_l2: float = 0.0
    wasserstein_variant: str = "mean"
    align_anchor: str = ""  # "", or one of img/sat/kp for an anchored scheme

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.lambda_align < 0.0:
            raise ConfigError(f"lambda_align must be >= 0, got {self.lambda_align}")
        if self.lambda_l2 < 0.0:
            raise ConfigError(f"lambda_l2 must be >= 0, got {self.lambda_l2}")
        if self.wasserstein_variant not in ("sum", "mean"):
            raise ConfigError(
                f"wasserstein_variant must be 'sum' or 'mean', got {self.wasserstein_variant!r}"
            )
        if self.align_anchor not in ("", "img", "sat", "kp"):
            raise ConfigError(f"align_anchor must be empty or img/sat/kp, got {self.align_anchor!r}")


def _as_dist(p, name: str) -> tuple[Tensor, bool]:
    """Coerce an array / DistVector / Tensor to a Tensor, validating it."""
    was_tensor = isinstance(p, Tensor)
    t = p if was_tensor else nn.Tensor(getattr(p, "probs", p))
    data = t.data
    if data.ndim != 1:
        raise DimensionError(f"{name} must be a 1-D probability vector, got {data.shape}")
    if (data < -1e-9).any() or abs(data.sum() - 1.0) > 1e-6:
        raise ValidationError(f"{name} is not a probability distribution")
    return t, was_tensor


def _maybe_item(value: Tensor, keep_tensor: bool):
    return value if keep_tensor else value.item()


def wasserstein_1d(p, q, variant: str = "mean"):
    """Discrete 1D Wasserstein distance between two K-bin distributions.

    The sum variant returns sum_k |F_p(k) - F_q(k)| over the bin CDFs; the
    mean variant divides by K.
    """
    if variant not in ("sum", "mean"):
        raise ConfigError(f"unknown wasserstein variant {variant!r}")
    pt, p_tensor = _as_dist(p, "p")
    qt, q_tensor = _as_dist(q, "q")
    if pt.data.shape != qt.data.shape:
        raise DimensionError(
            f"distributions differ in length: {pt.data.shape} vs {qt.data.shape}"
        )
    dist = nn.tsum(nn.tabs(nn.cumsum(pt - qt, axis=0)))
    if variant == "mean":
        dist = dist * (1.0 / pt.data.shape[0])
    return _maybe_item(dist, p_tensor or q_tensor)


def cross_entropy(dist, target_class: int):
    """-log(p[target] + eps), finite even when the target mass is zero."""
    pt, was_tensor = _as_dist(dist, "dist")
    k = int(target_class)
    if not 0 <= k < pt.data.shape[0]:
        raise DimensionError(f"target class {k} outside [0, {pt.data.shape[0]})")
    return _maybe_item(-nn.tlog(pt[k] + LOG_EPS), was_tensor)


def binary_cross_entropy(p_high, label):
    """Clamped binary cross-entropy of a probability against a 0/1 label."""
    was_tensor = isinstance(p_high, Tensor)
    pt = p_high if was_tensor else nn.Tensor(p_high)
    y = float(label)
    if y not in (0.0, 1.0):
        raise ValidationError(f"binary label must be 0 or 1, got {label}")
    term = -(y * nn.tlog(pt + LOG_EPS) + (1.0 - y) * nn.tlog((1.0 - pt) + LOG_EPS))
    return _maybe_item(term, was_tensor)


def alignment_loss(d_img, d_sat, d_kp, variant: str = "mean", anchor: str = ""):
    """Mean pairwise Wasserstein distance over the three modality projections.

    With an `anchor` ('img', 'sat', or 'kp') only the two distances to the
    anchored modality are averaged.
    """
    keep = any(isinstance(d, Tensor) for d in (d_img, d_sat, d_kp))
    dists = {"img": d_img, "sat": d_sat, "kp": d_kp}
    if anchor:
        others = [name for name in dists if name != anchor]
        pairs = tuple(wasserstein_1d(dists[anchor], dists[o], variant) for o in others)
    else:
        pairs = (
            wasserstein_1d(d_img, d_sat, variant),
            wasserstein_1d(d_img, d_kp, variant),
            wasserstein_1d(d_sat, d_kp, variant),
        )
    if keep:
        total = pairs[0]
        for p in pairs[1:]:
            total = total + p
        return total * (1.0 / len(pairs))
    return sum(pairs) / len(pairs)


def one_hot(index: int, bins: int) -> np.ndarray:
    out = np.zeros(bins)
    out[int(index)] = 1.0
    return out


def combined_class_loss(dist, target, cfg: LossConfig):
    """alpha * cross-entropy + (1 - alpha) * Wasserstein against the one-hot target."""
    pt, was_tensor = _as_dist(dist, "dist")
    ce = cross_entropy(pt, target)
    wd = wasserstein_1d(pt, one_hot(target, pt.data.shape[0]), cfg.wasserstein_variant)
    return _maybe_item(cfg.alpha * ce + (1.0 - cfg.alpha) * wd, was_tensor)


def _rows_ce(dist: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over rows of -log(p[row, target[row]] + eps)."""
    picked = nn.gather_rows(dist, targets)
    return -nn.tmean(nn.tlog(picked + LOG_EPS))


def _rows_wasserstein(dist: Tensor, targets: np.ndarray, bins: int, variant: str) -> Tensor:
    """Mean over rows of the Wasserstein distance to one-hot targets."""
    onehot = np.zeros(dist.data.shape)
    onehot[np.arange(len(targets)), np.asarray(targets, dtype=np.int64)] = 1.0
    per_row = nn.tsum(nn.tabs(nn.cumsum(dist - onehot, axis=1)), axis=1)
    if variant == "mean":
        per_row = per_row * (1.0 / bins)
    return nn.tmean(per_row)


def _rows_bce(p: Tensor, labels: np.ndarray) -> Tensor:
    y = np.asarray(labels, dtype=np.float64)
    terms = y * nn.tlog(p + LOG_EPS) + (1.0 - y) * nn.tlog((1.0 - p) + LOG_EPS)
    return -nn.tmean(terms)


def total_loss(output, sample, params, cfg: LossConfig, tape=None):
    """Combined objective over one sample: per-step classification losses,
    the binary high-Kp term, the scaled alignment penalty, and weight decay.

    Returns (scalar Tensor, breakdown dict of floats). The breakdown carries
    the nine weighted terms plus their total; summed in order they reproduce
    the scalar bit-exactly. Pass the forward pass's `tape` during training so
    the L2 term flows into the same parameter leaves.
    """
    a = cfg.alpha
    terms: dict[str, Tensor] = {}
    terms["ce28"] = a * _rows_ce(output.dist28, sample.labels28)
    terms["ce10"] = a * _rows_ce(output.dist10, sample.labels10)
    terms["ce3"] = a * _rows_ce(output.dist3, sample.labels3)
    terms["bce"] = _rows_bce(output.p_high, sample.label_high)
    v = cfg.wasserstein_variant
    terms["wass28"] = (1.0 - a) * _rows_wasserstein(output.dist28, sample.labels28, 28, v)
    terms["wass10"] = (1.0 - a) * _rows_wasserstein(output.dist10, sample.labels10, 10, v)
    terms["wass3"] = (1.0 - a) * _rows_wasserstein(output.dist3, sample.labels3, 3, v)
    terms["align"] = cfg.lambda_align * alignment_loss(
        output.align_img, output.align_sat, output.align_kp, v, anchor=cfg.align_anchor
    )
    if cfg.lambda_l2 > 0.0:
        if tape is not None:
            weights = [tape.leaf(p, params[p]) for p in params.weight_paths()]
        else:
            weights = [params[p] for p in params.weight_paths()]
        terms["l2"] = nn.l2_penalty(weights, cfg.lambda_l2)
    else:
        terms["l2"] = nn.Tensor(0.0)

    total = None
    for name in BREAKDOWN_TERMS:
        total = terms[name] if total is None else total + terms[name]
    breakdown = {"total": total.item()}
    breakdown.update({name: terms[name].item() for name in BREAKDOWN_TERMS})
    return total, breakdown
