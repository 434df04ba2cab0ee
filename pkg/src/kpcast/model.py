"""Multimodal forecasting architecture: three modality encoders, per-branch
distribution projections for alignment, a local (convolutional) and a global
(attention + pooling) fusion branch, and four classification/detection heads
emitting per-step outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nnkernel as nn
from .errors import ConfigError, DimensionError, ValidationError
from .nnkernel import GradTape, Tensor

HEAD_BINS = (28, 10, 3)  # classification heads; a binary logit rides alongside


@dataclass(frozen=True)
class ModelConfig:
    """Widths and knobs of the architecture; head sizes are fixed by the
    Kp discretization schemes."""

    img_dim: int = 512
    sat_dim: int = 26
    kp_dim: int = 1
    model_dim: int = 64
    heads: int = 4
    ff_dim: int = 128
    dropout_rate: float = 0.1
    align_bins: int = 28
    output_steps: int = 24
    conv_width: int = 3
    positional_encoding: bool = False  # off by default; ablation flag

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by {self.heads} heads"
            )
        if (3 * self.model_dim) % self.heads != 0:
            raise ConfigError("fusion width must stay divisible by the head count")
        if self.conv_width % 2 == 0:
            raise ConfigError(f"conv_width must be odd, got {self.conv_width}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.output_steps <= 0 or self.align_bins <= 0:
            raise ConfigError("output_steps and align_bins must be positive")


@dataclass
class DistVector:
    """Probability vector over K ordered bins."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 1:
            raise DimensionError(f"probs must be 1-D, got shape {self.probs.shape}")
        if (self.probs < -1e-12).any() or abs(self.probs.sum() - 1.0) > 1e-9:
            raise ValidationError("probs is not a probability distribution")


class ModelParams:
    """Trainable weights addressable by stable path names."""

    def __init__(self, cfg: ModelConfig, arrays: dict[str, np.ndarray]):
        self.cfg = cfg
        self._arrays = dict(arrays)

    def __getitem__(self, path: str) -> np.ndarray:
        return self._arrays[path]

    def __setitem__(self, path: str, value: np.ndarray) -> None:
        if path not in self._arrays:
            raise KeyError(f"unknown parameter path {path!r}")
        if value.shape != self._arrays[path].shape:
            raise DimensionError(
                f"{path}: shape {value.shape} differs from {self._arrays[path].shape}"
            )
        self._arrays[path] = value

    def __contains__(self, path: str) -> bool:
        return path in self._arrays

    def paths(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def arrays(self) -> dict[str, np.ndarray]:
        return dict(self._arrays)

    def weight_paths(self) -> list[str]:
        """Weight matrices subject to L2 decay; biases are excluded."""
        return [p for p in self._arrays if not p.rsplit(".", 1)[-1].startswith("b")]

    def copy(self) -> "ModelParams":
        return ModelParams(self.cfg, {k: v.copy() for k, v in self._arrays.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self._arrays.values())


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """He-uniform weights, zero biases, in a deterministic path order."""
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}

    def dense_pair(path: str, n_in: int, n_out: int) -> None:
        arrays[f"{path}.W"] = nn.he_uniform((n_in, n_out), n_in, rng)
        arrays[f"{path}.b"] = np.zeros(n_out)

    def attention_block(path: str, dim: int) -> None:
        for name in ("Wq", "Wk", "Wv", "Wo"):
            arrays[f"{path}.{name}"] = nn.he_uniform((dim, dim), dim, rng)

    d = cfg.model_dim
    for branch, width in (("img", cfg.img_dim), ("sat", cfg.sat_dim), ("kp", cfg.kp_dim)):
        dense_pair(f"{branch}.in", width, d)
        attention_block(f"{branch}.attn", d)
        dense_pair(f"{branch}.ff1", d, cfg.ff_dim)
        dense_pair(f"{branch}.ff2", cfg.ff_dim, d)
        dense_pair(f"{branch}.align", d, cfg.align_bins)
    fused = 3 * d
    arrays["fuse.conv.K"] = nn.he_uniform(
        (cfg.conv_width, fused, fused), cfg.conv_width * fused, rng
    )
    arrays["fuse.conv.b"] = np.zeros(fused)
    attention_block("fuse.attn", fused)
    head_out = cfg.output_steps * (sum(HEAD_BINS) + 1)
    dense_pair("head", 2 * fused, head_out)
    return ModelParams(cfg, arrays)


@dataclass
class ModelOutput:
    """Per-step head distributions plus the three alignment projections.

    Fields hold graph Tensors so losses can backpropagate; use .data for
    plain arrays or dist_vectors() for validated DistVectors.
    """

    dist28: Tensor
    dist10: Tensor
    dist3: Tensor
    p_high: Tensor
    align_img: Tensor
    align_sat: Tensor
    align_kp: Tensor

    def dist_vectors(self, head: str = "dist28") -> list[DistVector]:
        data = getattr(self, head).data
        return [DistVector(row) for row in data]


def _binder(params: ModelParams, tape: GradTape | None):
    if tape is not None:
        return lambda path: tape.leaf(path, params[path])
    cache: dict[str, Tensor] = {}

    def getp(path: str) -> Tensor:
        node = cache.get(path)
        if node is None:
            node = Tensor(params[path])
            cache[path] = node
        return node

    return getp


def encode_modality(
    x,
    params: ModelParams,
    branch: str,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
    tape: GradTape | None = None,
) -> Tensor:
    """Encoder block for one modality: input projection, attention, dropout,
    residual, feed-forward, residual."""
    cfg = params.cfg
    expected = {"img": cfg.img_dim, "sat": cfg.sat_dim, "kp": cfg.kp_dim}[branch]
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim != 2 or x.data.shape[1] != expected:
        raise DimensionError(
            f"{branch} input must be (steps, {expected}), got {x.data.shape}"
        )
    getp = _binder(params, tape)
    return _encode(x, getp, branch, cfg, mode, rng)


def sinusoidal_encoding(steps: int, dim: int) -> np.ndarray:
    """Standard interleaved sine/cosine position table."""
    pos = np.arange(steps)[:, None]
    i = np.arange(dim)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    table = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return table


def _encode(x, getp, branch, cfg, mode, rng) -> Tensor:
    h0 = nn.dense(x, getp(f"{branch}.in.W"), getp(f"{branch}.in.b"))
    if cfg.positional_encoding:
        h0 = h0 + Tensor(sinusoidal_encoding(h0.data.shape[0], cfg.model_dim))
    attn = nn.multi_head_attention(
        h0, {k: getp(f"{branch}.attn.{k}") for k in ("Wq", "Wk", "Wv", "Wo")}, cfg.heads
    )
    h1 = h0 + nn.dropout(attn, cfg.dropout_rate, mode, rng)
    ff = nn.dense(
        nn.relu(nn.dense(h1, getp(f"{branch}.ff1.W"), getp(f"{branch}.ff1.b"))),
        getp(f"{branch}.ff2.W"),
        getp(f"{branch}.ff2.b"),
    )
    return h1 + ff


def project_alignment(h, params: ModelParams, branch: str, tape: GradTape | None = None) -> Tensor:
    """Time-pooled encoding through a dense + softmax head to K alignment bins."""
    getp = _binder(params, tape)
    return _project(h if isinstance(h, Tensor) else Tensor(h), getp, branch)


def _project(h, getp, branch) -> Tensor:
    pooled = nn.global_avg_pool(h)
    return nn.softmax(
        nn.dense(pooled, getp(f"{branch}.align.W"), getp(f"{branch}.align.b")), axis=-1
    )


def fuse_and_head(
    h_img,
    h_sat,
    h_kp,
    params: ModelParams,
    output_steps: int | None = None,
    tape: GradTape | None = None,
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Concatenate branch encodings, run the local and global fusion branches,
    and map the pooled features to per-step head outputs."""
    cfg = params.cfg
    out_steps = cfg.output_steps if output_steps is None else output_steps
    getp = _binder(params, tape)
    encs = [t if isinstance(t, Tensor) else Tensor(t) for t in (h_img, h_sat, h_kp)]
    steps = {e.data.shape[0] for e in encs}
    if len(steps) != 1:
        raise DimensionError(f"branch step counts differ: {sorted(steps)}")
    return _fuse(encs, getp, cfg, out_steps)


def _fuse(encs, getp, cfg, out_steps):
    if out_steps != cfg.output_steps:
        raise DimensionError(
            f"head is sized for {cfg.output_steps} output steps, asked for {out_steps}"
        )
    hcat = nn.concat(encs, axis=1)
    local = nn.global_avg_pool(
        nn.conv1d_residual(hcat, getp("fuse.conv.K"), getp("fuse.conv.b"))
    )
    glob = nn.global_avg_pool(
        nn.multi_head_attention(
            hcat, {k: getp(f"fuse.attn.{k}") for k in ("Wq", "Wk", "Wv", "Wo")}, cfg.heads
        )
    )
    fused = nn.concat([local, glob], axis=0)
    logits = nn.dense(fused, getp("head.W"), getp("head.b"))
    z = nn.reshape(logits, (out_steps, sum(HEAD_BINS) + 1))
    k28, k10, k3 = HEAD_BINS
    dist28 = nn.softmax(z[:, 0:k28], axis=1)
    dist10 = nn.softmax(z[:, k28 : k28 + k10], axis=1)
    dist3 = nn.softmax(z[:, k28 + k10 : k28 + k10 + k3], axis=1)
    p_high = nn.sigmoid(z[:, k28 + k10 + k3])
    return dist28, dist10, dist3, p_high


def forward(
    sample,
    params: ModelParams,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
    tape: GradTape | None = None,
) -> ModelOutput:
    """Full forward pass over one WindowSample.

    Inference mode disables dropout and is a pure function of (sample, params).
    Pass a GradTape to collect parameter leaves for backpropagation.
    """
    cfg = params.cfg
    getp = _binder(params, tape)
    blocks = {"img": Tensor(sample.img_in), "sat": Tensor(sample.sat_in)}
    kp_in = np.asarray(sample.kp_in, dtype=np.float64)
    blocks["kp"] = Tensor(kp_in[:, None] if kp_in.ndim == 1 else kp_in)
    for branch, width in (("img", cfg.img_dim), ("sat", cfg.sat_dim), ("kp", cfg.kp_dim)):
        got = blocks[branch].data.shape
        if got[1] != width:
            raise DimensionError(f"{branch} block width {got[1]} != configured {width}")

    encoded = {
        branch: _encode(blocks[branch], getp, branch, cfg, mode, rng)
        for branch in ("img", "sat", "kp")
    }
    aligns = {branch: _project(encoded[branch], getp, branch) for branch in encoded}
    n_out = len(sample.kp_out) if sample.kp_out is not None else cfg.output_steps
    dist28, dist10, dist3, p_high = _fuse(
        [encoded["img"], encoded["sat"], encoded["kp"]], getp, cfg, n_out
    )
    return ModelOutput(
        dist28=dist28,
        dist10=dist10,
        dist3=dist3,
        p_high=p_high,
        align_img=aligns["img"],
        align_sat=aligns["sat"],
        align_kp=aligns["kp"],
    )
