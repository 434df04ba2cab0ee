"""Differentiable numeric kernels on 64-bit numpy arrays.

Reverse-mode autodiff over a small fixed op set: dense, softmax, multi-head
attention, 1D convolution with residual, pooling, dropout, and the elementwise
and reduction ops the losses need. Every op's analytic gradient is checked
against central finite differences in the test suite.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DimensionError

CHECKPOINT_MAGIC = b"KPCAST-CKPT-1\n"


class Tensor:
    """Node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    # keep numpy from absorbing Tensor operands into object arrays
    __array_ufunc__ = None

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _accumulate(node: Tensor, grad: np.ndarray) -> None:
    if node.grad is None:
        node.grad = grad.copy()
    else:
        node.grad += grad


def backward(root: Tensor) -> None:
    """Accumulate gradients of a scalar root into every reachable node."""
    if root.size != 1:
        raise DimensionError(f"backward needs a scalar root, got shape {root.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    out = Tensor(a.data + b.data, (a, b))

    def _bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    out._backward = _bw
    return out


def neg(a) -> Tensor:
    a = _t(a)
    out = Tensor(-a.data, (a,))
    out._backward = lambda g: _accumulate(a, -g)
    return out


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    out = Tensor(a.data * b.data, (a, b))

    def _bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    out._backward = _bw
    return out


def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError("matmul operands must be at least 2-D")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner dims disagree: {a.data.shape} @ {b.data.shape}"
        )
    out = Tensor(a.data @ b.data, (a, b))

    def _bw(g):
        _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    out._backward = _bw
    return out


def reshape(a, shape) -> Tensor:
    a = _t(a)
    out = Tensor(a.data.reshape(shape), (a,))
    out._backward = lambda g: _accumulate(a, g.reshape(a.data.shape))
    return out


def transpose(a, axes) -> Tensor:
    a = _t(a)
    inv = np.argsort(axes)
    out = Tensor(a.data.transpose(axes), (a,))
    out._backward = lambda g: _accumulate(a, g.transpose(inv))
    return out


def getitem(a, key) -> Tensor:
    a = _t(a)
    out = Tensor(a.data[key], (a,))

    def _bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        _accumulate(a, full)

    out._backward = _bw
    return out


def gather_rows(a, idx) -> Tensor:
    """Pick a[i, idx[i]] for every row i."""
    a = _t(a)
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.data.shape[0])
    out = Tensor(a.data[rows, idx], (a,))

    def _bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, idx), g)
        _accumulate(a, full)

    out._backward = _bw
    return out


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [_t(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), tuple(parts))
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def _bw(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            _accumulate(p, piece)

    out._backward = _bw
    return out


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _t(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,))

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    out._backward = _bw
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _t(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def cumsum(a, axis: int) -> Tensor:
    a = _t(a)
    out = Tensor(np.cumsum(a.data, axis=axis), (a,))

    def _bw(g):
        rev = np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)
        _accumulate(a, rev)

    out._backward = _bw
    return out


def tabs(a) -> Tensor:
    a = _t(a)
    out = Tensor(np.abs(a.data), (a,))
    out._backward = lambda g: _accumulate(a, g * np.sign(a.data))
    return out


def tlog(a) -> Tensor:
    a = _t(a)
    out = Tensor(np.log(a.data), (a,))
    out._backward = lambda g: _accumulate(a, g / a.data)
    return out


def relu(a) -> Tensor:
    a = _t(a)
    out = Tensor(np.maximum(a.data, 0.0), (a,))
    out._backward = lambda g: _accumulate(a, g * (a.data > 0.0))
    return out


def sigmoid(a) -> Tensor:
    a = _t(a)
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    out = Tensor(s, (a,))
    out._backward = lambda g: _accumulate(a, g * s * (1.0 - s))
    return out


def softmax(a, axis: int = -1) -> Tensor:
    """Shift-invariant softmax; rows sum to one along `axis`."""
    a = _t(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, (a,))

    def _bw(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(a, y * (g - inner))

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# network kernels


def dense(x, w, b) -> Tensor:
    """x @ w + b with the bias broadcast over leading dims."""
    x, w, b = _t(x), _t(w), _t(b)
    if x.data.ndim == 1:
        return add(reshape(matmul(reshape(x, (1, -1)), w), (-1,)), b)
    return add(matmul(x, w), b)


def multi_head_attention(x, params: Mapping[str, object], heads: int) -> Tensor:
    """Bidirectional scaled dot-product attention over a (steps, dim) input.

    `params` supplies the square projections Wq, Wk, Wv, Wo. The model dim
    must divide evenly into `heads`.
    """
    x = _t(x)
    if x.data.ndim != 2:
        raise DimensionError(f"attention input must be (steps, dim), got {x.shape}")
    steps, dim = x.data.shape
    if dim % heads != 0:
        raise ConfigError(f"model dim {dim} not divisible by {heads} heads")
    d_head = dim // heads

    def split(h):
        return transpose(reshape(h, (steps, heads, d_head)), (1, 0, 2))

    q = split(matmul(x, _t(params["Wq"])))
    k = split(matmul(x, _t(params["Wk"])))
    v = split(matmul(x, _t(params["Wv"])))
    scores = mul(matmul(q, transpose(k, (0, 2, 1))), 1.0 / np.sqrt(d_head))
    attn = softmax(scores, axis=-1)
    ctx = reshape(transpose(matmul(attn, v), (1, 0, 2)), (steps, dim))
    return matmul(ctx, _t(params["Wo"]))


def conv1d_residual(x, kernels, bias) -> Tensor:
    """y = x + conv1d(x) with "same" zero padding; channel count preserved.

    `kernels` has shape (width, channels, channels) with odd width.
    """
    x, kernels, bias = _t(x), _t(kernels), _t(bias)
    steps, channels = x.data.shape
    width, c_in, c_out = kernels.data.shape
    if c_in != channels or c_out != channels:
        raise DimensionError(
            f"conv kernels {kernels.data.shape} must map {channels} channels to themselves"
        )
    if width % 2 == 0:
        raise ConfigError(f"conv width must be odd for same padding, got {width}")
    pad = width // 2
    zeros = Tensor(np.zeros((pad, channels)))
    xp = concat([zeros, x, zeros], axis=0)
    y = None
    for w in range(width):
        term = matmul(getitem(xp, slice(w, w + steps)), getitem(kernels, w))
        y = term if y is None else add(y, term)
    return add(x, add(y, bias))


def global_avg_pool(x) -> Tensor:
    """Mean over the time axis of a (steps, channels) input."""
    x = _t(x)
    if x.data.ndim != 2:
        raise DimensionError(f"pooling input must be (steps, channels), got {x.shape}")
    return tmean(x, axis=0)


def dropout(x, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout in training mode; exact identity in inference mode."""
    x = _t(x)
    if mode not in ("train", "infer"):
        raise ConfigError(f"dropout mode must be 'train' or 'infer', got {mode!r}")
    if mode == "infer" or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rng is None:
        raise ConfigError("training-mode dropout needs an rng")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * mask, (x,))
    out._backward = lambda g: _accumulate(x, g * mask)
    return out


def l2_penalty(weights: Iterable, lam: float) -> Tensor:
    """lam * sum of squared entries over the designated weight tensors."""
    total = Tensor(0.0)
    for w in weights:
        w = _t(w)
        total = add(total, tsum(mul(w, w)))
    return mul(total, lam)


# ---------------------------------------------------------------------------
# parameters, tape, checkpoints


def he_uniform(shape: tuple, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class GradTape:
    """Collects leaf tensors by parameter path and reads back their gradients."""

    def __init__(self):
        self._leaves: dict[str, Tensor] = {}

    def leaf(self, path: str, array: np.ndarray) -> Tensor:
        node = self._leaves.get(path)
        if node is None:
            node = Tensor(array)
            self._leaves[path] = node
        return node

    def gradients(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Run backward from `loss` and return gradients keyed by path.

        Parameters that did not participate in the graph get zero gradients,
        shaped identically to their values.
        """
        backward(loss)
        out = {}
        for path, node in self._leaves.items():
            out[path] = node.grad if node.grad is not None else np.zeros_like(node.data)
        return out


def save_checkpoint(params: Mapping[str, np.ndarray], path: str | Path) -> None:
    """Write (path, shape, float64 LE) records under a versioned magic string."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.asarray(params[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr).astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path}: not a kpcast checkpoint")
        (count,) = struct.unpack("<I", fh.read(4))
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
            out[name] = data.astype(np.float64)
    return out


# ---------------------------------------------------------------------------
# finite differences


def finite_difference_gradient(
    f: Callable[[list[np.ndarray]], float],
    arrays: list[np.ndarray],
    h: float = 1e-5,
) -> list[np.ndarray]:
    """Central-difference gradients of a scalar function of several arrays."""
    grads = []
    work = [a.astype(np.float64).copy() for a in arrays]
    for a in work:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f(work)
            flat[i] = orig - h
            down = f(work)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def grad_check(
    f: Callable[[list[Tensor]], Tensor],
    arrays: list[np.ndarray],
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` maps a list of Tensors to a scalar Tensor. Relative error per input is
    ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8).
    """
    nodes = [Tensor(a) for a in arrays]
    loss = f(nodes)
    backward(loss)
    analytic = [
        n.grad if n.grad is not None else np.zeros_like(n.data) for n in nodes
    ]
    numeric = finite_difference_gradient(
        lambda arrs: f([Tensor(a) for a in arrs]).item(), arrays, h=h
    )
    worst = 0.0
    for ga, gn in zip(analytic, numeric):
        denom = max(np.linalg.norm(ga), np.linalg.norm(gn), 1e-8)
        worst = max(worst, float(np.linalg.norm(ga - gn) / denom))
    return worst
