"""Feature transforms fitted on training data only: per-row standardization
plus PCA for image features, column z-scoring for satellite features, and the
Kp scale. A fitted transform serializes to one versioned binary file so
forecast runs reuse train-time statistics bit-exactly.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, RankError, SchemaError

log = logging.getLogger(__name__)

TRANSFORM_MAGIC = b"KPCAST-FT-1\n"
KP_SCALE = 9.0


@dataclass(frozen=True)
class TrainFingerprint:
    """Identity of the table a transform was fitted on."""

    rows: int = 0
    first_ts: int = 0
    last_ts: int = 0
    digest: str = ""


@dataclass
class FeatureTransform:
    """Fitted statistics for image PCA, satellite column norms, and Kp scale."""

    pca_mean: np.ndarray | None = None
    pca_components: np.ndarray | None = None
    column_names: list[str] = field(default_factory=list)
    column_means: np.ndarray | None = None
    column_stds: np.ndarray | None = None
    zero_variance: np.ndarray | None = None
    excluded: list[str] = field(default_factory=list)
    kp_scale: float = KP_SCALE
    fitted_on: TrainFingerprint | None = None

    @property
    def n_components(self) -> int:
        return 0 if self.pca_components is None else self.pca_components.shape[0]


def row_standardize(v: np.ndarray) -> np.ndarray:
    """Zero-mean, unit population-std version of a vector; constants map to zeros."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise DimensionError(
            f"row_standardize needs a vector of length >= 2, got shape {v.shape}"
        )
    centered = v - v.mean()
    std = np.sqrt((centered ** 2).mean())
    if std == 0.0:
        return np.zeros_like(v)
    return centered / std


def standardize_rows(mat: np.ndarray) -> np.ndarray:
    """Apply row_standardize to every row of a matrix."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] < 2:
        raise DimensionError(f"standardize_rows needs (n, >=2), got shape {mat.shape}")
    centered = mat - mat.mean(axis=1, keepdims=True)
    std = np.sqrt((centered ** 2).mean(axis=1, keepdims=True))
    std[std == 0.0] = 1.0
    return centered / std


def fit_pca(train_rows: np.ndarray, k: int = 512) -> FeatureTransform:
    """Top-k right singular vectors of the centered training matrix.

    Components carry a deterministic sign: the largest-magnitude entry of
    each component is made positive, so refitting the same data reproduces
    the same basis bit-exactly.
    """
    x = np.asarray(train_rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise RankError(f"PCA needs a (>=2, dims) matrix, got shape {x.shape}")
    n, d = x.shape
    if k > min(n, d):
        raise RankError(f"k={k} exceeds feasible rank min({n}, {d})")
    mean = x.mean(axis=0)
    _, _, vt = np.linalg.svd(x - mean, full_matrices=False)
    components = vt[:k].copy()
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0.0:
            row *= -1.0
    return FeatureTransform(pca_mean=mean, pca_components=components)


def apply_pca(t: FeatureTransform, rows: np.ndarray) -> np.ndarray:
    """Project rows onto the fitted components."""
    if t.pca_components is None:
        raise SchemaError("transform has no fitted PCA")
    x = np.asarray(rows, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != t.pca_mean.shape[0]:
        raise DimensionError(
            f"PCA fitted on width {t.pca_mean.shape[0]}, got {x.shape[1]}"
        )
    out = (x - t.pca_mean) @ t.pca_components.T
    return out[0] if single else out


def fit_column_norm(train, exclude: tuple[str, ...] = ()) -> FeatureTransform:
    """Per-column mean/population-std from a training TimeTable.

    Columns named in `exclude` pass through apply_column_norm unchanged;
    zero-variance columns are recorded and map to zeros.
    """
    names = train.column_names()
    unknown = [c for c in exclude if c not in names]
    if unknown:
        raise SchemaError(f"excluded columns not in table: {unknown}")
    means = train.values.mean(axis=0)
    stds = np.sqrt(((train.values - means) ** 2).mean(axis=0))
    zero = stds == 0.0
    return FeatureTransform(
        column_names=list(names),
        column_means=means,
        column_stds=np.where(zero, 1.0, stds),
        zero_variance=zero,
        excluded=list(exclude),
    )


def apply_column_norm(t: FeatureTransform, table):
    """Z-score a table with train statistics, matching columns by name."""
    if t.column_means is None:
        raise SchemaError("transform has no fitted column statistics")
    names = table.column_names()
    if names != t.column_names:
        raise SchemaError(
            f"column mismatch: fitted on {t.column_names}, applying to {names}"
        )
    values = normalize_columns(t, table.values)
    return table.with_values(values)


def normalize_columns(t: FeatureTransform, values: np.ndarray) -> np.ndarray:
    """Z-score a raw matrix whose columns follow the fitted column order."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[1] != len(t.column_names):
        raise DimensionError(
            f"expected {len(t.column_names)} columns, got {values.shape[1]}"
        )
    out = (values - t.column_means) / t.column_stds
    if t.zero_variance is not None:
        out[:, t.zero_variance] = 0.0
    for name in t.excluded:
        idx = t.column_names.index(name)
        out[:, idx] = values[:, idx]
    return out


def normalize_kp(kp):
    """Map Kp in [0, 9] to [0, 1].

    The result is kp/9 up to one ulp, adjusted so that denormalize_kp
    recovers every value on the 28-step thirds grid exactly.
    """
    kp = np.asarray(kp, dtype=np.float64)
    y = kp / KP_SCALE
    for cand in (np.nextafter(y, np.inf), np.nextafter(y, -np.inf)):
        bad = _snap9(y) != kp
        y = np.where(bad & (_snap9(cand) == kp), cand, y)
    if y.ndim == 0:
        return float(y)
    return y


def denormalize_kp(x):
    """Inverse of normalize_kp; values landing within a few ulps of the Kp
    thirds grid snap onto it exactly."""
    x = np.asarray(x, dtype=np.float64)
    y = _snap9(x)
    if y.ndim == 0:
        return float(y)
    return y


def _snap9(x: np.ndarray) -> np.ndarray:
    y = np.asarray(x, dtype=np.float64) * KP_SCALE
    k = np.rint(y * 3.0)
    third = k / 3.0
    tol = 16.0 * np.finfo(np.float64).eps * np.maximum(1.0, np.abs(third))
    return np.where(np.abs(y - third) <= tol, third, y)


def table_fingerprint(table) -> TrainFingerprint:
    """Stable identity of a table: row count, time range, and a content digest."""
    h = hashlib.sha256()
    ts = table.timestamps.astype("datetime64[s]").astype(np.int64)
    h.update(ts.tobytes())
    h.update("\x1f".join(table.column_names()).encode("utf-8"))
    h.update(np.ascontiguousarray(table.values, dtype="<f8").tobytes())
    first = int(ts[0]) if len(ts) else 0
    last = int(ts[-1]) if len(ts) else 0
    return TrainFingerprint(rows=len(ts), first_ts=first, last_ts=last, digest=h.hexdigest())


def fit_feature_transform(
    train_table,
    img_columns: list[str],
    sat_columns: list[str],
    k: int = 512,
    exclude: tuple[str, ...] = (),
) -> FeatureTransform:
    """Fit the full transform (image PCA + satellite column norm) on one table.

    k is clamped to the feasible rank when the training table is smaller than
    the requested component count.
    """
    img = train_table.select(img_columns)
    sat = train_table.select(sat_columns)
    feasible = min(k, img.values.shape[0], img.values.shape[1])
    if feasible < k:
        log.warning("reducing PCA components from %d to feasible rank %d", k, feasible)
    pca = fit_pca(standardize_rows(img.values), k=feasible)
    norm = fit_column_norm(sat, exclude=exclude)
    return FeatureTransform(
        pca_mean=pca.pca_mean,
        pca_components=pca.pca_components,
        column_names=norm.column_names,
        column_means=norm.column_means,
        column_stds=norm.column_stds,
        zero_variance=norm.zero_variance,
        excluded=norm.excluded,
        kp_scale=KP_SCALE,
        fitted_on=table_fingerprint(train_table),
    )


def transform_sample(t: FeatureTransform, sample, sat_columns: list[str]):
    """Apply a fitted transform to one raw WindowSample.

    Image rows are row-standardized then projected; satellite columns are
    z-scored by name; kp_in is already normalized at window build time.
    """
    if list(sat_columns) != t.column_names:
        raise SchemaError(
            f"sample satellite columns {sat_columns} do not match transform {t.column_names}"
        )
    img = apply_pca(t, standardize_rows(sample.img_in))
    sat = normalize_columns(t, sample.sat_in)
    return sample.with_blocks(img_in=img, sat_in=sat)


# ---------------------------------------------------------------------------
# serialization


def _write_array(fh, arr: np.ndarray | None) -> None:
    if arr is None:
        fh.write(struct.pack("<I", 0))
        return
    arr = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes())


def _read_array(fh) -> np.ndarray | None:
    (ndim,) = struct.unpack("<I", fh.read(4))
    if ndim == 0:
        return None
    shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
    n = int(np.prod(shape))
    return np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).astype(np.float64)


def _write_str(fh, s: str) -> None:
    b = s.encode("utf-8")
    fh.write(struct.pack("<I", len(b)))
    fh.write(b)


def _read_str(fh) -> str:
    (n,) = struct.unpack("<I", fh.read(4))
    return fh.read(n).decode("utf-8")


def save_transform(t: FeatureTransform, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(TRANSFORM_MAGIC)
        _write_array(fh, t.pca_mean)
        _write_array(fh, t.pca_components)
        fh.write(struct.pack("<I", len(t.column_names)))
        for name in t.column_names:
            _write_str(fh, name)
        _write_array(fh, t.column_means)
        _write_array(fh, t.column_stds)
        zv = None if t.zero_variance is None else t.zero_variance.astype(np.float64)
        _write_array(fh, zv)
        fh.write(struct.pack("<I", len(t.excluded)))
        for name in t.excluded:
            _write_str(fh, name)
        fh.write(struct.pack("<d", t.kp_scale))
        fp = t.fitted_on or TrainFingerprint()
        fh.write(struct.pack("<Qqq", fp.rows, fp.first_ts, fp.last_ts))
        _write_str(fh, fp.digest)


def load_transform(path: str | Path) -> FeatureTransform:
    with open(path, "rb") as fh:
        magic = fh.read(len(TRANSFORM_MAGIC))
        if magic != TRANSFORM_MAGIC:
            raise SchemaError(f"{path}: not a kpcast feature transform")
        pca_mean = _read_array(fh)
        pca_components = _read_array(fh)
        (ncols,) = struct.unpack("<I", fh.read(4))
        names = [_read_str(fh) for _ in range(ncols)]
        means = _read_array(fh)
        stds = _read_array(fh)
        zv = _read_array(fh)
        (nexc,) = struct.unpack("<I", fh.read(4))
        excluded = [_read_str(fh) for _ in range(nexc)]
        (kp_scale,) = struct.unpack("<d", fh.read(8))
        rows, first_ts, last_ts = struct.unpack("<Qqq", fh.read(24))
        digest = _read_str(fh)
    return FeatureTransform(
        pca_mean=pca_mean,
        pca_components=pca_components,
        column_names=names,
        column_means=means,
        column_stds=stds,
        zero_variance=None if zv is None else zv.astype(bool),
        excluded=excluded,
        kp_scale=kp_scale,
        fitted_on=TrainFingerprint(rows, first_ts, last_ts, digest),
    )
