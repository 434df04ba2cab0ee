"""Window-sample construction: 3-hour mean resampling, train/test date split,
sliding windows with the four label schemes, and oversampling-based class
balancing keyed on the Kp activity seen in each input window.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    EmptyInputError,
    SchemaError,
    ValidationError,
    WindowUnderflowError,
)
from .features import denormalize_kp, normalize_kp
from .ingest import TimeTable, parse_iso

SAMPLE_MAGIC = b"KPCAST-WS-1\n"
META_NAME = "shard-meta.txt"


@dataclass(frozen=True)
class WindowConfig:
    """Window geometry in 3-hour steps."""

    input_steps: int = 40
    output_steps: int = 24
    stride_train: int = 1
    stride_daily: int = 8

    def __post_init__(self):
        if self.input_steps <= 0:
            raise ConfigError(f"input_steps must be positive, got {self.input_steps}")
        if self.output_steps not in (24, 40):
            raise ConfigError(f"output_steps must be 24 or 40, got {self.output_steps}")
        if self.stride_train < 1 or self.stride_daily < 1:
            raise ConfigError("strides must be >= 1")


@dataclass(frozen=True)
class LabelConfig:
    """Class boundaries for the label schemes."""

    high_kp_threshold: float = 7.0
    quiet_upper: float = 4.0
    storm_lower: float = 5.0

    def __post_init__(self):
        if not 0.0 < self.quiet_upper <= self.storm_lower <= 9.0:
            raise ConfigError(
                f"need 0 < quiet_upper <= storm_lower <= 9, got "
                f"({self.quiet_upper}, {self.storm_lower})"
            )
        if not 0.0 < self.high_kp_threshold <= 9.0:
            raise ConfigError(
                f"high_kp_threshold must be in (0, 9], got {self.high_kp_threshold}"
            )


@dataclass
class WindowSample:
    """One training/forecast instance.

    kp_in holds the normalized ([0, 1]) Kp input series; kp_out keeps raw Kp
    for labels and evaluation. step_seconds records the table cadence so
    window end times can be audited.
    """

    t0: np.datetime64
    img_in: np.ndarray
    sat_in: np.ndarray
    kp_in: np.ndarray
    labels28: np.ndarray
    labels10: np.ndarray
    labels3: np.ndarray
    label_high: np.ndarray
    kp_out: np.ndarray
    step_seconds: int = 10800

    @property
    def input_steps(self) -> int:
        return len(self.kp_in)

    @property
    def output_steps(self) -> int:
        return len(self.kp_out)

    def end_timestamp(self) -> np.datetime64:
        """First instant after the output window."""
        total = (self.input_steps + self.output_steps) * self.step_seconds
        return self.t0 + np.timedelta64(total, "s")

    def with_blocks(self, img_in=None, sat_in=None, kp_in=None) -> "WindowSample":
        return replace(
            self,
            img_in=self.img_in if img_in is None else img_in,
            sat_in=self.sat_in if sat_in is None else sat_in,
            kp_in=self.kp_in if kp_in is None else kp_in,
        )


@dataclass(frozen=True)
class SampleSchema:
    """Column grouping used when windows were cut from a table."""

    img_columns: tuple[str, ...]
    sat_columns: tuple[str, ...]
    kp_column: str = "Kp"
    step_seconds: int = 10800


def resample_3h_mean(table: TimeTable) -> TimeTable:
    """Mean over aligned 3-hour buckets; rows with any missing cell dropped.

    A cell is missing when any covered hourly cell is missing. Expects an
    hourly, gap-free grid.
    """
    if table.n_rows == 0:
        raise EmptyInputError("cannot resample an empty table")
    secs = table.timestamps.astype(np.int64)
    if len(secs) > 1 and not (np.diff(secs) == 3600).all():
        raise ValidationError("3-hour resampling expects a gap-free hourly grid")
    buckets = (secs // 10800) * 10800
    starts, first_idx = np.unique(buckets, return_index=True)
    n, m = len(starts), len(table.columns)
    values = np.zeros((n, m))
    mask = np.zeros((n, m), dtype=bool)
    bounds = np.append(first_idx, len(secs))
    for i in range(n):
        chunk = slice(bounds[i], bounds[i + 1])
        values[i] = table.values[chunk].mean(axis=0)
        mask[i] = table.missing[chunk].any(axis=0)
    keep = ~mask.any(axis=1)
    return TimeTable(
        starts[keep].astype("datetime64[s]"),
        list(table.columns),
        values[keep],
        np.zeros((keep.sum(), m), dtype=bool),
    )


def split_by_date(table: TimeTable, train_end, test_start, test_end):
    """Rows before train_end vs rows in [test_start, test_end)."""
    train_end = parse_iso(str(train_end)) if isinstance(train_end, str) else train_end
    test_start = parse_iso(str(test_start)) if isinstance(test_start, str) else test_start
    test_end = parse_iso(str(test_end)) if isinstance(test_end, str) else test_end
    if not (train_end <= test_start < test_end):
        raise ConfigError(
            f"need train_end <= test_start < test_end, got "
            f"{train_end}, {test_start}, {test_end}"
        )
    ts = table.timestamps
    train_sel = ts < np.datetime64(train_end, "s")
    test_sel = (ts >= np.datetime64(test_start, "s")) & (ts < np.datetime64(test_end, "s"))
    return _take_rows(table, train_sel), _take_rows(table, test_sel)


def _take_rows(table: TimeTable, sel: np.ndarray) -> TimeTable:
    return TimeTable(
        table.timestamps[sel], list(table.columns), table.values[sel], table.missing[sel]
    )


def window_count(rows: int, wcfg: WindowConfig, stride: int) -> int:
    span = wcfg.input_steps + wcfg.output_steps
    if rows < span:
        return 0
    return (rows - span) // stride + 1


def make_windows(
    table: TimeTable,
    wcfg: WindowConfig,
    lcfg: LabelConfig,
    stride: int | None = None,
    img_prefix: str = "img_",
    kp_column: str = "Kp",
) -> tuple[list[WindowSample], SampleSchema]:
    """Cut sliding windows and derive the four label schemes per output step.

    Columns are grouped by name: `img_prefix` columns form the image block,
    `kp_column` the Kp series, everything else the satellite block.
    """
    stride = wcfg.stride_train if stride is None else stride
    names = table.column_names()
    if kp_column not in names:
        raise SchemaError(f"table lacks the Kp column {kp_column!r}")
    img_cols = [n for n in names if n.startswith(img_prefix)]
    sat_cols = [n for n in names if not n.startswith(img_prefix) and n != kp_column]
    if table.missing.any():
        raise ValidationError("windows require a table with no missing cells")

    span = wcfg.input_steps + wcfg.output_steps
    if table.n_rows < span:
        raise WindowUnderflowError(
            f"need at least {span} rows for one window, have {table.n_rows}"
        )
    if len(table.timestamps) > 1:
        deltas = np.diff(table.timestamps.astype(np.int64))
        if not (deltas == deltas[0]).all():
            raise ValidationError("windowing expects uniform timestamp spacing")
        step_seconds = int(deltas[0])
    else:
        step_seconds = 10800

    img_idx = [table.col_index(n) for n in img_cols]
    sat_idx = [table.col_index(n) for n in sat_cols]
    kp = table.column(kp_column)
    kp_norm = normalize_kp(kp)

    samples = []
    for start in range(0, table.n_rows - span + 1, stride):
        mid = start + wcfg.input_steps
        out_kp = kp[mid : mid + wcfg.output_steps]
        samples.append(
            WindowSample(
                t0=table.timestamps[start],
                img_in=table.values[start:mid][:, img_idx].copy(),
                sat_in=table.values[start:mid][:, sat_idx].copy(),
                kp_in=kp_norm[start:mid].copy(),
                labels28=labels_28(out_kp),
                labels10=labels_10(out_kp),
                labels3=labels_3(out_kp, lcfg),
                label_high=(out_kp >= lcfg.high_kp_threshold).astype(np.int64),
                kp_out=out_kp.copy(),
                step_seconds=step_seconds,
            )
        )
    schema = SampleSchema(tuple(img_cols), tuple(sat_cols), kp_column, step_seconds)
    return samples, schema


def labels_28(kp: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(kp) * 3.0), 0, 27).astype(np.int64)


def labels_10(kp: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(kp)), 0, 9).astype(np.int64)


def labels_3(kp: np.ndarray, lcfg: LabelConfig) -> np.ndarray:
    kp = np.asarray(kp)
    out = np.zeros(kp.shape, dtype=np.int64)
    out[kp >= lcfg.quiet_upper] = 1
    out[kp >= lcfg.storm_lower] = 2
    return out


def balance_class_key(sample: WindowSample, mode: str = "max") -> int:
    """Balancing key of a window: the max (or last) Kp third seen in its input."""
    kp_raw = denormalize_kp(sample.kp_in)
    thirds = np.clip(np.rint(kp_raw * 3.0), 0, 27).astype(np.int64)
    if mode == "max":
        return int(thirds.max())
    if mode == "last":
        return int(thirds[-1])
    raise ConfigError(f"unknown balance key mode {mode!r}")


def expand_balance(
    samples: list[WindowSample],
    keyer=balance_class_key,
    rng_seed: int = 0,
) -> list[WindowSample]:
    """Oversample every class up to the most frequent class's count.

    Extra instances are drawn with replacement from the class's own members;
    the combined list is shuffled deterministically under rng_seed. The
    originals are all retained.
    """
    if not samples:
        raise EmptyInputError("expand_balance needs at least one sample")
    rng = np.random.default_rng(rng_seed)
    by_key: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        by_key.setdefault(keyer(s), []).append(i)
    target = max(len(v) for v in by_key.values())
    chosen: list[int] = []
    for key in sorted(by_key):
        members = by_key[key]
        chosen.extend(members)
        deficit = target - len(members)
        if deficit > 0:
            chosen.extend(rng.choice(members, size=deficit, replace=True).tolist())
    order = rng.permutation(len(chosen))
    return [samples[chosen[i]] for i in order]


# ---------------------------------------------------------------------------
# sample shards on disk


def save_samples(directory: str | Path, samples: list[WindowSample], schema: SampleSchema) -> None:
    """Persist samples as one framed binary record per file plus a meta file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / META_NAME, "w", encoding="utf-8") as fh:
        fh.write("kpcast-shard 1\n")
        fh.write(f"count={len(samples)}\n")
        fh.write(f"step_seconds={schema.step_seconds}\n")
        fh.write(f"kp_column={schema.kp_column}\n")
        fh.write("img_columns=" + "\x1f".join(schema.img_columns) + "\n")
        fh.write("sat_columns=" + "\x1f".join(schema.sat_columns) + "\n")
    for i, s in enumerate(samples):
        with open(directory / f"sample_{i:06d}.kpws", "wb") as fh:
            fh.write(SAMPLE_MAGIC)
            fh.write(
                struct.pack(
                    "<qqIIII",
                    int(s.t0.astype("datetime64[s]").astype(np.int64)),
                    s.step_seconds,
                    s.input_steps,
                    s.output_steps,
                    s.img_in.shape[1],
                    s.sat_in.shape[1],
                )
            )
            for block in (s.img_in, s.sat_in, s.kp_in, s.kp_out):
                fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())
            for block in (s.labels28, s.labels10, s.labels3, s.label_high):
                fh.write(np.ascontiguousarray(block, dtype="<i8").tobytes())


def load_samples(directory: str | Path) -> tuple[list[WindowSample], SampleSchema]:
    directory = Path(directory)
    meta_path = directory / META_NAME
    if not meta_path.exists():
        raise SchemaError(f"{directory}: no shard meta file")
    meta: dict[str, str] = {}
    with open(meta_path, "r", encoding="utf-8") as fh:
        if fh.readline().strip() != "kpcast-shard 1":
            raise SchemaError(f"{meta_path}: unknown shard version")
        for line in fh:
            key, _, value = line.rstrip("\n").partition("=")
            meta[key] = value
    schema = SampleSchema(
        img_columns=tuple(c for c in meta["img_columns"].split("\x1f") if c),
        sat_columns=tuple(c for c in meta["sat_columns"].split("\x1f") if c),
        kp_column=meta["kp_column"],
        step_seconds=int(meta["step_seconds"]),
    )
    count = int(meta["count"])
    samples = []
    for i in range(count):
        with open(directory / f"sample_{i:06d}.kpws", "rb") as fh:
            if fh.read(len(SAMPLE_MAGIC)) != SAMPLE_MAGIC:
                raise SchemaError(f"sample file {i} has a bad magic string")
            t0, step_seconds, n_in, n_out, img_w, sat_w = struct.unpack(
                "<qqIIII", fh.read(32)
            )

            def block(rows, cols=None):
                n = rows * (cols or 1)
                arr = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(np.float64)
                return arr.reshape(rows, cols) if cols else arr

            img = block(n_in, img_w)
            sat = block(n_in, sat_w)
            kp_in = block(n_in)
            kp_out = block(n_out)
            labels = [
                np.frombuffer(fh.read(8 * n_out), dtype="<i8").astype(np.int64)
                for _ in range(4)
            ]
        samples.append(
            WindowSample(
                t0=np.datetime64(int(t0), "s"),
                img_in=img,
                sat_in=sat,
                kp_in=kp_in,
                labels28=labels[0],
                labels10=labels[1],
                labels3=labels[2],
                label_high=labels[3],
                kp_out=kp_out,
                step_seconds=step_seconds,
            )
        )
    return samples, schema
