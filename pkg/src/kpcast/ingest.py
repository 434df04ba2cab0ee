"""Parsing and conditioning of the three raw inputs: delimited satellite
tables, the 3-hourly Kp series, and hourly image-feature files. Everything
funnels into a TimeTable, is sanitized, resampled to an hourly grid, linearly
interpolated, and merged on timestamps.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    EmptyInputError,
    MergeError,
    ParseError,
    SchemaError,
    UnfillableColumnError,
    ValidationError,
)

HOUR = np.timedelta64(3600, "s")
THREE_HOURS = np.timedelta64(3 * 3600, "s")

FEATURE_TEXT_HEADER = "# kpcast-imgfeat 1"
FEATURE_BINARY_MAGIC = b"KPCAST-IMGF-1\n"

# Feature columns expected in the raw satellite table, in canonical order.
# Names follow the source data dictionary verbatim, typos included.
SATELLITE_COLUMNS = (
    "YEAR",
    "DOY",
    "Hour",
    "Scalar B, nT",
    "Vector B Magnitude, nT",
    "Lat. Angle of B (GSE)",
    "Long. Angle of B (GSE)",
    "BX, nT (GSE, GSM)",
    "BY, nT (GSE)",
    "BZ, nT (GSE)",
    "BY, nT (GSM)",
    "BZ, nT (GSM)",
    "RMS_magnitude, nT",
    "RMS_field_vector, nT",
    "RMS_BX_GSE, nT",
    "RMS_BY_GSE, nT",
    "RMS_BZ_GSE, nT",
    "SW Plasma Temperature, K",
    "SW Proton Density, N/cm^3",
    "SW Plasma Speed, km/s",
    "SW Plasma flow long. angle",
    "SW Plasma flow lat. angle",
    "Alpha/Prot. ratio",
    "Flow pressure",
    "E elecrtic field",
    "Plasma Beta",
    "Alfen mach number",
    "Magnetosonic Much num.",
    "Quasy-Invariant",
)

# Placeholder values the source tables use for missing measurements.
DEFAULT_SENTINELS: dict[str, tuple[float, ...]] = {
    "Scalar B, nT": (999.9,),
    "Vector B Magnitude, nT": (999.9,),
    "Lat. Angle of B (GSE)": (999.9,),
    "Long. Angle of B (GSE)": (999.9,),
    "BX, nT (GSE, GSM)": (999.9,),
    "BY, nT (GSE)": (999.9,),
    "BZ, nT (GSE)": (999.9,),
    "BY, nT (GSM)": (999.9,),
    "BZ, nT (GSM)": (999.9,),
    "RMS_magnitude, nT": (999.9,),
    "RMS_field_vector, nT": (999.9,),
    "RMS_BX_GSE, nT": (999.9,),
    "RMS_BY_GSE, nT": (999.9,),
    "RMS_BZ_GSE, nT": (999.9,),
    "SW Plasma Temperature, K": (9999999.0,),
    "SW Proton Density, N/cm^3": (999.9,),
    "SW Plasma Speed, km/s": (9999.0,),
    "SW Plasma flow long. angle": (999.9,),
    "SW Plasma flow lat. angle": (999.9,),
    "Alpha/Prot. ratio": (9.999,),
    "Flow pressure": (99.99,),
    "E elecrtic field": (999.99,),
    "Plasma Beta": (999.99,),
    "Alfen mach number": (999.9,),
    "Magnetosonic Much num.": (99.9,),
    "Quasy-Invariant": (9.9999,),
}


@dataclass(frozen=True)
class Column:
    name: str
    unit: str = ""


@dataclass
class TimeTable:
    """Timestamp-indexed matrix of named columns with a missing-value mask."""

    timestamps: np.ndarray
    columns: list[Column]
    values: np.ndarray
    missing: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[s]")
        self.values = np.asarray(self.values, dtype=np.float64)
        self.missing = np.asarray(self.missing, dtype=bool)
        self.validate()

    def validate(self) -> None:
        n, m = self.values.shape if self.values.ndim == 2 else (len(self.values), -1)
        if self.values.ndim != 2:
            raise ValidationError("values must be a 2-D matrix")
        if self.missing.shape != self.values.shape:
            raise ValidationError("missing mask shape differs from values")
        if len(self.timestamps) != n:
            raise ValidationError("row count differs from timestamp count")
        if m != len(self.columns):
            raise ValidationError("column count differs from descriptor count")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate column names")
        if n > 1 and not (np.diff(self.timestamps.astype(np.int64)) > 0).all():
            raise ValidationError("timestamps must be strictly increasing")

    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def col_index(self, name: str) -> int:
        try:
            return self.column_names().index(name)
        except ValueError:
            raise SchemaError(f"no column named {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.col_index(name)]

    def select(self, names: list[str]) -> "TimeTable":
        idx = [self.col_index(n) for n in names]
        return TimeTable(
            self.timestamps.copy(),
            [self.columns[i] for i in idx],
            self.values[:, idx].copy(),
            self.missing[:, idx].copy(),
        )

    def with_values(self, values: np.ndarray) -> "TimeTable":
        return TimeTable(self.timestamps.copy(), list(self.columns), values, self.missing.copy())

    def copy(self) -> "TimeTable":
        return TimeTable(
            self.timestamps.copy(), list(self.columns), self.values.copy(), self.missing.copy()
        )

    @property
    def n_rows(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True)
class SentinelConfig:
    """Per-column placeholder values to flag as missing."""

    sentinels: dict[str, tuple[float, ...]] = field(
        default_factory=lambda: dict(DEFAULT_SENTINELS)
    )

    def validate_against(self, table: TimeTable) -> None:
        names = set(table.column_names())
        unknown = sorted(set(self.sentinels) - names)
        if unknown:
            raise ConfigError(f"sentinel config names unknown columns: {unknown}")


@dataclass
class KpSeries:
    """3-hourly Kp values on the 28-step thirds scale."""

    timestamps: np.ndarray
    kp: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[s]")
        self.kp = np.asarray(self.kp, dtype=np.float64)
        self.validate()

    def validate(self) -> None:
        if len(self.timestamps) != len(self.kp):
            raise ValidationError("timestamp and kp lengths differ")
        if len(self.timestamps) > 1:
            deltas = np.diff(self.timestamps.astype(np.int64))
            if not (deltas > 0).all():
                raise ValidationError("Kp timestamps must be strictly increasing")
        secs = self.timestamps.astype(np.int64)
        if len(secs) and not (secs % (3 * 3600) == secs[0] % (3 * 3600)).all():
            raise ValidationError("Kp timestamps must share a 3-hour phase")
        if len(self.kp) and ((self.kp < 0.0) | (self.kp > 9.0)).any():
            raise ValidationError("Kp values must lie in [0, 9]")
        thirds = np.rint(self.kp * 3.0)
        if len(self.kp) and (np.abs(self.kp * 3.0 - thirds) > 3e-6).any():
            raise ValidationError("Kp values must sit on the thirds scale")


def _open_text(source) -> io.TextIOBase:
    if hasattr(source, "read"):
        return source
    return open(source, "r", encoding="utf-8")


def _split_rows(text_lines: list[str]) -> list[list[str]]:
    """Auto-detect comma vs whitespace delimiting from the header line."""
    if not text_lines:
        raise EmptyInputError("input stream is empty")
    if "," in text_lines[0]:
        return [row for row in csv.reader(text_lines)]
    return [line.split() for line in text_lines]


def parse_satellite_table(source, required_columns=SATELLITE_COLUMNS) -> TimeTable:
    """Parse a delimited satellite table keyed by YEAR / DOY / Hour.

    The composed UTC datetime becomes the index; the temporal columns are
    retained as features. Rows are sorted by time; duplicates are rejected.
    """
    fh = _open_text(source)
    lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    rows = _split_rows(lines)
    header = [h.strip() for h in rows[0]]
    missing_cols = [c for c in required_columns if c not in header]
    if missing_cols:
        raise SchemaError(f"satellite table lacks mandatory columns: {missing_cols}")
    col_pos = {name: header.index(name) for name in header}

    n = len(rows) - 1
    values = np.full((n, len(header)), np.nan)
    mask = np.zeros((n, len(header)), dtype=bool)
    stamps = np.empty(n, dtype="datetime64[s]")
    for i, row in enumerate(rows[1:]):
        lineno = i + 2
        if len(row) != len(header):
            raise ParseError(
                f"expected {len(header)} fields, found {len(row)}", line=lineno
            )
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "" or cell.lower() == "nan":
                mask[i, j] = True
                continue
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise ParseError(f"bad numeric value {cell!r}", line=lineno) from None
        try:
            year = int(values[i, col_pos["YEAR"]])
            doy = int(values[i, col_pos["DOY"]])
            hour = int(values[i, col_pos["Hour"]])
            if not 1 <= doy <= 366:
                raise ValueError
            stamps[i] = (
                np.datetime64(f"{year:04d}-01-01", "s")
                + np.timedelta64(doy - 1, "D")
                + np.timedelta64(hour, "h")
            )
        except (ValueError, OverflowError):
            raise ParseError("bad YEAR/DOY/Hour combination", line=lineno) from None

    order = np.argsort(stamps, kind="stable")
    stamps, values, mask = stamps[order], values[order], mask[order]
    if n > 1 and (np.diff(stamps.astype(np.int64)) == 0).any():
        dup = stamps[np.where(np.diff(stamps.astype(np.int64)) == 0)[0][0]]
        raise ValidationError(f"duplicate timestamp {dup}")
    columns = [Column(name, _unit_of(name)) for name in header]
    return TimeTable(stamps, columns, values, mask)


def _unit_of(name: str) -> str:
    if ", " in name:
        tail = name.rsplit(", ", 1)[1]
        if tail and " " not in tail:
            return tail
    return ""


def parse_kp_series(source) -> KpSeries:
    """Parse two-column delimited text: ISO-8601 timestamp, Kp value."""
    fh = _open_text(source)
    stamps, vals = [], []
    for lineno, line in enumerate(fh, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in (line.split(",") if "," in line else line.split())]
        if len(parts) != 2:
            raise ParseError(f"expected 2 fields, found {len(parts)}", line=lineno)
        try:
            ts, val = parse_iso(parts[0]), float(parts[1])
        except ValueError:
            if lineno == 1:
                continue  # header row
            raise ParseError(f"bad Kp record {line!r}", line=lineno) from None
        stamps.append(ts)
        vals.append(val)
    if not stamps:
        raise EmptyInputError("Kp input has no records")
    values = np.array(vals)
    # source files truncate thirds to 2-3 decimals (1.67, 2.33); snap anything
    # within 0.005 of the grid so the series invariant holds exactly
    k = np.rint(values * 3.0)
    near = (np.abs(values * 3.0 - k) <= 0.015) & (k >= 0) & (k <= 27)
    values = np.where(near, k / 3.0, values)
    return KpSeries(np.array(stamps, dtype="datetime64[s]"), values)


def parse_iso(text: str) -> np.datetime64:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1]
    return np.datetime64(text, "s")


def format_iso(ts: np.datetime64) -> str:
    return str(np.datetime64(ts, "s")) + "Z"


# ---------------------------------------------------------------------------
# image-feature files (format shared with the feature extractor)


def write_feature_file(
    hours: np.ndarray, vectors: np.ndarray, path: str | Path, binary: bool = False
) -> None:
    """Write hourly feature records; text and length-prefixed binary variants."""
    hours = np.asarray(hours, dtype="datetime64[s]")
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or len(hours) != len(vectors):
        raise ValidationError("need one feature vector per hour key")
    if len(np.unique(hours)) != len(hours):
        raise ValidationError("duplicate hour keys")
    order = np.argsort(hours)
    hours, vectors = hours[order], vectors[order]
    dim = vectors.shape[1]
    if binary:
        with open(path, "wb") as fh:
            fh.write(FEATURE_BINARY_MAGIC)
            fh.write(struct.pack("<IQ", dim, len(hours)))
            for ts, vec in zip(hours, vectors):
                key = format_iso(ts).encode("utf-8")
                fh.write(struct.pack("<I", len(key)))
                fh.write(key)
                fh.write(np.ascontiguousarray(vec, dtype="<f8").tobytes())
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{FEATURE_TEXT_HEADER} dim={dim}\n")
            for ts, vec in zip(hours, vectors):
                fh.write(format_iso(ts))
                for v in vec:
                    fh.write(" " + repr(float(v)))
                fh.write("\n")


def read_feature_file(path: str | Path) -> TimeTable:
    """Read an hourly feature file (text or binary, sniffed) into a TimeTable
    with img_### columns."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(FEATURE_BINARY_MAGIC))
    if head == FEATURE_BINARY_MAGIC:
        hours, vectors = _read_feature_binary(path)
    else:
        hours, vectors = _read_feature_text(path)
    columns = [Column(f"img_{i:03d}") for i in range(vectors.shape[1])]
    order = np.argsort(hours)
    return TimeTable(
        hours[order], columns, vectors[order], np.zeros(vectors.shape, dtype=bool)
    )


def _read_feature_text(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith(FEATURE_TEXT_HEADER):
            raise SchemaError(f"{path}: missing feature-file header")
        try:
            dim = int(header.split("dim=")[1])
        except (IndexError, ValueError):
            raise SchemaError(f"{path}: malformed feature-file header") from None
        hours, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != dim + 1:
                raise ParseError(f"expected {dim + 1} fields", line=lineno)
            hours.append(parse_iso(parts[0]))
            rows.append([float(v) for v in parts[1:]])
    vectors = np.array(rows) if rows else np.zeros((0, dim))
    return np.array(hours, dtype="datetime64[s]"), vectors


def _read_feature_binary(path: Path):
    with open(path, "rb") as fh:
        fh.read(len(FEATURE_BINARY_MAGIC))
        dim, count = struct.unpack("<IQ", fh.read(12))
        hours, rows = [], []
        for _ in range(count):
            (key_len,) = struct.unpack("<I", fh.read(4))
            hours.append(parse_iso(fh.read(key_len).decode("utf-8")))
            rows.append(np.frombuffer(fh.read(8 * dim), dtype="<f8").astype(np.float64))
    vectors = np.array(rows) if rows else np.zeros((0, dim))
    return np.array(hours, dtype="datetime64[s]"), vectors


# ---------------------------------------------------------------------------
# conditioning


def sanitize(table: TimeTable, cfg: SentinelConfig) -> TimeTable:
    """Flag cells matching a configured sentinel (1e-9 relative) as missing."""
    cfg.validate_against(table)
    out = table.copy()
    for name, sentinels in cfg.sentinels.items():
        j = out.col_index(name)
        col = out.values[:, j]
        for s in sentinels:
            tol = 1e-9 * abs(s) if s != 0.0 else 1e-9
            out.missing[:, j] |= np.abs(col - s) <= tol
    return out


def interpolate_linear(table: TimeTable) -> TimeTable:
    """Fill interior gaps linearly against time; edge gaps take the nearest value."""
    out = table.copy()
    t = out.timestamps.astype(np.int64).astype(np.float64)
    for j, col in enumerate(out.columns):
        known = ~out.missing[:, j]
        if not known.any():
            raise UnfillableColumnError(f"column {col.name!r} has no observed values")
        if known.all():
            continue
        out.values[:, j] = np.interp(t, t[known], out.values[known, j])
        out.missing[:, j] = False
    return out


def resample_hourly_ffill(table: TimeTable) -> TimeTable:
    """Snap to an hourly grid spanning [first, last], forward-filling each row
    from the most recent input at or before it."""
    if table.n_rows == 0:
        raise EmptyInputError("cannot resample an empty table")
    start = table.timestamps[0].astype("datetime64[h]").astype("datetime64[s]")
    stop = table.timestamps[-1].astype("datetime64[h]").astype("datetime64[s]")
    grid = np.arange(start, stop + HOUR, HOUR)
    src = np.searchsorted(table.timestamps, grid, side="right") - 1
    n, m = len(grid), len(table.columns)
    values = np.full((n, m), np.nan)
    mask = np.ones((n, m), dtype=bool)
    valid = src >= 0
    values[valid] = table.values[src[valid]]
    mask[valid] = table.missing[src[valid]]
    return TimeTable(grid, list(table.columns), values, mask)


def merge_by_timestamp(sat: TimeTable, kp: KpSeries, img: TimeTable) -> TimeTable:
    """Inner-join satellite and image tables on hourly timestamps and broadcast
    each Kp value across its 3-hour validity window. Adds a "Kp" column."""
    collisions = set(sat.column_names()) & set(img.column_names())
    if collisions:
        raise MergeError(f"column name collisions: {sorted(collisions)}")
    if "Kp" in sat.column_names() or "Kp" in img.column_names():
        raise MergeError("column 'Kp' already present")

    common, sat_idx, img_idx = np.intersect1d(
        sat.timestamps, img.timestamps, return_indices=True
    )
    if len(common) == 0:
        raise MergeError("satellite and image tables share no timestamps")

    pos = np.searchsorted(kp.timestamps, common, side="right") - 1
    in_window = pos >= 0
    in_window[in_window] &= (
        common[in_window].astype("datetime64[s]") - kp.timestamps[pos[in_window]]
    ) < THREE_HOURS
    if not in_window.any():
        raise MergeError("no rows fall inside any Kp validity window")

    keep = in_window
    values = np.hstack(
        [
            sat.values[sat_idx[keep]],
            img.values[img_idx[keep]],
            kp.kp[pos[keep]][:, None],
        ]
    )
    mask = np.hstack(
        [
            sat.missing[sat_idx[keep]],
            img.missing[img_idx[keep]],
            np.zeros((keep.sum(), 1), dtype=bool),
        ]
    )
    columns = list(sat.columns) + list(img.columns) + [Column("Kp")]
    return TimeTable(common[keep], columns, values, mask)


# ---------------------------------------------------------------------------
# TimeTable file round trip


def save_timetable(table: TimeTable, path: str | Path) -> None:
    """Write a TimeTable as CSV; missing cells become empty fields."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp"] + table.column_names())
        for i in range(table.n_rows):
            row = [format_iso(table.timestamps[i])]
            for j in range(len(table.columns)):
                row.append("" if table.missing[i, j] else repr(float(table.values[i, j])))
            writer.writerow(row)


def load_timetable(path: str | Path) -> TimeTable:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "timestamp":
            raise SchemaError(f"{path}: not a kpcast table file")
        names = header[1:]
        stamps, rows, masks = [], [], []
        for rec in reader:
            stamps.append(parse_iso(rec[0]))
            vals = [float(c) if c != "" else np.nan for c in rec[1:]]
            masks.append([c == "" for c in rec[1:]])
            rows.append(vals)
    values = np.array(rows) if rows else np.zeros((0, len(names)))
    mask = np.array(masks, dtype=bool) if masks else np.zeros((0, len(names)), dtype=bool)
    columns = [Column(n, _unit_of(n)) for n in names]
    return TimeTable(np.array(stamps, dtype="datetime64[s]"), columns, values, mask)


def ingest_pipeline(
    satellite_source,
    kp_source,
    feature_path,
    sentinels: SentinelConfig | None = None,
) -> TimeTable:
    """Full conditioning chain: parse, sanitize, hourly forward-fill resample,
    interpolate, then merge satellite + Kp + image features."""
    sat = parse_satellite_table(satellite_source)
    sat = sanitize(sat, sentinels or SentinelConfig())
    sat = resample_hourly_ffill(sat)
    sat = interpolate_linear(sat)
    kp = parse_kp_series(kp_source)
    img = read_feature_file(feature_path)
    return merge_by_timestamp(sat, kp, img)
