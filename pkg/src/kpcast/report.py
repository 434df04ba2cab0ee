"""Error metrics over forecast reports, comparison against an external
baseline forecast file, and deterministic SVG plot emission."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MergeError, SchemaError, ValidationError
from .forecast import ForecastReport, format_iso, parse_iso

log = logging.getLogger(__name__)

HIST_EDGES = np.linspace(-9.0, 9.0, 55)  # 1/3-wide bins over the Kp error range


@dataclass(frozen=True)
class BaselineRow:
    day: np.datetime64
    horizon: int
    step_timestamp: np.datetime64
    kp: float


@dataclass
class BaselineForecast:
    """External per-(issue day, horizon, step) Kp predictions."""

    rows: list[BaselineRow] = field(default_factory=list)

    def __post_init__(self):
        for r in self.rows:
            if not 0.0 <= r.kp <= 9.0:
                raise ValidationError(f"baseline kp {r.kp} outside [0, 9]")
            secs = int(r.step_timestamp.astype("datetime64[s]").astype(np.int64))
            if secs % (3 * 3600) != 0:
                raise ValidationError(
                    f"baseline step {r.step_timestamp} not on a 3-hour boundary"
                )


@dataclass
class ErrorSummary:
    horizon: int
    n: int
    mae: float
    rmse: float
    bias: float
    hist_counts: np.ndarray
    hist_edges: np.ndarray = field(default_factory=lambda: HIST_EDGES.copy())


def _summarize(errors: np.ndarray, horizon: int) -> ErrorSummary:
    # sorted aggregation makes the summary exactly permutation-invariant
    errors = np.sort(np.asarray(errors, dtype=np.float64))
    counts, _ = np.histogram(np.clip(errors, -9.0, 9.0), bins=HIST_EDGES)
    return ErrorSummary(
        horizon=horizon,
        n=len(errors),
        mae=float(np.abs(errors).mean()),
        rmse=float(np.sqrt((errors ** 2).mean())),
        bias=float(errors.mean()),
        hist_counts=counts,
    )


def error_summary(report: ForecastReport) -> dict[int, ErrorSummary]:
    """Per-horizon MAE, RMSE, bias, and a 1/3-wide error histogram."""
    out: dict[int, ErrorSummary] = {}
    for h in report.horizons():
        errors = np.array([r.error for r in report.rows if r.horizon == h])
        out[h] = _summarize(errors, h)
    return out


@dataclass
class BaselineComparison:
    model: dict[int, ErrorSummary]
    baseline: dict[int, ErrorSummary]
    # (day, horizon, step, model_pred, baseline_pred, observed, delta of absolute errors)
    deltas: list[tuple]


def compare_baseline(report: ForecastReport, baseline: BaselineForecast) -> BaselineComparison:
    """Join on (day, horizon, step) and summarize both models over the
    common support only."""
    base_map = {(str(r.day), r.horizon, str(r.step_timestamp)): r.kp for r in baseline.rows}
    model_err: dict[int, list[float]] = {}
    base_err: dict[int, list[float]] = {}
    deltas = []
    for r in report.rows:
        key = (str(r.day), r.horizon, str(r.step_timestamp))
        if key not in base_map:
            continue
        bk = base_map[key]
        model_err.setdefault(r.horizon, []).append(r.error)
        base_err.setdefault(r.horizon, []).append(bk - r.kp_observed)
        deltas.append(
            (
                r.day,
                r.horizon,
                r.step_timestamp,
                r.kp_pred_expected,
                bk,
                r.kp_observed,
                abs(r.error) - abs(bk - r.kp_observed),
            )
        )
    if not deltas:
        raise MergeError("report and baseline share no (day, horizon, step) rows")
    return BaselineComparison(
        model={h: _summarize(np.array(v), h) for h, v in model_err.items()},
        baseline={h: _summarize(np.array(v), h) for h, v in base_err.items()},
        deltas=deltas,
    )


# ---------------------------------------------------------------------------
# baseline files


BASELINE_HEADER = "day\thorizon\tstep_timestamp\tkp"


def load_baseline(path: str | Path, fmt: str = "native") -> BaselineForecast:
    if fmt == "native":
        return _load_baseline_native(path)
    if fmt == "noaa":
        return parse_noaa_3day(Path(path).read_text(encoding="utf-8"))
    raise SchemaError(f"unknown baseline format {fmt!r}")


def _load_baseline_native(path: str | Path) -> BaselineForecast:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != BASELINE_HEADER:
            raise SchemaError(f"{path}: not a kpcast baseline file")
        for line in fh:
            day, horizon, step_ts, kp = line.rstrip("\n").split("\t")
            rows.append(
                BaselineRow(parse_iso(day), int(horizon), parse_iso(step_ts), float(kp))
            )
    return BaselineForecast(rows)


def save_baseline(baseline: BaselineForecast, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(BASELINE_HEADER + "\n")
        for r in baseline.rows:
            fh.write(
                f"{format_iso(r.day)}\t{r.horizon}\t{format_iso(r.step_timestamp)}\t{r.kp!r}\n"
            )


_MONTHS = {
    "Jan": 1, "Feb": 2, "Mar": 3, "Apr": 4, "May": 5, "Jun": 6,
    "Jul": 7, "Aug": 8, "Sep": 9, "Oct": 10, "Nov": 11, "Dec": 12,
}


def parse_noaa_3day(text: str) -> BaselineForecast:
    """Adapter for the public NOAA 3-day forecast text product.

    Reads the "NOAA Kp index breakdown Mon DD-Mon DD YYYY" block: a date
    header row followed by eight 00-03UT style rows with three Kp columns.
    Day d of the breakdown becomes horizon d, issued at the first date's
    midnight.
    """
    lines = text.splitlines()
    start = None
    year = None
    for i, ln in enumerate(lines):
        if "NOAA Kp index breakdown" in ln:
            start = i
            tokens = ln.replace("-", " ").split()
            for tok in tokens:
                if tok.isdigit() and len(tok) == 4:
                    year = int(tok)
            break
    if start is None or year is None:
        raise SchemaError("no 'NOAA Kp index breakdown' block found")

    dates: list[np.datetime64] = []
    rows: list[BaselineRow] = []
    for ln in lines[start + 1 :]:
        tokens = ln.split()
        if not tokens:
            continue
        if not dates:
            if tokens[0] in _MONTHS:
                for m, d in zip(tokens[0::2], tokens[1::2]):
                    month = _MONTHS.get(m)
                    if month is None:
                        raise SchemaError(f"bad month token {m!r} in date header")
                    dates.append(np.datetime64(f"{year:04d}-{month:02d}-{int(d):02d}", "s"))
            continue
        if not tokens[0].endswith("UT"):
            break
        hour = int(tokens[0][:2])
        # severity tags like (G1) ride along as separate tokens
        values = [t for t in tokens[1:] if not t.startswith("(")]
        if len(values) != len(dates):
            raise SchemaError(
                f"breakdown row has {len(values)} values for {len(dates)} dates"
            )
        issue = dates[0]  # forecasts issued at the first breakdown day's midnight
        for d, (date, val) in enumerate(zip(dates, values), start=1):
            rows.append(
                BaselineRow(
                    day=issue,
                    horizon=d,
                    step_timestamp=date + np.timedelta64(hour, "h"),
                    kp=float(val),
                )
            )
    if not rows:
        raise SchemaError("breakdown block had no Kp rows")
    return BaselineForecast(rows)


# ---------------------------------------------------------------------------
# summary files and plots


def save_summaries(summaries: dict[int, ErrorSummary], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("horizon\tn\tmae\trmse\tbias\n")
        for h in sorted(summaries):
            s = summaries[h]
            fh.write(f"{h}\t{s.n}\t{s.mae!r}\t{s.rmse!r}\t{s.bias!r}\n")


def save_comparison(cmp: BaselineComparison, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("horizon\tn\tmodel_mae\tmodel_rmse\tbaseline_mae\tbaseline_rmse\n")
        for h in sorted(cmp.model):
            m, b = cmp.model[h], cmp.baseline[h]
            fh.write(f"{h}\t{m.n}\t{m.mae!r}\t{m.rmse!r}\t{b.mae!r}\t{b.rmse!r}\n")


def emit_plots(
    summaries: dict[int, ErrorSummary],
    report: ForecastReport,
    out_dir: str | Path,
) -> list[Path]:
    """Write per-day forecast-vs-observed plots and per-horizon error
    histograms as deterministic SVG files."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "kpcast"

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    for day in report.days():
        fig, ax = plt.subplots(figsize=(8, 4))
        for h in report.horizons():
            group = report.group(day, h)
            if not group:
                continue
            steps = np.arange(len(group))
            ax.plot(steps, [r.kp_pred_expected for r in group], marker="o",
                    label=f"{h}-day forecast")
            ax.plot(steps, [r.kp_observed for r in group], linestyle="--",
                    color="black", alpha=0.6,
                    label="observed" if h == report.horizons()[0] else None)
        ax.set_ylim(0, 9)
        ax.set_xlabel("3-hour step")
        ax.set_ylabel("Kp")
        ax.set_title(f"Forecasts issued {format_iso(day)}")
        ax.legend(loc="upper left", fontsize=8)
        name = "forecast_" + format_iso(day).replace(":", "") + ".svg"
        path = out_dir / name
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)

    centers = (HIST_EDGES[:-1] + HIST_EDGES[1:]) / 2.0
    for h in sorted(summaries):
        s = summaries[h]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.bar(centers, s.hist_counts, width=1.0 / 3.0)
        ax.set_xlabel("prediction error (Kp)")
        ax.set_ylabel("count")
        ax.set_title(f"{h}-day error distribution (MAE {s.mae:.3f}, n={s.n})")
        path = out_dir / f"errors_h{h}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written
