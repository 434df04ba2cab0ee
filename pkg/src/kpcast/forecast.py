"""Walk-forward forecasting: each day the model is fine-tuned on the newest
fully historical window, then issues 1..5-day-ahead predictions from samples
whose windows end exactly h days past the fine-tune boundary. Inputs never
reach past the boundary; that is asserted structurally, not assumed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import LabelConfig, WindowConfig, WindowSample, make_windows
from .errors import ConfigError, LeakageError, SchemaError
from .features import FeatureTransform
from .ingest import TimeTable, format_iso, parse_iso
from .loss import LossConfig
from .model import ModelParams, forward
from .train import OptimizerState, TrainConfig, adam_step, batch_gradients

log = logging.getLogger(__name__)

KP_BIN_CENTERS = np.arange(28) / 3.0


@dataclass(frozen=True)
class ForecastConfig:
    """Knobs of the walk-forward protocol."""

    window: WindowConfig = field(default_factory=WindowConfig)
    labels: LabelConfig = field(default_factory=LabelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    horizons: tuple[int, ...] = (1, 2, 3)
    finetune_epochs: int = 2
    finetune_lr: float = 1e-4
    finetune_samples: int = 1  # most recent fully historical daily samples used
    seed: int = 0
    max_days: int | None = None

    def __post_init__(self):
        if not self.horizons:
            raise ConfigError("horizons must be non-empty")
        if self.finetune_samples < 1:
            raise ConfigError("finetune_samples must be >= 1")
        if any(h < 1 for h in self.horizons):
            raise ConfigError(f"horizons must be >= 1, got {self.horizons}")
        if max(self.horizons) * self.window.stride_daily > self.window.output_steps:
            raise ConfigError(
                f"max horizon {max(self.horizons)} needs "
                f"{max(self.horizons) * self.window.stride_daily} output steps, "
                f"window provides {self.window.output_steps}"
            )
        if self.finetune_epochs < 0:
            raise ConfigError("finetune_epochs must be >= 0")


@dataclass(frozen=True)
class ForecastRow:
    """One predicted 3-hour step for a (fine-tune day, horizon) pair."""

    day: np.datetime64
    horizon: int
    step_timestamp: np.datetime64
    kp_pred_expected: float
    kp_pred_argmax: float
    kp_observed: float

    @property
    def error(self) -> float:
        return self.kp_pred_expected - self.kp_observed


@dataclass
class ForecastReport:
    rows: list[ForecastRow] = field(default_factory=list)

    def horizons(self) -> list[int]:
        return sorted({r.horizon for r in self.rows})

    def days(self) -> list[np.datetime64]:
        seen: list[np.datetime64] = []
        for r in self.rows:
            if r.day not in seen:
                seen.append(r.day)
        return seen

    def group(self, day, horizon: int) -> list[ForecastRow]:
        return [r for r in self.rows if r.day == day and r.horizon == horizon]

    def n_groups(self) -> int:
        return len({(str(r.day), r.horizon) for r in self.rows})


REPORT_HEADER = "day\thorizon\tstep_timestamp\tkp_pred_expected\tkp_pred_argmax\tkp_observed\terror"


def save_report(report: ForecastReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(REPORT_HEADER + "\n")
        for r in report.rows:
            fh.write(
                "\t".join(
                    [
                        format_iso(r.day),
                        str(r.horizon),
                        format_iso(r.step_timestamp),
                        repr(r.kp_pred_expected),
                        repr(r.kp_pred_argmax),
                        repr(r.kp_observed),
                        repr(r.error),
                    ]
                )
                + "\n"
            )


def load_report(path: str | Path) -> ForecastReport:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != REPORT_HEADER:
            raise SchemaError(f"{path}: not a kpcast forecast report")
        for line in fh:
            day, horizon, step_ts, pred_e, pred_a, obs, _err = line.rstrip("\n").split("\t")
            rows.append(
                ForecastRow(
                    day=parse_iso(day),
                    horizon=int(horizon),
                    step_timestamp=parse_iso(step_ts),
                    kp_pred_expected=float(pred_e),
                    kp_pred_argmax=float(pred_a),
                    kp_observed=float(obs),
                )
            )
    return ForecastReport(rows)


def daily_samples(test_table: TimeTable, cfg: ForecastConfig) -> list[WindowSample]:
    """The daily grid: windows at stride_daily, indexed by day."""
    samples, _ = make_windows(
        test_table, cfg.window, cfg.labels, stride=cfg.window.stride_daily
    )
    return samples


def day_boundary(sample: WindowSample) -> np.datetime64:
    """The fine-tune boundary a sample supports: the first instant after its
    output window."""
    return sample.end_timestamp()


def finetune_day(
    params: ModelParams,
    day_sample: WindowSample,
    cfg: ForecastConfig,
    boundary: np.datetime64,
    rng: np.random.Generator | None = None,
) -> ModelParams:
    """Adam updates on one fully historical sample.

    Raises LeakageError when any step of the sample's input or output window
    reaches past the boundary.
    """
    if day_sample.end_timestamp() > np.datetime64(boundary, "s"):
        raise LeakageError(
            f"fine-tune sample ends {day_sample.end_timestamp()}, "
            f"after the boundary {boundary}"
        )
    if cfg.finetune_epochs == 0:
        return params
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    tcfg = TrainConfig(lr=cfg.finetune_lr, seed=cfg.seed)
    state = OptimizerState.for_params(params)
    for _ in range(cfg.finetune_epochs):
        grads, _ = batch_gradients([day_sample], params, cfg.loss, rng)
        params, state = adam_step(params, grads, state, tcfg, lr=cfg.finetune_lr)
    return params


def expected_kp(dist28: np.ndarray) -> np.ndarray:
    """Expected Kp value of 28-bin distributions through the k/3 bin centers."""
    return np.asarray(dist28) @ KP_BIN_CENTERS


def predict_horizons(
    params: ModelParams,
    test_table: TimeTable,
    day: int,
    cfg: ForecastConfig,
    samples: list[WindowSample] | None = None,
) -> list[ForecastRow]:
    """Predictions for every configured horizon of fine-tune day index `day`.

    Horizon h reads the daily sample ending h days after the boundary and
    extracts the final day of its output window; horizons without enough
    future data are omitted with a logged gap.
    """
    if samples is None:
        samples = daily_samples(test_table, cfg)
    boundary = day_boundary(samples[day])
    stride = cfg.window.stride_daily
    rows: list[ForecastRow] = []
    for h in sorted(cfg.horizons):
        idx = day + h
        if idx >= len(samples):
            log.info("day %s horizon %d: not enough future data, omitted", boundary, h)
            continue
        sample = samples[idx]
        input_end = sample.t0 + np.timedelta64(
            sample.input_steps * sample.step_seconds, "s"
        )
        if input_end > boundary:
            raise LeakageError(
                f"horizon {h} sample input runs to {input_end}, past {boundary}"
            )
        out = forward(sample, params, mode="infer")
        sl = slice(cfg.window.output_steps - stride, cfg.window.output_steps)
        dist = out.dist28.data[sl]
        mu = expected_kp(dist)
        arg = dist.argmax(axis=1) / 3.0
        observed = sample.kp_out[sl]
        step0 = cfg.window.output_steps - stride
        for j in range(stride):
            ts = sample.t0 + np.timedelta64(
                (sample.input_steps + step0 + j) * sample.step_seconds, "s"
            )
            rows.append(
                ForecastRow(
                    day=boundary,
                    horizon=h,
                    step_timestamp=ts,
                    kp_pred_expected=float(mu[j]),
                    kp_pred_argmax=float(arg[j]),
                    kp_observed=float(observed[j]),
                )
            )
    return rows


def check_transform_fingerprint(transform: FeatureTransform, test_table: TimeTable) -> None:
    """Refuse transforms fitted on data overlapping the forecast range."""
    fp = transform.fitted_on
    if fp is None or fp.rows == 0:
        raise LeakageError("transform carries no training fingerprint")
    test_start = int(test_table.timestamps[0].astype("datetime64[s]").astype(np.int64))
    if fp.last_ts >= test_start:
        raise LeakageError(
            f"transform was fitted through {np.datetime64(fp.last_ts, 's')}, "
            f"inside the forecast range starting {test_table.timestamps[0]}"
        )


def run_walkforward(
    initial_params: ModelParams,
    test_table: TimeTable,
    cfg: ForecastConfig,
    transform: FeatureTransform | None = None,
) -> ForecastReport:
    """Iterate fine-tune days across the test range, carrying parameters
    forward, and accumulate every horizon's predictions.

    When a fitted transform is supplied its training fingerprint is checked
    against the forecast range first.
    """
    if transform is not None:
        check_transform_fingerprint(transform, test_table)
    samples = daily_samples(test_table, cfg)
    params = initial_params
    report = ForecastReport()
    n_days = len(samples)
    if cfg.max_days is not None:
        n_days = min(n_days, cfg.max_days)
    for day in range(n_days):
        boundary = day_boundary(samples[day])
        rng = np.random.default_rng([cfg.seed, day])
        for s in samples[max(0, day + 1 - cfg.finetune_samples) : day + 1]:
            params = finetune_day(params, s, cfg, boundary, rng=rng)
        report.rows.extend(
            predict_horizons(params, test_table, day, cfg, samples=samples)
        )
    return report
