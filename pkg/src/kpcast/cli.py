"""Command-line surface: subcommands for each pipeline stage, configured by
one INI file plus flag overrides.

Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import features as ft
from . import forecast as fc
from . import ingest as ing
from . import report as rpt
from . import train as tr
from .errors import ConfigError, KpcastError
from .fetch import fetch as run_fetch
from .loss import LossConfig
from .model import ModelConfig, ModelParams, init_params
from .nnkernel import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

DEFAULTS: dict[str, dict[str, str]] = {
    "paths": {"workdir": "out"},
    "ingest": {"satellite": "", "kp": "", "imgfeat": "", "sentinels_file": ""},
    "split": {
        "train_end": "2024-04-20T00:00:00Z",
        "test_start": "2024-04-20T00:00:00Z",
        "test_end": "2024-07-01T00:00:00Z",
    },
    "window": {
        "input_steps": "40",
        "output_steps": "24",
        "stride_train": "1",
        "stride_daily": "8",
    },
    "label": {"high_kp_threshold": "7", "quiet_upper": "4", "storm_lower": "5"},
    "features": {"pca_components": "512", "normalize_exclude": "YEAR,DOY,Hour"},
    "model": {
        "model_dim": "64",
        "heads": "4",
        "ff_dim": "128",
        "dropout": "0.1",
        "align_bins": "28",
        "conv_width": "3",
        "init_seed": "0",
    },
    "loss": {
        "alpha": "0.8",
        "lambda_align": "0.1",
        "lambda_l2": "0.0",
        "wasserstein_variant": "mean",
    },
    "train": {
        "lr": "0.001",
        "batch_size": "64",
        "max_epochs": "100",
        "patience": "10",
        "lr_factor": "0.5",
        "lr_patience": "3",
        "lr_floor": "1e-5",
        "val_fraction": "0.1",
        "seed": "0",
        "balance_seed": "0",
    },
    "forecast": {
        "horizons": "1,2,3",
        "finetune_epochs": "2",
        "finetune_lr": "0.0001",
        "seed": "0",
        "max_days": "",
    },
    "report": {"baseline": "", "baseline_format": "native"},
    "fetch": {"manifest": "", "out_dir": ""},
}


class Config:
    """Effective configuration: shipped defaults, file values, flag overrides."""

    def __init__(self, path: str | Path, overrides: list[str] | None = None,
                 seed: int | None = None):
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read(path)
        self._values = {s: dict(kv) for s, kv in DEFAULTS.items()}
        for section in parser.sections():
            if section not in self._values:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in parser[section].items():
                if key not in self._values[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                self._values[section][key] = value
        for item in overrides or []:
            target, _, value = item.partition("=")
            section, _, key = target.partition(".")
            if not value or section not in self._values or key not in self._values[section]:
                raise ConfigError(f"bad --set override {item!r} (use section.key=value)")
            self._values[section][key] = value
        if seed is not None:
            for section, key in (
                ("model", "init_seed"),
                ("train", "seed"),
                ("train", "balance_seed"),
                ("forecast", "seed"),
            ):
                self._values[section][key] = str(seed)
        self.base_dir = path.parent

    def get(self, section: str, key: str) -> str:
        return self._values[section][key]

    def getint(self, section: str, key: str) -> int:
        return int(self.get(section, key))

    def getfloat(self, section: str, key: str) -> float:
        return float(self.get(section, key))

    def path(self, section: str, key: str) -> Path:
        """Paths in the config resolve relative to the config file."""
        raw = self.get(section, key)
        if not raw:
            raise ConfigError(f"config value {section}.{key} is required but empty")
        p = Path(raw)
        return p if p.is_absolute() else self.base_dir / p

    def workdir(self) -> Path:
        p = self.path("paths", "workdir")
        p.mkdir(parents=True, exist_ok=True)
        return p

    def window_config(self) -> ds.WindowConfig:
        return ds.WindowConfig(
            input_steps=self.getint("window", "input_steps"),
            output_steps=self.getint("window", "output_steps"),
            stride_train=self.getint("window", "stride_train"),
            stride_daily=self.getint("window", "stride_daily"),
        )

    def label_config(self) -> ds.LabelConfig:
        return ds.LabelConfig(
            high_kp_threshold=self.getfloat("label", "high_kp_threshold"),
            quiet_upper=self.getfloat("label", "quiet_upper"),
            storm_lower=self.getfloat("label", "storm_lower"),
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(
            alpha=self.getfloat("loss", "alpha"),
            lambda_align=self.getfloat("loss", "lambda_align"),
            lambda_l2=self.getfloat("loss", "lambda_l2"),
            wasserstein_variant=self.get("loss", "wasserstein_variant"),
        )

    def train_config(self) -> tr.TrainConfig:
        return tr.TrainConfig(
            lr=self.getfloat("train", "lr"),
            batch_size=self.getint("train", "batch_size"),
            max_epochs=self.getint("train", "max_epochs"),
            patience=self.getint("train", "patience"),
            lr_factor=self.getfloat("train", "lr_factor"),
            lr_patience=self.getint("train", "lr_patience"),
            lr_floor=self.getfloat("train", "lr_floor"),
            val_fraction=self.getfloat("train", "val_fraction"),
            seed=self.getint("train", "seed"),
        )

    def model_config(self, img_dim: int, sat_dim: int) -> ModelConfig:
        return ModelConfig(
            img_dim=img_dim,
            sat_dim=sat_dim,
            kp_dim=1,
            model_dim=self.getint("model", "model_dim"),
            heads=self.getint("model", "heads"),
            ff_dim=self.getint("model", "ff_dim"),
            dropout_rate=self.getfloat("model", "dropout"),
            align_bins=self.getint("model", "align_bins"),
            output_steps=self.getint("window", "output_steps"),
            conv_width=self.getint("model", "conv_width"),
        )

    def forecast_config(self) -> fc.ForecastConfig:
        horizons = tuple(
            int(h) for h in self.get("forecast", "horizons").split(",") if h.strip()
        )
        max_days = self.get("forecast", "max_days").strip()
        return fc.ForecastConfig(
            window=self.window_config(),
            labels=self.label_config(),
            loss=self.loss_config(),
            horizons=horizons,
            finetune_epochs=self.getint("forecast", "finetune_epochs"),
            finetune_lr=self.getfloat("forecast", "finetune_lr"),
            seed=self.getint("forecast", "seed"),
            max_days=int(max_days) if max_days else None,
        )


def _load_sentinels(cfg: Config) -> ing.SentinelConfig:
    raw = cfg.get("ingest", "sentinels_file")
    if not raw:
        return ing.SentinelConfig()
    table: dict[str, tuple[float, ...]] = {}
    with open(cfg.path("ingest", "sentinels_file"), "r", encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            table[row[0]] = tuple(float(v) for v in row[1:])
    return ing.SentinelConfig(table)


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(cfg: Config) -> int:
    merged = ing.ingest_pipeline(
        cfg.path("ingest", "satellite"),
        cfg.path("ingest", "kp"),
        cfg.path("ingest", "imgfeat"),
        sentinels=_load_sentinels(cfg),
    )
    out = cfg.workdir() / "merged.csv"
    ing.save_timetable(merged, out)
    print(f"ingested {merged.n_rows} hourly rows x {len(merged.columns)} columns -> {out}")
    return 0


def cmd_prepare(cfg: Config) -> int:
    workdir = cfg.workdir()
    merged = ing.load_timetable(workdir / "merged.csv")
    table3h = ds.resample_3h_mean(merged)
    train_tbl, test_tbl = ds.split_by_date(
        table3h,
        cfg.get("split", "train_end"),
        cfg.get("split", "test_start"),
        cfg.get("split", "test_end"),
    )
    ing.save_timetable(train_tbl, workdir / "train_3h.csv")
    ing.save_timetable(test_tbl, workdir / "test_3h.csv")

    wcfg, lcfg = cfg.window_config(), cfg.label_config()
    windows, schema = ds.make_windows(train_tbl, wcfg, lcfg)
    core, val = tr.chronological_split(windows, cfg.getfloat("train", "val_fraction"))
    balanced = ds.expand_balance(core, rng_seed=cfg.getint("train", "balance_seed"))
    ds.save_samples(workdir / "shards" / "train", balanced, schema)
    ds.save_samples(workdir / "shards" / "val", val, schema)
    print(
        f"prepared {len(windows)} windows: {len(core)} train -> {len(balanced)} balanced, "
        f"{len(val)} validation; test table {test_tbl.n_rows} rows"
    )
    return 0


def cmd_fit_transforms(cfg: Config) -> int:
    workdir = cfg.workdir()
    train_tbl = ing.load_timetable(workdir / "train_3h.csv")
    names = train_tbl.column_names()
    img_cols = [n for n in names if n.startswith("img_")]
    sat_cols = [n for n in names if not n.startswith("img_") and n != "Kp"]
    exclude = tuple(
        c for c in cfg.get("features", "normalize_exclude").split(",")
        if c.strip() and c in sat_cols
    )
    transform = ft.fit_feature_transform(
        train_tbl,
        img_cols,
        sat_cols,
        k=cfg.getint("features", "pca_components"),
        exclude=exclude,
    )
    out = workdir / "transform.kpft"
    ft.save_transform(transform, out)
    print(f"fitted transform: {transform.n_components} components, "
          f"{len(sat_cols)} satellite columns -> {out}")
    return 0


def _load_transformed_samples(cfg: Config, shard: str):
    workdir = cfg.workdir()
    samples, schema = ds.load_samples(workdir / "shards" / shard)
    transform = ft.load_transform(workdir / "transform.kpft")
    return [
        ft.transform_sample(transform, s, list(schema.sat_columns)) for s in samples
    ], schema, transform


def cmd_train(cfg: Config) -> int:
    workdir = cfg.workdir()
    train_samples, schema, transform = _load_transformed_samples(cfg, "train")
    val_samples, _, _ = _load_transformed_samples(cfg, "val")
    mcfg = cfg.model_config(
        img_dim=transform.n_components, sat_dim=len(schema.sat_columns)
    )
    params0 = init_params(mcfg, seed=cfg.getint("model", "init_seed"))
    best, history = tr.train_loop(
        train_samples,
        params0,
        cfg.loss_config(),
        cfg.train_config(),
        val_samples=val_samples,
        log_path=workdir / "batches.log",
        checkpoint_dir=workdir / "checkpoints",
    )
    save_checkpoint(best.arrays(), workdir / "model.kpck")
    tr.save_history(history, workdir / "history.tsv")
    final = history[-1]
    print(
        f"trained {len(history)} epochs; best val loss "
        f"{min(h['val_total'] for h in history):.6f}; "
        f"val acc3 {final['val_acc3']:.3f} -> {workdir / 'model.kpck'}"
    )
    return 0


def cmd_forecast(cfg: Config) -> int:
    workdir = cfg.workdir()
    test_tbl = ing.load_timetable(workdir / "test_3h.csv")
    transform = ft.load_transform(workdir / "transform.kpft")
    names = test_tbl.column_names()
    img_cols = [n for n in names if n.startswith("img_")]
    sat_cols = [n for n in names if not n.startswith("img_") and n != "Kp"]

    img_block = ft.apply_pca(transform, ft.standardize_rows(test_tbl.select(img_cols).values))
    sat_block = ft.normalize_columns(transform, test_tbl.select(sat_cols).values)
    columns = (
        [ing.Column(f"img_{i:03d}") for i in range(img_block.shape[1])]
        + [ing.Column(n) for n in sat_cols]
        + [ing.Column("Kp")]
    )
    values = np.hstack([img_block, sat_block, test_tbl.column("Kp")[:, None]])
    transformed = ing.TimeTable(
        test_tbl.timestamps, columns, values, np.zeros(values.shape, dtype=bool)
    )

    mcfg = cfg.model_config(img_dim=transform.n_components, sat_dim=len(sat_cols))
    arrays = load_checkpoint(workdir / "model.kpck")
    params = ModelParams(mcfg, arrays)
    fcfg = cfg.forecast_config()
    report = fc.run_walkforward(params, transformed, fcfg, transform=transform)
    fc.save_report(report, workdir / "report.tsv")
    print(f"walk-forward produced {report.n_groups()} (day, horizon) groups, "
          f"{len(report.rows)} rows -> {workdir / 'report.tsv'}")
    return 0


def cmd_report(cfg: Config) -> int:
    workdir = cfg.workdir()
    report = fc.load_report(workdir / "report.tsv")
    summaries = rpt.error_summary(report)
    rpt.save_summaries(summaries, workdir / "summary.tsv")
    files = rpt.emit_plots(summaries, report, workdir / "plots")
    baseline_path = cfg.get("report", "baseline")
    if baseline_path:
        baseline = rpt.load_baseline(
            cfg.path("report", "baseline"), cfg.get("report", "baseline_format")
        )
        comparison = rpt.compare_baseline(report, baseline)
        rpt.save_comparison(comparison, workdir / "comparison.tsv")
        print(f"compared against baseline over {len(comparison.deltas)} steps")
    print(f"summaries for horizons {sorted(summaries)}; {len(files)} plots")
    return 0


def cmd_fetch(cfg: Config) -> int:
    result = run_fetch(cfg.path("fetch", "manifest"), cfg.path("fetch", "out_dir"))
    print(
        f"fetched {len(result.downloaded)}, skipped {len(result.skipped)}, "
        f"failed {len(result.failed)}"
    )
    if not result.ok:
        for name, reason in result.failed:
            print(f"  {name}: {reason}", file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "prepare": cmd_prepare,
    "fit-transforms": cmd_fit_transforms,
    "train": cmd_train,
    "forecast": cmd_forecast,
    "report": cmd_report,
    "fetch": cmd_fetch,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kpcast",
        description="Multimodal Kp-index forecasting pipeline",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="INI configuration file")
        p.add_argument("--seed", type=int, default=None,
                       help="override every stage seed")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a single config value")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles --help and usage errors
        return int(exc.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = Config(args.config, overrides=args.set, seed=args.seed)
        return COMMANDS[args.command](cfg)
    except KpcastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
