"""Walk-forward forecasting over a synthetic month: fine-tune on each day's
newest fully historical window, predict 1-3 days ahead, and summarize the
errors per horizon."""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent / "tests"))
from synthetic import make_synthetic_table, make_synthetic_windows  # noqa: E402

from kpcast.dataset import LabelConfig, WindowConfig  # noqa: E402
from kpcast.forecast import ForecastConfig, run_walkforward  # noqa: E402
from kpcast.loss import LossConfig  # noqa: E402
from kpcast.model import ModelConfig, init_params  # noqa: E402
from kpcast.report import error_summary  # noqa: E402
from kpcast.train import TrainConfig, train_loop  # noqa: E402

cfg = ModelConfig(img_dim=4, sat_dim=1, model_dim=8, heads=2, ff_dim=16,
                  dropout_rate=0.0, align_bins=5, output_steps=24)

# pretrain on one synthetic stretch, walk forward over a later one
train_samples, _, _ = make_synthetic_windows(n_rows=240, block_len=80, input_steps=8,
                                             seed=0)
tcfg = TrainConfig(lr=3e-3, batch_size=32, max_epochs=12, patience=12,
                   val_fraction=0.15, seed=0)
params, history = train_loop(train_samples, init_params(cfg, seed=0), LossConfig(), tcfg)
print(f"pretrained {len(history)} epochs, final val acc3 {history[-1]['val_acc3']:.3f}")

test_table = make_synthetic_table(240, block_len=60, seed=42,
                                  start="2024-06-01T00:00:00")
fcfg = ForecastConfig(
    window=WindowConfig(input_steps=8, output_steps=24, stride_daily=8),
    labels=LabelConfig(),
    loss=LossConfig(),
    horizons=(1, 2, 3),
    finetune_epochs=2,
    finetune_lr=1e-4,
    seed=0,
)
report = run_walkforward(params, test_table, fcfg)
print(f"walk-forward: {report.n_groups()} (day, horizon) groups, {len(report.rows)} steps")

first_day = report.days()[0]
print(f"\nfirst fine-tune day {first_day}:")
for r in report.group(first_day, 1):
    print(f"  {r.step_timestamp}  predicted {r.kp_pred_expected:.2f} "
          f"(argmax {r.kp_pred_argmax:.2f})  observed {r.kp_observed:.2f}")

print(f"\n{'horizon':>8} {'n':>5} {'MAE':>7} {'RMSE':>7} {'bias':>7}")
for h, s in sorted(error_summary(report).items()):
    print(f"{h:>8} {s.n:>5} {s.mae:>7.3f} {s.rmse:>7.3f} {s.bias:>7.3f}")
