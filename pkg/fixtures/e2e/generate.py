"""Regenerate the bundled end-to-end fixture: 200 hourly rows of synthetic
satellite data, a matching 3-hourly Kp series, a binary image-feature file,
a baseline forecast, and the pipeline config. Deterministic; run from this
directory:

    python generate.py
"""

import csv
from pathlib import Path

import numpy as np

from kpcast.ingest import SATELLITE_COLUMNS, format_iso, parse_iso, write_feature_file

HERE = Path(__file__).parent
N_HOURS = 200
START = parse_iso("2024-01-01T00:00:00")
IMG_DIM = 768

# Kp regime blocks (hour range -> Kp value on the thirds grid)
KP_BLOCKS = [(0, 60, 2.0), (60, 120, 5.0), (120, N_HOURS, 3.0)]


def kp_at(hour: int) -> float:
    for lo, hi, kp in KP_BLOCKS:
        if lo <= hour < hi:
            return kp
    raise ValueError(hour)


def write_satellite(rng: np.random.Generator) -> None:
    feature_cols = SATELLITE_COLUMNS[3:]
    rows = []
    for h in range(N_HOURS):
        kp = kp_at(h)
        base = {
            "YEAR": 2024,
            "DOY": 1 + h // 24,
            "Hour": h % 24,
            "SW Plasma Speed, km/s": 300.0 + 50.0 * kp + rng.normal(0, 5.0),
            "SW Proton Density, N/cm^3": 4.0 + 0.5 * kp + rng.normal(0, 0.2),
            "Scalar B, nT": 5.0 + kp + rng.normal(0, 0.3),
        }
        row = [base["YEAR"], base["DOY"], base["Hour"]]
        for name in feature_cols:
            if name in base:
                row.append(round(base[name], 4))
            else:
                row.append(round(rng.normal(0, 1.0), 4))
        rows.append(row)
    # a few sentinel hits so sanitize + interpolation have work to do
    b_idx = 3 + feature_cols.index("Scalar B, nT")
    for h in (40, 41, 150):
        rows[h][b_idx] = 999.9
    t_idx = 3 + feature_cols.index("SW Plasma Temperature, K")
    rows[75][t_idx] = 9999999.0

    with open(HERE / "satellite.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SATELLITE_COLUMNS)
        writer.writerows(rows)


def write_kp() -> None:
    with open(HERE / "kp.csv", "w", encoding="utf-8") as fh:
        fh.write("timestamp,kp\n")
        for h in range(0, N_HOURS, 3):
            ts = START + np.timedelta64(h * 3600, "s")
            fh.write(f"{format_iso(ts)},{kp_at(h)}\n")


def write_imgfeat(rng: np.random.Generator) -> None:
    hours = START + np.arange(N_HOURS) * np.timedelta64(3600, "s")
    # low-rank structure (tied to the Kp regime) plus noise, so PCA has signal
    basis = rng.standard_normal((3, IMG_DIM))
    weights = np.array([[kp_at(h), np.sin(h / 24.0), 1.0] for h in range(N_HOURS)])
    vectors = weights @ basis + 0.1 * rng.standard_normal((N_HOURS, IMG_DIM))
    write_feature_file(hours, vectors, HERE / "imgfeat.bin", binary=True)


def write_baseline() -> None:
    # one (day, horizon) group exists for this geometry: boundary at hour 174
    boundary = START + np.timedelta64(174 * 3600, "s")
    with open(HERE / "baseline.tsv", "w", encoding="utf-8") as fh:
        fh.write("day\thorizon\tstep_timestamp\tkp\n")
        for j in range(8):
            ts = boundary + np.timedelta64(j * 3 * 3600, "s")
            hour = 174 + 3 * j
            kp = min(kp_at(hour) + 1.0 / 3.0, 9.0)  # observed plus a fixed offset
            fh.write(f"{format_iso(boundary)}\t1\t{format_iso(ts)}\t{kp!r}\n")


CONFIG = """\
[paths]
workdir = out

[ingest]
satellite = satellite.csv
kp = kp.csv
imgfeat = imgfeat.bin

[split]
train_end = 2024-01-04T18:00:00Z
test_start = 2024-01-04T18:00:00Z
test_end = 2024-01-09T06:00:00Z

[window]
input_steps = 4
output_steps = 24
stride_train = 1
stride_daily = 8

[features]
pca_components = 16
normalize_exclude =

[model]
model_dim = 8
heads = 2
ff_dim = 16
dropout = 0.1
align_bins = 8

[train]
lr = 0.001
batch_size = 4
max_epochs = 3
patience = 5
val_fraction = 0.2

[forecast]
horizons = 1
finetune_epochs = 1
finetune_lr = 0.0001

[report]
baseline = baseline.tsv
"""


def main() -> None:
    rng = np.random.default_rng(20240101)
    write_satellite(rng)
    write_kp()
    write_imgfeat(rng)
    write_baseline()
    (HERE / "config.ini").write_text(CONFIG, encoding="utf-8")
    print(f"fixture written under {HERE}")


if __name__ == "__main__":
    main()
