"""Walk the conditioning chain on the bundled fixture: parse the satellite
table, flag sentinels, resample to the hourly grid, interpolate the gaps,
and merge with the Kp series and image features."""

from pathlib import Path

import numpy as np

from kpcast.ingest import (
    SentinelConfig,
    interpolate_linear,
    merge_by_timestamp,
    parse_kp_series,
    parse_satellite_table,
    read_feature_file,
    resample_hourly_ffill,
    sanitize,
)

fixture = Path(__file__).parent.parent / "fixtures" / "e2e"

sat = parse_satellite_table(fixture / "satellite.csv")
print(f"satellite table: {sat.n_rows} rows, {len(sat.columns)} columns")
print(f"  first timestamp {sat.timestamps[0]}, last {sat.timestamps[-1]}")

sat = sanitize(sat, SentinelConfig())
n_flagged = int(sat.missing.sum())
print(f"sanitize flagged {n_flagged} sentinel cells as missing")

sat = resample_hourly_ffill(sat)
spacing = np.diff(sat.timestamps.astype(np.int64))
print(f"hourly grid: {sat.n_rows} rows, spacing {set(spacing.tolist())} seconds")

sat = interpolate_linear(sat)
print(f"after interpolation: {int(sat.missing.sum())} missing cells remain")

kp = parse_kp_series(fixture / "kp.csv")
img = read_feature_file(fixture / "imgfeat.bin")
print(f"kp series: {len(kp.kp)} 3-hourly values in [{kp.kp.min():.2f}, {kp.kp.max():.2f}]")
print(f"image features: {img.n_rows} hours x {len(img.columns)} dims")

merged = merge_by_timestamp(sat, kp, img)
print(f"merged: {merged.n_rows} rows x {len(merged.columns)} columns")
kp_col = merged.column("Kp")
print(f"  Kp broadcast check: first six hourly values {kp_col[:6].tolist()}")
