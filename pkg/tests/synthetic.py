"""Synthetic fixtures: tables where Kp is a deterministic threshold function
of one satellite column, arranged in slow blocks so future classes are
predictable from the input window."""

import numpy as np

from kpcast.dataset import LabelConfig, WindowConfig, make_windows
from kpcast.ingest import Column, TimeTable, parse_iso

KP_LEVELS = {-1: 2.0, 0: 13.0 / 3.0, 1: 6.0}  # quiet / active / storm


def make_synthetic_table(
    n_rows: int,
    block_len: int = 80,
    n_img: int = 4,
    seed: int = 0,
    start: str = "2024-01-01T00:00:00",
) -> TimeTable:
    """3-hourly table whose Kp is a threshold function of the `drive` column.

    The drive takes values in {-1, 0, +1} over long blocks, so most windows
    see one regime and the matching Kp level throughout.
    """
    rng = np.random.default_rng(seed)
    n_blocks = n_rows // block_len + 2
    levels = rng.integers(-1, 2, n_blocks)
    drive = np.repeat(levels, block_len)[:n_rows].astype(np.float64)
    kp = np.vectorize(KP_LEVELS.get)(drive.astype(int))
    img = rng.standard_normal((n_rows, n_img))
    noise = rng.standard_normal(n_rows) * 0.05
    values = np.hstack([img, (drive + noise)[:, None], kp[:, None]])
    names = [f"img_{i:03d}" for i in range(n_img)] + ["drive", "Kp"]
    ts = parse_iso(start) + np.arange(n_rows) * np.timedelta64(10800, "s")
    return TimeTable(ts, [Column(n) for n in names], values, np.zeros(values.shape, bool))


def make_synthetic_windows(
    n_rows: int = 240,
    block_len: int = 80,
    input_steps: int = 8,
    seed: int = 0,
    stride: int = 1,
):
    table = make_synthetic_table(n_rows, block_len=block_len, seed=seed)
    wcfg = WindowConfig(input_steps=input_steps, output_steps=24, stride_train=stride)
    samples, schema = make_windows(table, wcfg, LabelConfig(), stride=stride)
    return samples, schema, table
