"""Shared builders: micro model configurations and synthetic window samples."""

import numpy as np
import pytest

from kpcast.dataset import WindowSample
from kpcast.ingest import parse_iso
from kpcast.model import ModelConfig, init_params


MICRO_CONFIG = ModelConfig(
    img_dim=6,
    sat_dim=3,
    kp_dim=1,
    model_dim=8,
    heads=2,
    ff_dim=16,
    dropout_rate=0.0,
    align_bins=5,
    output_steps=2,
    conv_width=3,
)


def build_sample(rng, cfg: ModelConfig, input_steps=4, t0_hours=0, kp_in=None, kp_out=None):
    out = cfg.output_steps
    kp_out = rng.integers(0, 28, out) / 3.0 if kp_out is None else np.asarray(kp_out, float)
    kp_in = rng.integers(0, 28, input_steps) / 27.0 if kp_in is None else np.asarray(kp_in, float)
    return WindowSample(
        t0=parse_iso("2024-01-01T00:00:00") + np.timedelta64(t0_hours * 3600, "s"),
        img_in=rng.standard_normal((input_steps, cfg.img_dim)),
        sat_in=rng.standard_normal((input_steps, cfg.sat_dim)),
        kp_in=kp_in,
        labels28=np.clip(np.rint(kp_out * 3), 0, 27).astype(np.int64),
        labels10=np.clip(np.floor(kp_out), 0, 9).astype(np.int64),
        labels3=np.digitize(kp_out, [4.0, 5.0]).astype(np.int64),
        label_high=(kp_out >= 7.0).astype(np.int64),
        kp_out=kp_out,
    )


@pytest.fixture
def micro_config():
    return MICRO_CONFIG


@pytest.fixture
def micro_params():
    return init_params(MICRO_CONFIG, seed=0)


@pytest.fixture
def micro_sample():
    return build_sample(np.random.default_rng(0), MICRO_CONFIG)
