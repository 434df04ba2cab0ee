"""Acceptance gate for the image-feature component: the QC decision suite
and the bit-exact round trip into the forecasting pipeline's reader."""

import time
from datetime import datetime, timezone

import numpy as np
import pytest

from imgfeat.emit import emit_feature_file
from imgfeat.extract import FEATURE_DIM, FeatureRecord
from imgfeat.qc import QcConfig, qc_filter, ring_dark_ratio, should_discard

from kpcast.ingest import read_feature_file


def _announce(name, elapsed, budget):
    print(f"[PASS] {name} ({elapsed:.1f}s, budget {budget:.0f}s)")
    assert elapsed < budget


def test_acceptance_qc_suite():
    start = time.time()
    qc = QcConfig()
    assert not qc_filter(np.zeros((128, 128)), qc)  # all-dark -> discard
    assert qc_filter(np.ones((128, 128)), qc)  # all-bright -> keep
    assert not should_discard(0.14, qc)  # boundary -> keep (strict inequality)
    half = np.ones((257, 257))
    half[:, :128] = 0.0
    assert ring_dark_ratio(half, qc) == pytest.approx(0.5, abs=0.02)
    _announce("qc suite", time.time() - start, 10.0)


def test_acceptance_binary_roundtrip_bit_exact(tmp_path):
    start = time.time()
    rng = np.random.default_rng(0)
    records = [
        FeatureRecord(
            datetime(2024, 5, 11, h, tzinfo=timezone.utc),
            rng.standard_normal(FEATURE_DIM),
        )
        for h in range(4)
    ]
    path = tmp_path / "features.bin"
    emit_feature_file(records, path, binary=True)
    table = read_feature_file(path)
    assert table.values.shape == (4, FEATURE_DIM)
    for i, rec in enumerate(records):
        assert table.values[i].tobytes() == rec.vector.tobytes()
    _announce("binary round trip", time.time() - start, 10.0)
