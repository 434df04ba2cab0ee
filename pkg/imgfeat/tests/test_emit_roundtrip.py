"""Emission format checks and the round trip through the forecasting
pipeline's reader: the binary variant must reproduce vectors bit-exactly."""

from datetime import datetime, timezone

import numpy as np
import pytest

from imgfeat.emit import BINARY_MAGIC, TEXT_HEADER, emit_feature_file
from imgfeat.extract import FEATURE_DIM, FeatureRecord

from kpcast.ingest import read_feature_file


def record(hour_str, rng):
    hour = datetime.fromisoformat(hour_str).replace(tzinfo=timezone.utc)
    return FeatureRecord(hour, rng.standard_normal(FEATURE_DIM))


def test_empty_file_is_valid(tmp_path):
    text = tmp_path / "empty.txt"
    emit_feature_file([], text)
    assert text.read_text().startswith(TEXT_HEADER)
    table = read_feature_file(text)
    assert table.n_rows == 0

    binary = tmp_path / "empty.bin"
    emit_feature_file([], binary, binary=True)
    assert binary.read_bytes().startswith(BINARY_MAGIC)
    assert read_feature_file(binary).n_rows == 0


def test_duplicate_hour_rejected(tmp_path):
    rng = np.random.default_rng(0)
    records = [record("2024-05-11T03:00", rng), record("2024-05-11T03:00", rng)]
    with pytest.raises(ValueError, match="duplicate"):
        emit_feature_file(records, tmp_path / "dup.txt")


def test_records_sorted_by_hour(tmp_path):
    rng = np.random.default_rng(1)
    records = [record("2024-05-11T06:00", rng), record("2024-05-11T03:00", rng)]
    path = tmp_path / "sorted.bin"
    emit_feature_file(records, path, binary=True)
    table = read_feature_file(path)
    assert [str(t) for t in table.timestamps] == [
        "2024-05-11T03:00:00",
        "2024-05-11T06:00:00",
    ]
    assert np.array_equal(table.values[0], records[1].vector)


def test_binary_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(2)
    records = [
        record("2024-05-11T00:00", rng),
        record("2024-05-11T01:00", rng),
        record("2024-05-11T02:00", rng),
    ]
    path = tmp_path / "features.bin"
    emit_feature_file(records, path, binary=True)
    table = read_feature_file(path)
    assert table.values.shape == (3, FEATURE_DIM)
    for i, rec in enumerate(records):
        assert table.values[i].tobytes() == rec.vector.tobytes()  # bit-exact


def test_text_roundtrip_exact_via_repr(tmp_path):
    rng = np.random.default_rng(3)
    records = [record("2024-05-11T00:00", rng)]
    path = tmp_path / "features.txt"
    emit_feature_file(records, path)
    table = read_feature_file(path)
    assert np.array_equal(table.values[0], records[0].vector)
