"""CLI surface: a directory of synthetic images flows to a feature file the
forecasting pipeline can read."""

import numpy as np
import pytest
from PIL import Image

from imgfeat.cli import main

from kpcast.ingest import read_feature_file


def _write_png(path, array):
    Image.fromarray((np.clip(array, 0, 1) * 255).astype(np.uint8)).save(path)


@pytest.fixture
def image_dir(tmp_path):
    rng = np.random.default_rng(0)
    d = tmp_path / "images"
    d.mkdir()
    bright = rng.random((64, 64)) * 0.5 + 0.5
    _write_png(d / "20240511_0000.png", bright)
    _write_png(d / "20240511_0100.png", bright * 0.95)
    _write_png(d / "20240511_0200.png", np.zeros((64, 64)))  # rejected by QC
    return d


def test_cli_writes_readable_feature_file(image_dir, tmp_path, capsys):
    out = tmp_path / "features.bin"
    rc = main(["--input-dir", str(image_dir), "--output", str(out),
               "--binary", "--no-pretrained"])
    assert rc == 0
    assert "wrote 2 hourly records" in capsys.readouterr().out
    table = read_feature_file(out)
    assert table.n_rows == 2
    assert len(table.columns) == 768


def test_cli_missing_directory(tmp_path, capsys):
    rc = main(["--input-dir", str(tmp_path / "nope"), "--output",
               str(tmp_path / "o.txt"), "--no-pretrained"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_cli_bad_qc_flags(image_dir, tmp_path):
    rc = main(["--input-dir", str(image_dir), "--output", str(tmp_path / "o.txt"),
               "--inner", "0.9", "--outer", "0.8", "--no-pretrained"])
    assert rc == 1


def test_cli_usage_error():
    assert main(["--nonsense"]) == 2
    assert main(["--help"]) == 0
