"""Metric oracles over forecast reports, baseline joins, the NOAA text
adapter, and deterministic plot emission."""

import numpy as np
import pytest

from kpcast.errors import MergeError, SchemaError, ValidationError
from kpcast.forecast import ForecastReport, ForecastRow
from kpcast.ingest import parse_iso
from kpcast.report import (
    BaselineForecast,
    BaselineRow,
    compare_baseline,
    emit_plots,
    error_summary,
    load_baseline,
    parse_noaa_3day,
    save_baseline,
)


def make_report(errors_by_horizon, day="2024-05-08T00:00:00", kp_observed=3.0):
    rows = []
    day_ts = parse_iso(day)
    for h, errors in errors_by_horizon.items():
        for j, e in enumerate(errors):
            ts = day_ts + np.timedelta64((h - 1) * 8 * 10800 + j * 10800, "s")
            rows.append(
                ForecastRow(
                    day=day_ts,
                    horizon=h,
                    step_timestamp=ts,
                    kp_pred_expected=kp_observed + e,
                    kp_pred_argmax=kp_observed,
                    kp_observed=kp_observed,
                )
            )
    return ForecastReport(rows)


def test_error_summary_hand_values():
    summary = error_summary(make_report({1: [1.0, -1.0]}))[1]
    assert summary.mae == pytest.approx(1.0, abs=1e-12)
    assert summary.rmse == pytest.approx(1.0, abs=1e-12)
    assert summary.bias == pytest.approx(0.0, abs=1e-12)
    assert summary.n == 2

    zero = error_summary(make_report({1: [0.0, 0.0, 0.0]}))[1]
    assert zero.mae == zero.rmse == zero.bias == 0.0

    pair = error_summary(make_report({2: [0.0, 3.0]}))[2]
    assert pair.mae == pytest.approx(1.5, abs=1e-12)
    assert pair.rmse == pytest.approx(np.sqrt(4.5), abs=1e-9)
    assert pair.rmse == pytest.approx(2.1213, abs=1e-4)


def test_error_summary_invariants():
    rng = np.random.default_rng(0)
    errors = rng.uniform(-4, 4, 50).tolist()
    summary = error_summary(make_report({1: errors}))[1]
    assert summary.rmse >= abs(summary.bias)
    assert summary.hist_counts.sum() == summary.n
    # permutation invariance over report rows
    shuffled = error_summary(make_report({1: errors[::-1]}))[1]
    assert shuffled.mae == summary.mae
    assert np.array_equal(shuffled.hist_counts, summary.hist_counts)


def test_error_histogram_bin_width():
    summary = error_summary(make_report({1: [0.0]}))[1]
    widths = np.diff(summary.hist_edges)
    assert np.allclose(widths, 1.0 / 3.0, atol=1e-12)
    assert len(summary.hist_counts) == 54


def baseline_from_report(report, kp=None):
    rows = [
        BaselineRow(r.day, r.horizon, r.step_timestamp,
                    r.kp_observed if kp is None else kp)
        for r in report.rows
    ]
    return BaselineForecast(rows)


def test_compare_baseline_identical_to_observations():
    report = make_report({1: [0.5, -0.5], 2: [1.0, 1.0]})
    cmp = compare_baseline(report, baseline_from_report(report))
    for h in (1, 2):
        assert cmp.baseline[h].mae == 0.0
        assert cmp.model[h].n == cmp.baseline[h].n


def test_compare_baseline_model_equals_baseline():
    report = make_report({1: [0.25, 0.25]})
    base = BaselineForecast(
        [BaselineRow(r.day, r.horizon, r.step_timestamp, r.kp_pred_expected)
         for r in report.rows]
    )
    cmp = compare_baseline(report, base)
    assert cmp.model[1].mae == pytest.approx(cmp.baseline[1].mae, abs=1e-12)
    assert cmp.model[1].rmse == pytest.approx(cmp.baseline[1].rmse, abs=1e-12)


def test_compare_baseline_hand_fixture():
    report = make_report({1: [1.0, -2.0]}, kp_observed=4.0)
    base = baseline_from_report(report, kp=5.0)  # baseline always predicts 5
    cmp = compare_baseline(report, base)
    assert cmp.model[1].mae == pytest.approx(1.5)
    assert cmp.baseline[1].mae == pytest.approx(1.0)
    deltas = [d[-1] for d in cmp.deltas]
    assert deltas == [0.0, 1.0]  # |1|-|1| and |-2|-|1|


def test_compare_baseline_common_support_only():
    report = make_report({1: [1.0, 1.0], 2: [2.0, 2.0]})
    partial = BaselineForecast(
        [BaselineRow(r.day, r.horizon, r.step_timestamp, 3.0)
         for r in report.rows if r.horizon == 1]
    )
    cmp = compare_baseline(report, partial)
    assert list(cmp.model) == [1]
    assert cmp.model[1].n == cmp.baseline[1].n == 2


def test_compare_baseline_empty_join():
    report = make_report({1: [1.0]})
    other = BaselineForecast(
        [BaselineRow(parse_iso("2030-01-01T00:00:00"), 1,
                     parse_iso("2030-01-01T00:00:00"), 2.0)]
    )
    with pytest.raises(MergeError):
        compare_baseline(report, other)


def test_baseline_validation_and_roundtrip(tmp_path):
    with pytest.raises(ValidationError):
        BaselineForecast([BaselineRow(parse_iso("2024-01-01T00:00:00"), 1,
                                      parse_iso("2024-01-01T00:00:00"), 9.5)])
    with pytest.raises(ValidationError):
        BaselineForecast([BaselineRow(parse_iso("2024-01-01T00:00:00"), 1,
                                      parse_iso("2024-01-01T01:00:00"), 3.0)])
    base = BaselineForecast([BaselineRow(parse_iso("2024-01-01T00:00:00"), 1,
                                         parse_iso("2024-01-01T03:00:00"), 3.0)])
    path = tmp_path / "base.tsv"
    save_baseline(base, path)
    assert load_baseline(path).rows == base.rows


NOAA_SAMPLE = """:Product: 3-Day Forecast
:Issued: 2024 May 08 1230 UTC
# Prepared by the U.S. Dept. of Commerce, NOAA, Space Weather Prediction Center
A. NOAA Geomagnetic Activity Observation and Forecast

NOAA Kp index breakdown May 08-May 10 2024

             May 08       May 09       May 10
00-03UT        3.33         2.67         2.00
03-06UT        2.67         3.00         2.33
06-09UT        3.00         2.33         2.67
09-12UT        2.33         4.00         4.33
12-15UT        2.00         3.67         5.67 (G1)
15-18UT        2.67         3.33         6.00 (G2)
18-21UT        3.00         2.67         5.33 (G1)
21-00UT        3.67         2.33         4.67

B. NOAA Solar Radiation Activity Observation and Forecast
"""


def test_noaa_adapter_parses_breakdown():
    base = parse_noaa_3day(NOAA_SAMPLE)
    assert len(base.rows) == 24
    issue = parse_iso("2024-05-08T00:00:00")
    assert all(r.day == issue for r in base.rows)
    first = [r for r in base.rows if r.horizon == 1]
    assert len(first) == 8
    assert first[0].kp == 3.33
    assert first[0].step_timestamp == parse_iso("2024-05-08T00:00:00")
    day3 = [r for r in base.rows if r.horizon == 3]
    assert day3[4].kp == 5.67  # severity tag stripped
    assert day3[4].step_timestamp == parse_iso("2024-05-10T12:00:00")
    with pytest.raises(SchemaError):
        parse_noaa_3day("no breakdown here")


def test_emit_plots_counts_and_determinism(tmp_path):
    report = make_report({1: [0.5, -0.5, 1.0]})
    summaries = error_summary(report)
    first = emit_plots(summaries, report, tmp_path / "a")
    assert len(first) == 2  # one day plot + one horizon histogram
    again = emit_plots(summaries, report, tmp_path / "b")
    for f1, f2 in zip(first, again):
        assert f1.read_bytes() == f2.read_bytes()


def test_emit_plots_empty_report(tmp_path):
    files = emit_plots({}, ForecastReport([]), tmp_path / "plots")
    assert files == []
