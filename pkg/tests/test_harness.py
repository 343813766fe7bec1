import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccmar.config import load_shipped
from ccmar.errors import ConfigError
from ccmar.estimators import CCMAR_IF, CCMAR_IWOR, EstimateRecord
from ccmar.harness import (
    ReplicateRecord,
    ScenarioResults,
    default_workers,
    fence_mask,
    flag_report,
    run_replicate,
    run_scenario,
    summarize,
)


def test_fence_drops_far_outliers_and_nan():
    ates = np.array([0.1, 0.2, 0.3, 0.25, 0.15, 50.0, np.nan])
    np.testing.assert_array_equal(fence_mask(ates), [1, 1, 1, 1, 1, 0, 0])
    assert not fence_mask(np.array([np.nan, np.inf])).any()


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60))
def test_fence_keeps_median(values):
    v = np.array(values)
    keep = fence_mask(v)
    assert keep.any()
    assert np.all(np.abs(v[keep] - np.median(v)) <= 10 * np.subtract(*np.percentile(v, [75, 25])) + 1e-9)


def test_summary_metrics():
    rows = summarize({CCMAR_IF: [0.19, 0.21, 0.20], "or/plain/none": [0.1, 0.2, 0.4, 0.3]}, 0.2)
    r_if, r_or = rows
    assert abs(r_if.pct_bias) < 1e-9 and r_if.relative_uncertainty == 1.0
    assert abs(r_or.pct_bias - 25.0) < 1e-9
    assert abs(r_or.pct_m_bias - 25.0) < 1e-9
    assert abs(r_or.se - np.std([0.1, 0.2, 0.4, 0.3], ddof=1)) < 1e-15
    assert abs(r_or.relative_uncertainty - r_or.se / r_if.se) < 1e-12


def test_relative_uncertainty_ratio():
    base = np.array([-1.0, 1.0])
    rows = summarize({CCMAR_IF: 0.2 + 0.006 / math.sqrt(2) * base,
                      CCMAR_IWOR: 0.2 + 0.029 / math.sqrt(2) * base}, 0.2)
    assert abs(rows[1].relative_uncertainty - 0.029 / 0.006) < 1e-9
    assert f"{rows[1].relative_uncertainty:.3f}" == "4.833"


def test_zero_truth_gives_absolute_bias():
    rows = summarize({CCMAR_IF: [0.01, 0.03]}, 0.0)
    assert rows[0].absolute and abs(rows[0].pct_bias - 0.02) < 1e-15


def test_summary_errors():
    with pytest.raises(ConfigError):
        summarize({"or/plain/none": [0.1]}, 0.2)
    with pytest.raises(ConfigError):
        summarize({CCMAR_IF: [np.nan]}, 0.2)
    with pytest.raises(ConfigError):
        summarize({CCMAR_IF: [0.1]}, math.nan)


def test_dropped_counts_fence_and_failures():
    rows = summarize({CCMAR_IF: [0.2, 0.21, 0.19, 0.2, 90.0, np.nan]}, 0.2)
    assert rows[0].dropped == 2 and rows[0].kept == 4


def test_flag_report_counts():
    recs = [ReplicateRecord(0, EstimateRecord(CCMAR_IF, 1.0, 0.8, 0.2, frozenset({"clipped"}))),
            ReplicateRecord(1, EstimateRecord.failed(CCMAR_IF, RuntimeError("x")))]
    counts = flag_report(ScenarioResults(recs))
    assert counts["clipped"] == 1 and counts["failed"] == 1 and counts["extreme"] == 0


@pytest.fixture(scope="module")
def small_config():
    return load_shipped("scenario1").with_updates(n=300, replicates=6, master_seed=5,
                                                  suite=(CCMAR_IF, CCMAR_IWOR, "or/plain/none"))


def test_results_do_not_depend_on_workers(small_config):
    a = run_scenario(small_config, workers=1)
    b = run_scenario(small_config, workers=3)
    assert [(r.replicate, r.record) for r in a.records] == [(r.replicate, r.record) for r in b.records]


def test_replicate_subset_matches_full_run(small_config):
    full = run_scenario(small_config, workers=1)
    part = run_scenario(small_config, workers=1, replicates=[4])
    assert [r.record for r in part.records] == [r.record for r in full.records if r.replicate == 4]


def test_run_replicate_never_raises(small_config, monkeypatch):
    import ccmar.harness as h

    def boom(*a, **k):
        raise FloatingPointError("synthetic")

    monkeypatch.setattr(h, "generate", boom)
    recs = run_replicate(small_config, 0)
    assert [r.estimator for r in recs] == list(small_config.suite)
    assert all(r.error and "synthetic" in r.error for r in recs)


def test_default_workers_env(monkeypatch):
    monkeypatch.delenv("CCMAR_WORKERS", raising=False)
    assert default_workers() == 1
    monkeypatch.setenv("CCMAR_WORKERS", "4")
    assert default_workers() == 4
    for bad in ("0", "many"):
        monkeypatch.setenv("CCMAR_WORKERS", bad)
        with pytest.raises(ConfigError):
            default_workers()


@pytest.mark.parametrize("kw", [{"n": 10}, {"replicates": 0}, {"workers": 0}, {"suite": ()},
                                {"suite": ("or/plain/bogus",)}, {"truth_method": "guess"}])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        load_shipped("scenario1").with_updates(**kw)
