"""End-to-end Monte Carlo acceptance criteria.

Each test prints one PASS/FAIL line (also collected into the terminal
summary) and then asserts the criterion at its stated tolerance.
"""

import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from ccmar.cli import main as cli_main
from ccmar.config import load_shipped
from ccmar.dgp import NP_TRUTH
from ccmar.harness import compute_truth, fence_mask, run_scenario, summarize

pytestmark = pytest.mark.acceptance

# Value of the complete-case identified functional under the np-beta design,
# from the independent grid integration in test_dgp.py (diagnostic only).
NP_FUNCTIONAL = 0.255852

S1_SUITE = ("ccmar-if", "ccmar-iwor", "or/plain/none", "ipw/plain/none", "or/pairwise/true-dgp")


@pytest.fixture(scope="session")
def s1_config():
    return load_shipped("scenario1")


@pytest.fixture(scope="session")
def s1_truth(s1_config):
    return compute_truth(s1_config, n_mc=2_000_000, repeats=5)


def _rows(results, truth, reference="ccmar-if"):
    return {r.estimator: r for r in summarize(results, truth, reference=reference)}


def _pct_mc_se(row, truth):
    return 100.0 * row.mc_se / abs(truth)


def test_criterion1_np_beta_exact_truth(criterion):
    config = load_shipped("np-beta").with_updates(n=5000, replicates=250, crossfit_folds=2)
    results = run_scenario(config)
    rows = _rows(results, NP_TRUTH)
    ok = True
    for est, bound in (("ccmar-if", 2.0), ("ccmar-iwor", 2.5)):
        r = rows[est]
        tol = max(bound, 3 * _pct_mc_se(r, NP_TRUTH))
        passed = abs(r.pct_bias) <= tol
        ok &= passed
        functional_bias = 100 * (r.mean - NP_FUNCTIONAL) / NP_FUNCTIONAL
        criterion(f"1 np-beta {est} |%Bias| vs 1/3", passed,
                  f"%Bias={r.pct_bias:+.2f} tol={tol:.2f} mean={r.mean:.4f} "
                  f"(diagnostic: %Bias vs identified functional {NP_FUNCTIONAL} = {functional_bias:+.2f})")
    assert ok


def test_criterion2_scenario1_pattern(criterion, s1_config, s1_truth):
    config = s1_config.with_updates(replicates=500, n=4344, suite=S1_SUITE)
    results = run_scenario(config)
    t = s1_truth.value
    rows = _rows(results, t)
    ok = True

    r = rows["ccmar-if"]
    a = abs(r.pct_bias) <= 2.0 and abs(r.pct_bias) <= 3 * _pct_mc_se(r, t)
    criterion("2a scenario1 ccmar-if unbiased", a,
              f"%Bias={r.pct_bias:+.2f} 3xMCSE%={3 * _pct_mc_se(r, t):.2f} truth={t:.5f}+/-{s1_truth.mc_se:.5f}")
    ok &= a

    for est in ("or/plain/none", "ipw/plain/none"):
        r = rows[est]
        bias = r.mean - t
        b = bias < 0 and abs(bias) > 5 * r.mc_se
        criterion(f"2b scenario1 {est} negative bias", b,
                  f"bias={bias:+.5f} 5xMCSE={5 * r.mc_se:.5f} %Bias={r.pct_bias:+.2f}")
        ok &= b

    r = rows["or/pairwise/true-dgp"]
    c = abs(r.pct_bias) <= 2.0
    criterion("2c scenario1 or/pairwise/true-dgp unbiased", c, f"%Bias={r.pct_bias:+.2f}")
    ok &= c

    d = rows["ccmar-iwor"].se > rows["ccmar-if"].se
    criterion("2d scenario1 SE(iwor) > SE(if)", d,
              f"SE iwor={rows['ccmar-iwor'].se:.4f} if={rows['ccmar-if'].se:.4f}")
    ok &= d
    assert ok


@pytest.mark.parametrize("n", [500, 1000])
def test_criterion3_iwor_skew(criterion, s1_config, s1_truth, n):
    config = s1_config.with_updates(replicates=500, n=n, suite=("ccmar-if", "ccmar-iwor"))
    results = run_scenario(config)
    t = s1_truth.value
    rows = _rows(results, t)
    skew = {}
    for est in ("ccmar-if", "ccmar-iwor"):
        ates = results.ates(est)
        skew[est] = float(stats.skew(ates[fence_mask(ates)]))
    gap = {k: abs(rows[k].pct_m_bias - rows[k].pct_bias) for k in skew}
    s_ok = skew["ccmar-iwor"] > skew["ccmar-if"]
    g_ok = gap["ccmar-iwor"] > gap["ccmar-if"]
    criterion(f"3 n={n} skew(iwor) > skew(if)", s_ok,
              f"skew iwor={skew['ccmar-iwor']:+.3f} if={skew['ccmar-if']:+.3f}")
    criterion(f"3 n={n} |M-Bias - Bias| iwor > if", g_ok,
              f"gap iwor={gap['ccmar-iwor']:.3f} if={gap['ccmar-if']:.3f}")
    assert s_ok and g_ok


def test_criterion4_scenario3_imputation_misspecification(criterion):
    config = load_shipped("scenario3").with_updates(
        replicates=500, suite=("or/plain/simple", "or/plain/true-dgp"))
    results = run_scenario(config)
    simple_all, true_all = results.ates("or/plain/simple"), results.ates("or/plain/true-dgp")
    simple, true = simple_all[fence_mask(simple_all)], true_all[fence_mask(true_all)]
    diff = simple.mean() - true.mean()
    combined = math.sqrt(simple.var(ddof=1) / simple.size + true.var(ddof=1) / true.size)
    ok = abs(diff) > 3 * combined
    # diagnostic only: both estimators share replicates, so the per-replicate
    # difference has a much smaller Monte Carlo SE than the independent sum
    both = fence_mask(simple_all) & fence_mask(true_all)
    paired = (simple_all - true_all)[both]
    paired_se = paired.std(ddof=1) / math.sqrt(paired.size)
    criterion("4 scenario3 gaussian vs true-dgp imputation differ", ok,
              f"mean diff={diff:+.5f} 3x combined MCSE={3 * combined:.5f} "
              f"(diagnostic: 3x paired MCSE={3 * paired_se:.5f})")
    assert ok


def test_criterion5_oracle_suite(criterion):
    root = Path(__file__).resolve().parent
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-m", "oracle", "-p", "no:cacheprovider",
                           str(root)], capture_output=True, text=True)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0
    criterion("5 oracle-equivalence suite", ok, tail)
    assert ok, proc.stdout[-4000:]


def test_criterion6_worker_determinism(criterion, tmp_path):
    outs = []
    for w in (1, 8):
        out = tmp_path / f"w{w}"
        code = cli_main(["run", "--scenario", "scenario1", "--reps", "16", "--n", "600", "--seed", "7",
                         "--workers", str(w), "--truth-value", "0.22", "--out", str(out)])
        assert code == 0
        outs.append((out / "results.csv").read_bytes())
    ok = outs[0] == outs[1]
    criterion("6 results.csv identical for 1 vs 8 workers", ok, f"{len(outs[0])} bytes")
    assert ok
