import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial.hermite import hermgauss
from scipy.special import expit

from ccmar.config import load_shipped
from ccmar.data import CoarsenedData
from ccmar.dgp import default_nuisance_specs, gen_levis, stream
from ccmar.errors import ConfigError
from ccmar.estimators import (
    ALL_ESTIMATORS,
    CCMAR_IF,
    CCMAR_IWOR,
    FLAG_FAILED,
    EstimatorId,
    ate_ipw,
    ate_outcome_regression,
    chi_if,
    chi_iwor,
    complete_case_ate,
    crossfit_ate,
    fit_imputation,
    fold_assignment,
    impute,
    run_estimator_suite,
)
from ccmar.model_fit import FittedGlm, GlmFamily, gauss_hermite
from ccmar.nuisance import LambdaComponent, NuisanceSet

oracle = pytest.mark.oracle

# --- brute-force oracle on a discrete mini-instance ---------------------------
# L_c = L1 (binary); L_p = (L4, L5), both binary, so every L_p integral is a
# finite sum. The outcome integral uses the 20-node Gauss-Hermite rule
# computed directly from numpy.

ETA = {"(Intercept)": -0.3, "L1": 0.9}
MU = {"(Intercept)": 0.1, "L1": 0.4, "A": 0.7}
SIGMA = 0.6
PI = {"(Intercept)": 0.8, "L1": -0.5, "A": 0.6, "Y": 0.9}
LAM4 = {"(Intercept)": -0.2, "L1": 0.5, "A": 0.8, "Y": -1.1, "A:Y": 0.6}
LAM5 = {"(Intercept)": 0.3, "L4": -1.0, "Y": 0.7, "L1": 0.2}


def _fit(coefs, family, disp=None):
    return FittedGlm(tuple(coefs), list(coefs.values()), family, dispersion=disp)


def _mini_set(pi_clip=None):
    lam = (LambdaComponent("L4", _fit(LAM4, GlmFamily.BERNOULLI)),
           LambdaComponent("L5", _fit(LAM5, GlmFamily.BERNOULLI)))
    return NuisanceSet(_fit(ETA, GlmFamily.BERNOULLI), _fit(MU, GlmFamily.GAUSSIAN, SIGMA),
                       _fit(PI, GlmFamily.BERNOULLI), lam, ("L1",), gauss_hermite(20), pi_clip=pi_clip)


def _mini_data(n, seed):
    rng = np.random.default_rng(seed)
    l1 = (rng.random(n) < 0.5).astype(float)
    a = (rng.random(n) < 0.5).astype(float)
    y = 0.1 + 0.4 * l1 + 0.7 * a + SIGMA * rng.standard_normal(n)
    s = (rng.random(n) < 0.6).astype(float)
    s[:2] = [1, 1]
    a[:2] = [0, 1]
    l4 = (rng.random(n) < 0.5).astype(float)
    l5 = (rng.random(n) < 0.5).astype(float)
    return CoarsenedData({"L1": l1, "A": a, "Y": y, "S": s, "L4": l4, "L5": l5}, ("L1",), ("L4", "L5"))


def _o_eta(l1, a):
    p = expit(ETA["(Intercept)"] + ETA["L1"] * l1)
    return p if a == 1 else 1 - p


def _o_pi(l1, a, y):
    return expit(PI["(Intercept)"] + PI["L1"] * l1 + PI["A"] * a + PI["Y"] * y)


def _o_lam(l4, l5, l1, a, y):
    p4 = expit(LAM4["(Intercept)"] + LAM4["L1"] * l1 + LAM4["A"] * a + LAM4["Y"] * y + LAM4["A:Y"] * a * y)
    p5 = expit(LAM5["(Intercept)"] + LAM5["L4"] * l4 + LAM5["Y"] * y + LAM5["L1"] * l1)
    return (p4 if l4 == 1 else 1 - p4) * (p5 if l5 == 1 else 1 - p5)


def _o_beta_gamma(l1, a, l4, l5):
    x, w = hermgauss(20)
    mean = MU["(Intercept)"] + MU["L1"] * l1 + MU["A"] * a
    beta = gamma = 0.0
    for xk, wk in zip(x, w):
        yk = mean + math.sqrt(2) * SIGMA * xk
        lam = _o_lam(l4, l5, l1, a, yk)
        gamma += wk / math.sqrt(math.pi) * lam
        beta += wk / math.sqrt(math.pi) * yk * lam
    return beta, gamma


def _o_xi(l1, a, l4, l5):
    b, g = _o_beta_gamma(l1, a, l4, l5)
    return b / g


def _o_tau(l1, l4, l5):
    return sum(_o_eta(l1, ap) * _o_beta_gamma(l1, ap, l4, l5)[1] for ap in (0, 1))


def _o_b1(l1, a_obs, y, a):
    return sum(_o_xi(l1, a, l4, l5) * _o_lam(l4, l5, l1, a_obs, y)
               for l4, l5 in itertools.product((0, 1), (0, 1)))


def _o_b2(l1, y, a):
    total = 0.0
    for l4, l5 in itertools.product((0, 1), (0, 1)):
        g = _o_beta_gamma(l1, a, l4, l5)[1]
        total += _o_tau(l1, l4, l5) / g * (y - _o_xi(l1, a, l4, l5)) * _o_lam(l4, l5, l1, a, y)
    return total


def _oracle_estimates(rows, a, clip=None):
    iwor = ifs = 0.0
    for r in rows:
        l1, ai, y, s = r["L1"], int(r["A"]), r["Y"], r["S"]
        pi = _o_pi(l1, ai, y)
        if clip is not None:
            pi = min(max(pi, clip[0]), clip[1])
        ind = 1.0 if ai == a else 0.0
        eta_a = _o_eta(l1, a)
        b1 = _o_b1(l1, ai, y, a)
        b2 = _o_b2(l1, y, a)
        term = b1 + ind / eta_a * b2
        if s == 1:
            l4, l5 = r["L4"], r["L5"]
            xi_ = _o_xi(l1, a, l4, l5)
            ratio = _o_tau(l1, l4, l5) / _o_beta_gamma(l1, a, l4, l5)[1]
            iwor += xi_ / pi
            term += (xi_ - b1 + ind / eta_a * (ratio * (y - xi_) - b2)) / pi
        ifs += term
    n = len(rows)
    return ifs / n, iwor / n


@oracle
@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("clip", [None, (0.6, 0.9)])
def test_ccmar_estimators_match_brute_force_oracle(seed, clip):
    data = _mini_data(15, seed)
    ns = _mini_set(pi_clip=clip)
    rows = data.records()
    for a in (0, 1):
        ref_if, ref_iwor = _oracle_estimates(rows, a, clip)
        assert abs(chi_if(ns, data, a) - ref_if) < 1e-10
        assert abs(chi_iwor(ns, data, a) - ref_iwor) < 1e-10


@settings(max_examples=10, deadline=None)
@given(st.permutations(list(range(15))))
def test_chi_if_is_permutation_invariant(perm):
    data = _mini_data(15, 5)
    ns = _mini_set()
    base = chi_if(ns, data, 1)
    assert abs(chi_if(ns, data.take(np.array(perm)), 1) - base) < 1e-12


# --- cross-fitting ----------------------------------------------------------------


@pytest.fixture(scope="module")
def s1_small():
    coef = load_shipped("scenario1").coefficients
    return coef, gen_levis(coef, 600, stream(5, 0, 0))


def test_fold_assignment_is_balanced_and_content_based(s1_small):
    _, data = s1_small
    ids = fold_assignment(data, 3, seed=4)
    assert sorted(np.bincount(ids)) == [200, 200, 200]
    perm = np.random.default_rng(0).permutation(data.n)
    np.testing.assert_array_equal(fold_assignment(data.take(perm), 3, seed=4), ids[perm])


@settings(max_examples=3, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_crossfit_is_row_order_invariant(perm_seed):
    coef = load_shipped("scenario1").coefficients
    data = gen_levis(coef, 1000, stream(9, 0, 0))
    specs = default_nuisance_specs(coef)
    perm = np.random.default_rng(perm_seed).permutation(data.n)
    a = crossfit_ate(data, specs, 2, seed=1)
    b = crossfit_ate(data.take(perm), specs, 2, seed=1)
    assert abs(a.ate - b.ate) < 1e-10 * max(1.0, abs(a.ate))


def test_explicit_fold_ids_are_used(s1_small):
    coef, data = s1_small
    specs = default_nuisance_specs(coef)
    ids = fold_assignment(data, 2, seed=12)
    a = crossfit_ate(data, specs, 2, seed=1, fold_ids=ids)
    b = crossfit_ate(data, specs, 2, seed=12)
    assert a.ate == b.ate


# --- estimator ids ------------------------------------------------------------


def test_estimator_enumeration():
    keys = [e.key for e in ALL_ESTIMATORS]
    assert len(keys) == len(set(keys)) == 18
    assert keys[:2] == [CCMAR_IF, CCMAR_IWOR]
    for k in keys:
        assert EstimatorId.parse(k).key == k


@pytest.mark.parametrize("text", ["gam/plain/none", "or/forest/none", "or/plain", "ccmar-if/plain/none", ""])
def test_bad_estimator_ids(text):
    with pytest.raises(ConfigError):
        EstimatorId.parse(text)


# --- comparators ----------------------------------------------------------------


def _full_data(n, seed):
    rng = np.random.default_rng(seed)
    l1 = rng.standard_normal(n)
    a = (rng.random(n) < expit(0.5 * l1)).astype(float)
    y = 1 + 2 * a + l1 + rng.standard_normal(n)
    l4 = rng.gamma(2.0, 1.0, n)
    return CoarsenedData({"L1": l1, "A": a, "Y": y, "S": np.ones(n), "L4": l4}, ("L1",), ("L4",))


def test_plain_outcome_regression_matches_least_squares():
    data = _full_data(500, 1)
    X = np.column_stack([np.ones(data.n), data.a, data["L1"], data["L4"]])
    coef = np.linalg.lstsq(X, data.y, rcond=None)[0]
    rec = ate_outcome_regression([data], "plain")
    assert abs(rec.ate - coef[1]) < 1e-10


def test_hajek_ipw_matches_manual_weights():
    data = _full_data(500, 2)
    from ccmar.model_fit import fit_glm
    X = np.column_stack([np.ones(data.n), data["L1"], data["L4"]])
    e = np.clip(expit(X @ fit_glm(GlmFamily.BERNOULLI, X, data.a).coef), 0.01, 0.99)
    a, y = data.a, data.y
    chi1 = np.sum(a * y / e) / np.sum(a / e)
    chi0 = np.sum((1 - a) * y / (1 - e)) / np.sum((1 - a) / (1 - e))
    rec = ate_ipw([data], "plain")
    assert abs(rec.chi1 - chi1) < 1e-10 and abs(rec.chi0 - chi0) < 1e-10


def test_complete_case_uses_only_complete_rows(s1_small):
    _, data = s1_small
    a = complete_case_ate(data, "or")
    b = ate_outcome_regression([data.complete_cases()], "plain", estimator="or/plain/none")
    assert a.ate == b.ate


@pytest.mark.parametrize("variant", ["true-dgp", "simple", "pairwise"])
def test_imputation_completes_data(s1_small, variant):
    coef, data = s1_small
    specs = default_nuisance_specs(coef)
    comp = fit_imputation(data, variant, specs.lam, seed=3)
    out = impute(data, comp, 2, np.random.default_rng(1))
    assert len(out) == 2
    for d in out:
        assert np.all(d.s == 1)
        np.testing.assert_array_equal(d["S_obs"], data.s)
        assert np.all(np.isfinite(d["L4"])) and np.all(d["L4"] > 0)
        cc = data.s == 1
        np.testing.assert_array_equal(d["L4"][cc], data["L4"][cc])
    assert not np.array_equal(out[0]["L4"], out[1]["L4"])


def test_suite_records_in_request_order(s1_small):
    coef, data = s1_small
    specs = default_nuisance_specs(coef)
    suite = ["or/plain/none", CCMAR_IWOR, "ipw/plain/simple", CCMAR_IF]
    recs = run_estimator_suite(data, suite, specs, 3, imputation_lambda=specs.lam)
    assert [r.estimator for r in recs] == suite
    assert all(r.error is None and math.isfinite(r.ate) for r in recs)
    again = run_estimator_suite(data, suite, specs, 3, imputation_lambda=specs.lam)
    assert [r.ate for r in recs] == [r.ate for r in again]


def test_suite_failures_become_flagged_records(s1_small):
    coef, data = s1_small
    specs = default_nuisance_specs(coef)
    broken = data.with_columns(S=np.where(data.a == 1, 0.0, data.s))
    # no complete cases in the treated arm: every estimator fails, none raises
    recs = run_estimator_suite(broken, [CCMAR_IF, "or/plain/none"], specs, 0)
    for r in recs:
        assert r.error is not None and FLAG_FAILED in r.flags and math.isnan(r.ate)


def test_true_dgp_imputation_shape_modes(s1_small):
    coef, data = s1_small
    specs = default_nuisance_specs(coef)
    est = fit_imputation(data, "true-dgp", specs.lam, gamma_shape="moment").components[0].fit
    fixed = fit_imputation(data, "true-dgp", specs.lam, gamma_shape=3.619).components[0].fit
    assert fixed.shape == 3.619 and est.shape != 3.619
    np.testing.assert_allclose(est.coef, fixed.coef, rtol=1e-12)
