"""ATE estimators: the two CCMAR estimators and the comparator pipelines.

CCMAR estimators (for a target arm a, averaged over all n rows):

    IWOR  chi~_a = mean[ S / pi * xi_a ]
    IF    chi^_a = mean[ b_a1 + 1(A=a)/eta_a * b_a2
                         + S/pi * { xi_a - b_a1 + 1(A=a)/eta_a * (tau/gamma_a * (Y - xi_a) - b_a2) } ]

Comparators impute the partially missing confounders (or drop incomplete
rows) and then run outcome regression with standardization or Hajek IPW.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import CoarsenedData
from .errors import CcmarError, ConfigError, DomainError
from .model_fit import (
    FittedGlm,
    GlmFamily,
    build_design,
    fit_glm,
    fit_lasso_glm,
    main_terms,
    pairwise_terms,
)
from .nuisance import (
    LambdaSpec,
    NuisanceSet,
    NuisanceSpecs,
    RecordTerms,
    fit_nuisance_set,
    record_terms,
)

CCMAR_IF = "ccmar-if"
CCMAR_IWOR = "ccmar-iwor"
ADJUSTMENTS = ("or", "ipw")
MODELS = ("plain", "pairwise")
IMPUTATIONS = ("true-dgp", "simple", "pairwise", "none")
PS_CLIP = (0.01, 0.99)
IMPUTE_FLOOR = 1e-6

FLAG_NONCONVERGED = "nonconverged"
FLAG_CLIPPED = "clipped"
FLAG_FAILED = "failed"
FLAG_EXTREME = "extreme"


@dataclass(frozen=True, order=True)
class EstimatorId:
    """``ccmar-if``, ``ccmar-iwor`` or ``<or|ipw>/<plain|pairwise>/<imputation>``."""

    family: str
    model: Optional[str] = None
    imputation: Optional[str] = None

    def __post_init__(self):
        if self.family in (CCMAR_IF, CCMAR_IWOR):
            if self.model is not None or self.imputation is not None:
                raise ConfigError(f"{self.family} takes no model or imputation variant")
            return
        if self.family not in ADJUSTMENTS:
            raise ConfigError(f"unknown estimator family {self.family!r}")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model variant {self.model!r}")
        if self.imputation not in IMPUTATIONS:
            raise ConfigError(f"unknown imputation variant {self.imputation!r}")

    @property
    def key(self) -> str:
        if self.model is None:
            return self.family
        return f"{self.family}/{self.model}/{self.imputation}"

    def __str__(self):
        return self.key

    @property
    def is_ccmar(self) -> bool:
        return self.family in (CCMAR_IF, CCMAR_IWOR)

    @classmethod
    def parse(cls, text: "str | EstimatorId") -> "EstimatorId":
        if isinstance(text, EstimatorId):
            return text
        parts = str(text).strip().split("/")
        if len(parts) == 1:
            return cls(parts[0])
        if len(parts) != 3:
            raise ConfigError(f"cannot parse estimator id {text!r}")
        return cls(*parts)


ALL_ESTIMATORS: tuple[EstimatorId, ...] = (EstimatorId(CCMAR_IF), EstimatorId(CCMAR_IWOR)) + tuple(
    EstimatorId(f, m, i) for f, m, i in itertools.product(ADJUSTMENTS, MODELS, IMPUTATIONS))


@dataclass(frozen=True)
class EstimateRecord:
    estimator: str
    chi1: float
    chi0: float
    ate: float
    flags: frozenset = field(default_factory=frozenset)
    error: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "flags", frozenset(self.flags))

    @classmethod
    def failed(cls, estimator: str, err: BaseException) -> "EstimateRecord":
        msg = f"{type(err).__name__}: {err}"
        return cls(estimator, math.nan, math.nan, math.nan, {FLAG_FAILED}, msg)


def _contrast(estimator, chi1, chi0, flags=()):
    return EstimateRecord(str(estimator), float(chi1), float(chi0), float(chi1 - chi0), flags)


# ---------------------------------------------------------------------------
# CCMAR estimators


def _check_data(data):
    if data.n == 0:
        raise DomainError("empty data")


def _iwor_from(rt: RecordTerms, s, a):
    contrib = np.where(s == 1, rt.xi_obs[:, a] / np.where(s == 1, rt.pi, 1.0), 0.0)
    return float(np.mean(contrib))


def _if_from(rt: RecordTerms, s, arm_obs, y, a):
    ind = (arm_obs == a).astype(float)
    eta_a = rt.eta1 if a == 1 else 1.0 - rt.eta1
    b1 = rt.b1[:, a]
    # b2 is evaluated at the observed arm, which is the only arm it is used for
    b2 = np.where(ind == 1, rt.b2, 0.0)
    base = b1 + ind / eta_a * b2
    cc = s == 1
    xi = np.where(cc, rt.xi_obs[:, a], 0.0)
    ratio = np.where(cc & (ind == 1), rt.ratio_obs, 0.0)
    corr = xi - b1 + ind / eta_a * (ratio * (y - xi) - b2)
    return float(np.mean(base + np.where(cc, corr / rt.pi, 0.0)))


def chi_iwor(ns: NuisanceSet, data: CoarsenedData, a: int) -> float:
    """Inverse-weighted outcome regression estimate of E[Y(a)]."""
    _check_data(data)
    rt = record_terms(ns, data, with_corrections=False)
    return _iwor_from(rt, data.s, a)


def chi_if(ns: NuisanceSet, data: CoarsenedData, a: int) -> float:
    """Influence-function (one-step) estimate of E[Y(a)]."""
    _check_data(data)
    rt = record_terms(ns, data, with_corrections=True)
    return _if_from(rt, data.s, data.a, data.y, a)


def ccmar_estimates(ns: NuisanceSet, data: CoarsenedData, want_if: bool = True):
    """Both CCMAR estimators for both arms from a single nuisance evaluation.

    Returns ``({"ccmar-if": (chi1, chi0), "ccmar-iwor": (chi1, chi0)}, n_clipped)``.
    """
    _check_data(data)
    rt = record_terms(ns, data, with_corrections=want_if)
    out = {CCMAR_IWOR: (_iwor_from(rt, data.s, 1), _iwor_from(rt, data.s, 0))}
    if want_if:
        out[CCMAR_IF] = (_if_from(rt, data.s, data.a, data.y, 1), _if_from(rt, data.s, data.a, data.y, 0))
    return out, rt.n_clipped


def fold_assignment(data: CoarsenedData, folds: int, seed: int) -> np.ndarray:
    """Seeded fold labels that depend on row contents, not on row order."""
    if folds < 2:
        raise ConfigError("cross-fitting needs at least 2 folds")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(7,))))
    ids = np.empty(data.n, dtype=int)
    ids[data.canonical_order()] = rng.permutation(np.arange(data.n) % folds)
    return ids


def crossfit_ccmar(data: CoarsenedData, specs: NuisanceSpecs, folds: int = 2, seed: int = 0,
                   fold_ids: Optional[np.ndarray] = None, want_if: bool = True, **fit_kw):
    """Cross-fitted CCMAR estimates: fit on the complement, evaluate on the fold, average.

    Returns ``(estimates, flags)`` in the shape of :func:`ccmar_estimates`.
    """
    _check_data(data)
    ids = fold_assignment(data, folds, seed) if fold_ids is None else np.asarray(fold_ids)
    labels = np.unique(ids)
    if labels.size < 2:
        raise ConfigError("cross-fitting needs at least 2 non-empty folds")
    acc: dict[str, list] = {}
    flags = set()
    for k in labels:
        ns = fit_nuisance_set(data.take(np.flatnonzero(ids != k)), specs, **fit_kw)
        est, clipped = ccmar_estimates(ns, data.take(np.flatnonzero(ids == k)), want_if)
        if clipped:
            flags.add(FLAG_CLIPPED)
        if not ns.converged:
            flags.add(FLAG_NONCONVERGED)
        for key, v in est.items():
            acc.setdefault(key, []).append(v)
    return {key: tuple(np.mean(np.asarray(v), axis=0)) for key, v in acc.items()}, flags


def crossfit_ate(data: CoarsenedData, specs: NuisanceSpecs, folds: int = 2, seed: int = 0,
                 estimator: str = CCMAR_IF, fold_ids: Optional[np.ndarray] = None,
                 **fit_kw) -> EstimateRecord:
    est, flags = crossfit_ccmar(data, specs, folds, seed, fold_ids,
                                want_if=(estimator == CCMAR_IF), **fit_kw)
    chi1, chi0 = est[estimator]
    return _contrast(estimator, chi1, chi0, flags)


# ---------------------------------------------------------------------------
# imputation


@dataclass(frozen=True)
class ImputationComponent:
    name: str
    fit: FittedGlm
    positive: bool


@dataclass(frozen=True)
class ComparatorNuisances:
    """Fitted imputation models (one per L_p component, in order)."""

    variant: str
    components: tuple[ImputationComponent, ...] = ()

    @property
    def converged(self) -> bool:
        return all(c.fit.converged for c in self.components)


def _seed(seed, *key):
    return int(np.random.SeedSequence(int(seed), spawn_key=tuple(key)).generate_state(1)[0])


def fit_imputation(data: CoarsenedData, variant: str, true_lambda: Sequence[LambdaSpec] = (),
                   seed: int = 0, gamma_shape="moment") -> ComparatorNuisances:
    """Fit the imputation models of one variant on the complete cases.

    ``true-dgp`` reuses the generating families and terms
    (``true_lambda``); ``simple`` regresses each component linearly (or
    logistically, if binary) on A, Y, L_c and earlier components;
    ``pairwise`` adds all pairwise products and fits by cross-validated LASSO.
    """
    if variant not in IMPUTATIONS:
        raise ConfigError(f"unknown imputation variant {variant!r}")
    if variant == "none":
        return ComparatorNuisances(variant)
    cc = data.complete_cases()
    if cc.n == 0:
        raise DomainError("no complete cases to fit imputation models")
    true_by_name = {s.name: s for s in true_lambda}
    comps = []
    preds = ["A", "Y", *data.lc_names]
    for j, name in enumerate(data.lp_names):
        truth = true_by_name.get(name)
        binary = bool(np.all(np.isin(cc[name], (0.0, 1.0))))
        positive = bool(np.all(cc[name] > 0)) and not binary
        if truth is not None:
            binary = truth.family is GlmFamily.BERNOULLI
            positive = truth.family is GlmFamily.GAMMA
        if variant == "true-dgp":
            if truth is None:
                raise ConfigError(f"no generating model known for {name}")
            fit = fit_glm(truth.family, build_design(truth.terms, cc.columns), cc[name],
                          terms=truth.terms, shape=gamma_shape)
        else:
            fam = GlmFamily.BERNOULLI if binary else GlmFamily.GAUSSIAN
            if variant == "simple":
                terms = main_terms(preds)
                fit = fit_glm(fam, build_design(terms, cc.columns), cc[name], terms=terms)
            else:
                terms = pairwise_terms(preds)
                fit = fit_lasso_glm(fam, build_design(terms, cc.columns), cc[name],
                                    seed=_seed(seed, 3, j), terms=terms)
        comps.append(ImputationComponent(name, fit, positive))
        preds.append(name)
    return ComparatorNuisances(variant, tuple(comps))


def impute(data: CoarsenedData, comp: ComparatorNuisances, m: int, rng: np.random.Generator):
    """``m`` completed datasets: incomplete rows get L_p drawn from the fitted laws.

    Completed datasets have ``S == 1`` everywhere; the original indicator is
    kept in column ``S_obs``.
    """
    if m < 1:
        raise ConfigError("need at least one imputation")
    if comp.variant == "none":
        raise ConfigError("the 'none' variant does not impute")
    miss = np.flatnonzero(data.s == 0)
    out = []
    for _ in range(m):
        cols = {k: np.array(v) for k, v in data.columns.items()}
        env = {k: cols[k][miss] for k in ("A", "Y", *data.lc_names)}
        for c in comp.components:
            eta = np.broadcast_to(c.fit.eta(env), miss.shape)
            fam = c.fit.family
            if fam is GlmFamily.GAMMA:
                draw = rng.standard_gamma(c.fit.shape, miss.size) * np.exp(eta) / c.fit.shape
            elif fam is GlmFamily.BERNOULLI:
                draw = (rng.random(miss.size) < c.fit.family.inverse_link(eta)).astype(float)
            else:
                draw = eta + c.fit.sigma * rng.standard_normal(miss.size)
                if c.positive:
                    draw = np.maximum(draw, IMPUTE_FLOOR)
            cols[c.name][miss] = draw
            env[c.name] = draw
        cols["S_obs"] = cols["S"]
        cols["S"] = np.ones(data.n)
        out.append(CoarsenedData(cols, data.lc_names, data.lp_names, dict(data.meta, imputed=comp.variant)))
    return out


# ---------------------------------------------------------------------------
# outcome regression and IPW


def _adjust_vars(data):
    return [*data.lc_names, *data.lp_names]


def _fit(family, terms, data, response, model, seed):
    X = build_design(terms, data.columns)
    if model == "plain":
        return fit_glm(family, X, response, terms=terms)
    return fit_lasso_glm(family, X, response, seed=seed, terms=terms)


def _or_single(data, model, seed):
    vars_ = ["A", *_adjust_vars(data)]
    terms = main_terms(vars_) if model == "plain" else pairwise_terms(vars_)
    fit = _fit(GlmFamily.GAUSSIAN, terms, data, data.y, model, seed)
    cols = data.columns
    mu1 = fit.predict_design(build_design(terms, {**cols, "A": np.ones(data.n)}))
    mu0 = fit.predict_design(build_design(terms, {**cols, "A": np.zeros(data.n)}))
    return float(np.mean(mu1)), float(np.mean(mu0)), fit.converged


def _ipw_single(data, model, seed):
    a = data.a
    if np.all(a == a[0]):
        raise DomainError("IPW needs both treatment arms")
    vars_ = _adjust_vars(data)
    terms = main_terms(vars_) if model == "plain" else pairwise_terms(vars_)
    fit = _fit(GlmFamily.BERNOULLI, terms, data, a, model, seed)
    raw = fit.predict_design(build_design(terms, data.columns))
    e = np.clip(raw, *PS_CLIP)
    clipped = int(np.count_nonzero(e != raw))
    chis = []
    for arm, p in ((1, e), (0, 1.0 - e)):
        w = (a == arm) / p
        w = w / w.sum()
        chis.append(float(np.sum(w * data.y)))
    return chis[0], chis[1], fit.converged, clipped


def ate_outcome_regression(datasets: Sequence[CoarsenedData], model: str = "plain", seed: int = 0,
                           estimator: str = "or") -> EstimateRecord:
    """Fit E[Y | A, L] per dataset, standardize over its rows, average over datasets."""
    if model not in MODELS:
        raise ConfigError(f"unknown model variant {model!r}")
    res = [_or_single(d, model, _seed(seed, 4, i)) for i, d in enumerate(datasets)]
    flags = set() if all(r[2] for r in res) else {FLAG_NONCONVERGED}
    return _contrast(estimator, np.mean([r[0] for r in res]), np.mean([r[1] for r in res]), flags)


def ate_ipw(datasets: Sequence[CoarsenedData], model: str = "plain", seed: int = 0,
            estimator: str = "ipw") -> EstimateRecord:
    """Hajek IPW per dataset with propensities clipped to [0.01, 0.99], averaged over datasets."""
    if model not in MODELS:
        raise ConfigError(f"unknown model variant {model!r}")
    res = [_ipw_single(d, model, _seed(seed, 5, i)) for i, d in enumerate(datasets)]
    flags = set()
    if not all(r[2] for r in res):
        flags.add(FLAG_NONCONVERGED)
    if any(r[3] for r in res):
        flags.add(FLAG_CLIPPED)
    return _contrast(estimator, np.mean([r[0] for r in res]), np.mean([r[1] for r in res]), flags)


def complete_case_ate(data: CoarsenedData, method: str = "or", model: str = "plain",
                      seed: int = 0, estimator: Optional[str] = None) -> EstimateRecord:
    """Drop incomplete rows, then run outcome regression or IPW."""
    cc = data.complete_cases()
    if cc.n == 0:
        raise DomainError("no complete cases")
    name = estimator or f"{method}/{model}/none"
    if method == "or":
        return ate_outcome_regression([cc], model, seed, name)
    if method == "ipw":
        return ate_ipw([cc], model, seed, name)
    raise ConfigError(f"unknown complete-case method {method!r}")


# ---------------------------------------------------------------------------
# suite


def run_estimator_suite(
    data: CoarsenedData,
    suite: Iterable["str | EstimatorId"],
    specs: NuisanceSpecs,
    seed: int = 0,
    *,
    crossfit_folds: int = 1,
    imputation_lambda: Sequence[LambdaSpec] = (),
    n_imputations: int = 1,
    **fit_kw,
) -> list[EstimateRecord]:
    """One record per requested estimator, in request order.

    CCMAR estimators share one nuisance fit (or one cross-fit); comparators
    share the imputed datasets of their imputation variant. Failures are
    captured as flagged records rather than raised.
    """
    ids = [EstimatorId.parse(s) for s in suite]
    if not ids:
        raise ConfigError("estimator suite is empty")
    results: dict[str, EstimateRecord] = {}

    ccmar = [i for i in ids if i.is_ccmar]
    if ccmar:
        want_if = any(i.family == CCMAR_IF for i in ccmar)
        try:
            if crossfit_folds > 1:
                est, flags = crossfit_ccmar(data, specs, crossfit_folds, _seed(seed, 1), None,
                                            want_if, **fit_kw)
            else:
                ns = fit_nuisance_set(data, specs, **fit_kw)
                est, clipped = ccmar_estimates(ns, data, want_if)
                flags = set()
                if clipped:
                    flags.add(FLAG_CLIPPED)
                if not ns.converged:
                    flags.add(FLAG_NONCONVERGED)
            for i in ccmar:
                results[i.key] = _contrast(i.key, *est[i.family], flags)
        except (CcmarError, ValueError, np.linalg.LinAlgError, FloatingPointError) as err:
            for i in ccmar:
                results[i.key] = EstimateRecord.failed(i.key, err)

    by_imp: dict[str, list[EstimatorId]] = {}
    for i in ids:
        if not i.is_ccmar and i.key not in results:
            by_imp.setdefault(i.imputation, []).append(i)
    for variant in IMPUTATIONS:
        members = by_imp.get(variant)
        if not members:
            continue
        v_idx = IMPUTATIONS.index(variant)
        try:
            if variant == "none":
                datasets = [data.complete_cases()]
                if datasets[0].n == 0:
                    raise DomainError("no complete cases")
                imp_flags = set()
            else:
                comp = fit_imputation(data, variant, imputation_lambda, _seed(seed, 2, v_idx),
                                      gamma_shape=specs.gamma_shape)
                rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(6, v_idx))))
                datasets = impute(data, comp, n_imputations, rng)
                imp_flags = set() if comp.converged else {FLAG_NONCONVERGED}
        except (CcmarError, ValueError, np.linalg.LinAlgError) as err:
            for i in members:
                results[i.key] = EstimateRecord.failed(i.key, err)
            continue
        for i in members:
            if i.key in results:
                continue
            try:
                s = _seed(seed, 8, v_idx, MODELS.index(i.model), ADJUSTMENTS.index(i.family))
                fn = ate_outcome_regression if i.family == "or" else ate_ipw
                rec = fn(datasets, i.model, s, i.key)
                results[i.key] = replace(rec, flags=rec.flags | imp_flags)
            except (CcmarError, ValueError, np.linalg.LinAlgError) as err:
                results[i.key] = EstimateRecord.failed(i.key, err)
    return [results[i.key] for i in ids]
