"""Data-generating processes, true nuisance models and ground-truth ATEs.

Three designs are supported:

``levis``
    L_c -> A | L_c -> Y | L_c, A -> S | L_c, A, Y -> L4 | L_c, A, Y (gamma)
    -> L5 | L_c, A, Y, L4 (logit). The lambda models are complete-case
    conditionals, so L_p is only exposed when S = 1.
``alternative``
    L_c -> L4 | L_c (gamma) -> L5 | L_c, L4 -> A | L_c, L_p -> Y | L_c, L_p, A
    -> S | L_c, A, Y; L_p is then masked for S = 0.
``np-beta``
    A ~ Bern(0.5), Y | A ~ Beta(2, 4) or Beta(4, 2), S | A, Y logit,
    L1 | A, Y logit, L2 | A, Y, L1 gaussian; no L_c.

Random streams are Philox generators keyed by (master seed, replicate, stage),
so a replicate's data never depend on how replicates are scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy import special, stats

from .data import CoarsenedData
from .errors import ConditioningSetError, ConfigError
from .model_fit import BetaLaw, FittedGlm, GlmFamily, TermSpec, as_terms, gauss_hermite, gauss_legendre
from .model_fit.terms import linear_predictor, term_vars
from .nuisance import (
    MU_BETA,
    BetaPerArm,
    LambdaComponent,
    LambdaSpec,
    NuisanceSet,
    NuisanceSpecs,
)

LEVIS = "levis"
ALTERNATIVE = "alternative"
NP_BETA = "np-beta"
FACTORIZATIONS = (LEVIS, ALTERNATIVE, NP_BETA)

MODEL_NAMES = ("eta", "mu", "pi", "lambda1", "lambda2")
MODEL_FAMILY = {
    "eta": GlmFamily.BERNOULLI,
    "mu": GlmFamily.GAUSSIAN,
    "pi": GlmFamily.BERNOULLI,
    "lambda1": GlmFamily.GAMMA,
    "lambda2": GlmFamily.BERNOULLI,
}
LP_OF = {"lambda1": "L4", "lambda2": "L5"}
DEFAULT_LC = ("L1", "L2", "L3")
NP_TRUTH = 1.0 / 3.0


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the given (replicate, stage, ...) key."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ModelCoefficients:
    """Terms, coefficients and the dispersion (sigma or gamma shape) of one model."""

    terms: tuple[TermSpec, ...]
    coef: np.ndarray
    family: GlmFamily
    dispersion: Optional[float] = None

    def __post_init__(self):
        terms = as_terms(self.terms)
        coef = np.array(self.coef, dtype=float)
        coef.setflags(write=False)
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "family", GlmFamily(self.family))
        if coef.shape != (len(terms),):
            raise ConfigError("coefficient vector does not match term list")
        if not np.all(np.isfinite(coef)):
            raise ConfigError("coefficients must be finite")
        if self.family in (GlmFamily.GAUSSIAN, GlmFamily.GAMMA):
            if self.dispersion is None or not self.dispersion > 0:
                name = "sigma" if self.family is GlmFamily.GAUSSIAN else "alpha"
                raise ConfigError(f"{self.family.value} model needs a positive {name}")

    @classmethod
    def from_mapping(cls, values: Mapping[str, float], family, dispersion=None):
        return cls(tuple(values), np.array(list(values.values()), dtype=float), family, dispersion)

    def as_mapping(self) -> dict[str, float]:
        return {t.name: float(c) for t, c in zip(self.terms, self.coef)}

    def eta(self, env):
        return linear_predictor(self.terms, self.coef, env)

    def as_fit(self) -> FittedGlm:
        return FittedGlm(self.terms, self.coef, self.family, dispersion=self.dispersion,
                         converged=True, meta={"true": True})


@dataclass(frozen=True)
class LcGenerator:
    """Synthetic always-observed confounders: gender, centered BMI, ethnicity."""

    p_gender: float = 0.5
    bmi_mean: float = 15.0
    bmi_sd: float = 8.0
    bmi_low: float = -10.0
    bmi_high: float = 40.0
    p_hispanic: float = 0.1

    def __post_init__(self):
        if not (0 <= self.p_gender <= 1 and 0 <= self.p_hispanic <= 1):
            raise ConfigError("L_c probabilities must lie in [0, 1]")
        if not self.bmi_sd > 0 or not self.bmi_low < self.bmi_high:
            raise ConfigError("invalid BMI law")

    def draw(self, n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        l1 = (rng.random(n) < self.p_gender).astype(float)
        a, b = (self.bmi_low - self.bmi_mean) / self.bmi_sd, (self.bmi_high - self.bmi_mean) / self.bmi_sd
        l2 = stats.truncnorm.rvs(a, b, loc=self.bmi_mean, scale=self.bmi_sd, size=n, random_state=rng)
        l3 = (rng.random(n) < self.p_hispanic).astype(float)
        return {"L1": l1, "L2": np.asarray(l2, dtype=float), "L3": l3}


def _legal_sets(factorization, lc):
    lc = set(lc)
    if factorization == LEVIS:
        return {"eta": lc, "mu": lc | {"A"}, "pi": lc | {"A", "Y"},
                "lambda1": lc | {"A", "Y"}, "lambda2": lc | {"A", "Y", "L4"}}
    return {"lambda1": lc, "lambda2": lc | {"L4"}, "eta": lc | {"L4", "L5"},
            "mu": lc | {"A", "L4", "L5"}, "pi": lc | {"A", "Y"}}


@dataclass(frozen=True)
class ScenarioCoefficients:
    """Coefficient tables for one scenario.

    ``models`` maps ``eta``, ``mu``, ``pi``, ``lambda1`` and optionally
    ``lambda2`` to :class:`ModelCoefficients`; under the alternative
    factorization these hold the tilde models. The np-beta design is fixed
    and carries no tables.
    """

    factorization: str
    models: Mapping[str, ModelCoefficients] = field(default_factory=dict)
    lc_names: tuple[str, ...] = DEFAULT_LC
    name: str = ""

    def __post_init__(self):
        if self.factorization not in FACTORIZATIONS:
            raise ConfigError(f"unknown factorization {self.factorization!r}")
        object.__setattr__(self, "lc_names", tuple(self.lc_names))
        if self.factorization == NP_BETA:
            object.__setattr__(self, "lc_names", ())
            return
        models = dict(self.models)
        for req in ("eta", "mu", "pi", "lambda1"):
            if req not in models:
                raise ConfigError(f"missing required model {req!r}")
        for k in models:
            if k not in MODEL_NAMES:
                raise ConfigError(f"unknown model {k!r}")
            if models[k].family is not MODEL_FAMILY[k]:
                raise ConfigError(f"model {k!r} must use the {MODEL_FAMILY[k].value} family")
        legal = _legal_sets(self.factorization, self.lc_names)
        if "lambda2" not in models:
            legal = {k: v - {"L5"} for k, v in legal.items()}
        for k, m in models.items():
            bad = sorted(term_vars(m.terms) - legal[k])
            if bad:
                raise ConditioningSetError(
                    f"{self.factorization} {k} model may only use {sorted(legal[k])}; got {bad}")
        object.__setattr__(self, "models", models)

    @property
    def lp_names(self) -> tuple[str, ...]:
        if self.factorization == NP_BETA:
            return ("L1", "L2")
        return tuple(LP_OF[k] for k in ("lambda1", "lambda2") if k in self.models)

    def __getitem__(self, key) -> ModelCoefficients:
        return self.models[key]


def _bern(rng, eta):
    return (rng.random(eta.shape[0]) < special.expit(eta)).astype(float)


def _gamma(rng, shape, eta):
    # mean exp(eta), rate = shape / mean
    return rng.standard_gamma(shape, eta.shape[0]) * np.exp(eta) / shape


def _full(x, n):
    return np.broadcast_to(np.asarray(x, dtype=float), (n,)).copy()


def gen_levis(coef: ScenarioCoefficients, n: int, rng: np.random.Generator,
              lc_gen: LcGenerator = LcGenerator()) -> CoarsenedData:
    if coef.factorization != LEVIS:
        raise ConfigError("gen_levis needs levis-factorization coefficients")
    if n < 1:
        raise ConfigError("n must be positive")
    env = lc_gen.draw(n, rng)
    m = coef.models
    env["A"] = _bern(rng, _full(m["eta"].eta(env), n))
    env["Y"] = _full(m["mu"].eta(env), n) + m["mu"].dispersion * rng.standard_normal(n)
    env["S"] = _bern(rng, _full(m["pi"].eta(env), n))
    env["L4"] = _gamma(rng, m["lambda1"].dispersion, _full(m["lambda1"].eta(env), n))
    if "lambda2" in m:
        env["L5"] = _bern(rng, _full(m["lambda2"].eta(env), n))
    return CoarsenedData(env, coef.lc_names, coef.lp_names, {"factorization": LEVIS})


def gen_alt(coef: ScenarioCoefficients, n: int, rng: np.random.Generator,
            lc_gen: LcGenerator = LcGenerator(), return_full: bool = False):
    """Alternative-factorization draw; ``return_full`` also hands back unmasked L_p."""
    if coef.factorization != ALTERNATIVE:
        raise ConfigError("gen_alt needs alternative-factorization coefficients")
    if n < 1:
        raise ConfigError("n must be positive")
    env = lc_gen.draw(n, rng)
    m = coef.models
    env["L4"] = _gamma(rng, m["lambda1"].dispersion, _full(m["lambda1"].eta(env), n))
    if "lambda2" in m:
        env["L5"] = _bern(rng, _full(m["lambda2"].eta(env), n))
    env["A"] = _bern(rng, _full(m["eta"].eta(env), n))
    env["Y"] = _full(m["mu"].eta(env), n) + m["mu"].dispersion * rng.standard_normal(n)
    env["S"] = _bern(rng, _full(m["pi"].eta(env), n))
    full = {k: env[k].copy() for k in coef.lp_names}
    data = CoarsenedData(env, coef.lc_names, coef.lp_names, {"factorization": ALTERNATIVE})
    return (data, full) if return_full else data


NP_PI = {"(Intercept)": -0.35, "A": 0.5, "Y": 0.18, "A:Y": 0.05}
NP_L1 = {"(Intercept)": -0.6, "A": 0.5, "Y": 0.25, "A:Y": 0.1}
NP_L2 = {"(Intercept)": 0.0, "A": 1.0, "Y": 1.0, "L1:Y": 2.5}
NP_L2_SD = 1.25
NP_BETA_ARMS = ((2.0, 4.0), (4.0, 2.0))


def gen_np(n: int, rng: np.random.Generator) -> CoarsenedData:
    if n < 1:
        raise ConfigError("n must be positive")
    a = (rng.random(n) < 0.5).astype(float)
    y = np.where(a == 1, rng.beta(4.0, 2.0, n), rng.beta(2.0, 4.0, n))
    env = {"A": a, "Y": y}
    pi = ModelCoefficients.from_mapping(NP_PI, GlmFamily.BERNOULLI)
    env["S"] = _bern(rng, pi.eta(env))
    l1 = ModelCoefficients.from_mapping(NP_L1, GlmFamily.BERNOULLI)
    env["L1"] = _bern(rng, l1.eta(env))
    l2 = ModelCoefficients.from_mapping(NP_L2, GlmFamily.GAUSSIAN, NP_L2_SD)
    env["L2"] = l2.eta(env) + NP_L2_SD * rng.standard_normal(n)
    return CoarsenedData(env, (), ("L1", "L2"), {"factorization": NP_BETA})


def generate(coef: ScenarioCoefficients, n: int, rng: np.random.Generator,
             lc_gen: LcGenerator = LcGenerator()) -> CoarsenedData:
    if coef.factorization == LEVIS:
        return gen_levis(coef, n, rng, lc_gen)
    if coef.factorization == ALTERNATIVE:
        return gen_alt(coef, n, rng, lc_gen)
    return gen_np(n, rng)


NP_COEFFICIENTS = ScenarioCoefficients(NP_BETA, name="np-beta")


# ---------------------------------------------------------------------------
# nuisance models implied by a design


def true_nuisance_set(coef: ScenarioCoefficients, pi_clip=None, **kw) -> NuisanceSet:
    """The exact eta, mu, pi, lambda of a levis or np-beta design (no fitting)."""
    if coef.factorization == NP_BETA:
        eta = FittedGlm(as_terms(["(Intercept)"]), [0.0], GlmFamily.BERNOULLI)
        mu = BetaPerArm(BetaLaw(*NP_BETA_ARMS[0]), BetaLaw(*NP_BETA_ARMS[1]))
        pi = ModelCoefficients.from_mapping(NP_PI, GlmFamily.BERNOULLI).as_fit()
        lam = (LambdaComponent("L1", ModelCoefficients.from_mapping(NP_L1, GlmFamily.BERNOULLI).as_fit()),
               LambdaComponent("L2", ModelCoefficients.from_mapping(
                   NP_L2, GlmFamily.GAUSSIAN, NP_L2_SD).as_fit()))
        return NuisanceSet(eta, mu, pi, lam, (), gauss_legendre(kw.pop("y_nodes", 40)),
                           pi_clip=pi_clip, **kw)
    if coef.factorization != LEVIS:
        raise ConfigError("true nuisances exist in closed form only for the levis and np-beta designs")
    m = coef.models
    lam = tuple(LambdaComponent(LP_OF[k], m[k].as_fit()) for k in ("lambda1", "lambda2") if k in m)
    return NuisanceSet(m["eta"].as_fit(), m["mu"].as_fit(), m["pi"].as_fit(), lam, coef.lc_names,
                       gauss_hermite(kw.pop("y_nodes", 20)), pi_clip=pi_clip, **kw)


def _drop_vars(terms, banned):
    return tuple(t for t in terms if not set(t.vars) & banned)


def _with(terms, extra):
    out = list(terms)
    for t in as_terms(extra):
        if t not in out:
            out.append(t)
    return tuple(out)


def default_nuisance_specs(coef: ScenarioCoefficients, gamma_shape="moment") -> NuisanceSpecs:
    """Parametric fit specs: the generating terms where the design admits them.

    Under the alternative factorization the generating models condition on
    the wrong variables, so the fits drop L_p from eta and mu and let the
    lambda models depend on (A, Y).
    """
    if coef.factorization == NP_BETA:
        return NuisanceSpecs(
            pi=as_terms(NP_PI), eta_known=0.5, mu_kind=MU_BETA,
            lam=(LambdaSpec("L1", GlmFamily.BERNOULLI, as_terms(NP_L1)),
                 LambdaSpec("L2", GlmFamily.GAUSSIAN, as_terms(NP_L2))),
            gamma_shape=gamma_shape)
    m = coef.models
    if coef.factorization == LEVIS:
        lam = [LambdaSpec("L4", GlmFamily.GAMMA, m["lambda1"].terms)]
        if "lambda2" in m:
            lam.append(LambdaSpec("L5", GlmFamily.BERNOULLI, m["lambda2"].terms))
        return NuisanceSpecs(pi=m["pi"].terms, lam=tuple(lam), eta=m["eta"].terms,
                             mu=m["mu"].terms, gamma_shape=gamma_shape)
    lp = set(coef.lp_names)
    lam = [LambdaSpec("L4", GlmFamily.GAMMA, _with(m["lambda1"].terms, ["A", "Y", "A:Y"]))]
    if "lambda2" in m:
        lam.append(LambdaSpec("L5", GlmFamily.BERNOULLI, _with(m["lambda2"].terms, ["A", "Y"])))
    return NuisanceSpecs(pi=m["pi"].terms, lam=tuple(lam), eta=_drop_vars(m["eta"].terms, lp),
                         mu=_drop_vars(m["mu"].terms, lp), gamma_shape=gamma_shape)


# ---------------------------------------------------------------------------
# ground truth


@dataclass(frozen=True)
class Truth:
    value: float
    mc_se: float
    method: str


def true_ate(coef: ScenarioCoefficients, n_mc: int = 2_000_000, repeats: int = 5, seed: int = 0,
             lc_gen: LcGenerator = LcGenerator()) -> Truth:
    """Ground-truth ATE and its Monte Carlo standard error.

    np-beta is analytic (1/3). The alternative design averages the
    outcome-model contrast over fresh full-data draws. The levis design has
    no closed form, so the IWOR functional is evaluated with the true,
    unclipped nuisances on fresh draws; ``repeats`` independent batches give
    the standard error.
    """
    if coef.factorization == NP_BETA:
        return Truth(NP_TRUTH, 0.0, "analytic")
    if n_mc < 100_000:
        raise ConfigError("n_mc must be at least 1e5")
    if repeats < 1:
        raise ConfigError("repeats must be at least 1")
    vals = []
    if coef.factorization == ALTERNATIVE:
        mu = coef.models["mu"]
        for r in range(repeats):
            data, full = gen_alt(coef, n_mc, stream(seed, r, 99), lc_gen, return_full=True)
            env = {**data.lc(), **full}
            vals.append(float(np.mean(_full(mu.eta({**env, "A": 1.0}), n_mc)
                                      - _full(mu.eta({**env, "A": 0.0}), n_mc))))
        method = "counterfactual-mean"
    else:
        from .estimators import chi_iwor
        ns = true_nuisance_set(coef, pi_clip=None)
        for r in range(repeats):
            rng = stream(seed, r, 99)
            vals.append(_chunked_iwor(coef, ns, n_mc, rng, lc_gen, chi_iwor))
        method = "iwor-true-nuisances"
    vals = np.asarray(vals)
    se = float(vals.std(ddof=1) / np.sqrt(repeats)) if repeats > 1 else float("nan")
    return Truth(float(vals.mean()), se, method)


def _chunked_iwor(coef, ns, n_mc, rng, lc_gen, chi_iwor, chunk=500_000):
    total = 0.0
    done = 0
    while done < n_mc:
        k = min(chunk, n_mc - done)
        d = gen_levis(coef, k, rng, lc_gen)
        total += k * (chi_iwor(ns, d, 1) - chi_iwor(ns, d, 0))
        done += k
    return total / n_mc
