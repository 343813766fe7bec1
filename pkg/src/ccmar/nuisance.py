"""Nuisance models of the complete-case factorization and the functionals built on them.

The factorization splits the coarsened likelihood into

* eta(a | L_c)          treatment law
* mu(y | L_c, a)        outcome law
* pi(L_c, A, Y)         probability of being a complete case
* lambda(l_p | L_c, A, Y, S=1), a product of per-component conditionals
  lambda_1(L4 | ...), lambda_2(L5 | ..., L4), ...

From these, for a target arm a,

    gamma(L_c, a; l_p) = int lambda(l_p | L_c, a, y) dmu(y | L_c, a)
    beta(L_c, a; l_p)  = int y lambda(l_p | L_c, a, y) dmu(y | L_c, a)
    xi = beta / gamma,  tau = sum_a' eta(a' | L_c) gamma(L_c, a'; l_p)

and the correction terms b_a1, b_a2 integrate xi-type quantities against
lambda at an observed (L_c, A, Y). Everything is evaluated on quadrature
grids in log space: gamma is a log-sum-exp and xi a softmax-weighted mean,
so tiny gamma values never have to be divided.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy import special

from .data import CoarsenedData
from .errors import ConditioningSetError, ConfigError, MissingDataError, StateError
from .model_fit import (
    BetaLaw,
    FittedGlm,
    GlmFamily,
    QuadratureRule,
    TermSpec,
    as_terms,
    build_design,
    fit_beta_mle,
    fit_glm,
    gauss_hermite,
    gauss_legendre,
    gen_laguerre,
)
from .model_fit.terms import term_vars

GAMMA_FLOOR = 1e-12
DEFAULT_PI_CLIP = (0.01, 0.99)
MU_GAUSSIAN = "gaussian"
MU_BETA = "beta-per-arm"
LP_QUADRATURE = "quadrature"
LP_MONTE_CARLO = "monte-carlo"
_CHUNK_ELEMENTS = 2_000_000
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class LambdaSpec:
    """Model for one partially missing confounder given everything before it."""

    name: str
    family: GlmFamily
    terms: tuple[TermSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "family", GlmFamily(self.family))
        object.__setattr__(self, "terms", as_terms(self.terms))


@dataclass(frozen=True)
class NuisanceSpecs:
    """Term lists for each nuisance.

    ``eta_known`` fixes P(A=1 | L_c) at a constant instead of fitting it.
    ``mu_kind`` is ``"gaussian"`` (linear model on ``mu`` terms) or
    ``"beta-per-arm"`` (a beta law per treatment arm; ``mu`` terms unused).
    """

    pi: tuple[TermSpec, ...]
    lam: tuple[LambdaSpec, ...]
    eta: Optional[tuple[TermSpec, ...]] = None
    mu: Optional[tuple[TermSpec, ...]] = None
    eta_known: Optional[float] = None
    mu_kind: str = MU_GAUSSIAN
    gamma_shape: Union[str, float] = "moment"

    def __post_init__(self):
        object.__setattr__(self, "pi", as_terms(self.pi))
        object.__setattr__(self, "lam", tuple(self.lam))
        if self.eta is not None:
            object.__setattr__(self, "eta", as_terms(self.eta))
        if self.mu is not None:
            object.__setattr__(self, "mu", as_terms(self.mu))
        if self.eta is None and self.eta_known is None:
            raise ConfigError("either eta terms or a known eta probability is required")
        if self.eta_known is not None and not 0 < self.eta_known < 1:
            raise ConfigError("known eta probability must lie in (0, 1)")
        if self.mu_kind not in (MU_GAUSSIAN, MU_BETA):
            raise ConfigError(f"unknown outcome law kind {self.mu_kind!r}")
        if self.mu_kind == MU_GAUSSIAN and self.mu is None:
            raise ConfigError("gaussian outcome law needs mu terms")
        if not self.lam:
            raise ConfigError("at least one partially missing confounder model is required")

    def validate(self, lc_names: Sequence[str], lp_names: Sequence[str]) -> None:
        """Check each model only uses its legal conditioning set."""
        lc = set(lc_names)
        if [s.name for s in self.lam] != list(lp_names):
            raise ConfigError(f"lambda models {[s.name for s in self.lam]} do not match L_p {list(lp_names)}")
        legal = {"eta": lc, "mu": lc | {"A"}, "pi": lc | {"A", "Y"}}
        for model, allowed in legal.items():
            terms = getattr(self, model)
            if terms is None or (model == "mu" and self.mu_kind == MU_BETA):
                continue
            _check_vars(model, terms, allowed)
        allowed = lc | {"A", "Y"}
        for s in self.lam:
            _check_vars(f"lambda[{s.name}]", s.terms, allowed)
            allowed = allowed | {s.name}


def _check_vars(model, terms, allowed):
    bad = sorted(term_vars(terms) - set(allowed))
    if bad:
        raise ConditioningSetError(
            f"{model} model may only use {sorted(allowed)}; got {bad}")


@dataclass(frozen=True)
class BetaPerArm:
    """Outcome law Y | A=a ~ Beta(shape1_a, shape2_a), free of L_c."""

    arm0: BetaLaw
    arm1: BetaLaw

    def law(self, a: int) -> BetaLaw:
        return self.arm1 if a == 1 else self.arm0


@dataclass(frozen=True)
class LambdaComponent:
    name: str
    fit: FittedGlm


@dataclass(frozen=True)
class NuisanceSet:
    """Fitted (or true) eta, mu, pi and lambda plus the integration settings.

    ``pi_clip`` bounds pi predictions at evaluation time; ``None`` disables
    clipping. ``lp_method`` picks deterministic quadrature or seeded Monte
    Carlo (``mc_draws`` common draws) for continuous L_p components.
    """

    eta: FittedGlm
    mu: Union[FittedGlm, BetaPerArm]
    pi: FittedGlm
    lam: tuple[LambdaComponent, ...]
    lc_names: tuple[str, ...]
    y_rule: QuadratureRule
    laguerre_nodes: int = 30
    hermite_nodes: int = 20
    pi_clip: Optional[tuple[float, float]] = DEFAULT_PI_CLIP
    lp_method: str = LP_QUADRATURE
    mc_draws: int = 500
    mc_seed: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.lp_method not in (LP_QUADRATURE, LP_MONTE_CARLO):
            raise ConfigError(f"unknown L_p integration method {self.lp_method!r}")
        if isinstance(self.mu, BetaPerArm):
            if self.y_rule.kind != "gauss-legendre":
                raise ConfigError("beta outcome law needs a Gauss-Legendre rule")
        elif self.y_rule.kind != "gauss-hermite":
            raise ConfigError("gaussian outcome law needs a Gauss-Hermite rule")
        if self.pi_clip is not None:
            lo, hi = self.pi_clip
            if not 0 <= lo < hi <= 1:
                raise ConfigError("pi clip bounds must satisfy 0 <= lo < hi <= 1")
        object.__setattr__(self, "lam", tuple(self.lam))
        object.__setattr__(self, "lc_names", tuple(self.lc_names))

    @property
    def lp_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.lam)

    @property
    def converged(self) -> bool:
        fits = [self.eta, self.pi, *(c.fit for c in self.lam)]
        if isinstance(self.mu, FittedGlm):
            fits.append(self.mu)
        else:
            fits.extend([self.mu.arm0, self.mu.arm1])
        return all(f.converged for f in fits)


def _require(ns):
    if not isinstance(ns, NuisanceSet) or any(
            x is None for x in (ns.eta, ns.mu, ns.pi)) or not ns.lam:
        raise StateError("nuisance set is not fitted")


# ---------------------------------------------------------------------------
# fitting


def _known_eta(p: float) -> FittedGlm:
    return FittedGlm(as_terms(["(Intercept)"]), [special.logit(p)], GlmFamily.BERNOULLI,
                     n_used=0, meta={"known": True})


def fit_nuisance_set(
    data: CoarsenedData,
    specs: NuisanceSpecs,
    *,
    pi_clip: Optional[tuple[float, float]] = DEFAULT_PI_CLIP,
    y_nodes: Optional[int] = None,
    laguerre_nodes: int = 30,
    hermite_nodes: int = 20,
    lp_method: str = LP_QUADRATURE,
    mc_draws: int = 500,
    mc_seed: int = 0,
) -> NuisanceSet:
    """Fit eta, mu and pi on all rows and each lambda component on complete cases."""
    specs.validate(data.lc_names, data.lp_names)
    cc = data.s == 1
    for arm in (0, 1):
        if not np.any(cc & (data.a == arm)):
            raise MissingDataError(f"no complete cases in treatment arm {arm}")
    cols = data.columns

    if specs.eta_known is not None:
        eta = _known_eta(specs.eta_known)
    else:
        eta = fit_glm(GlmFamily.BERNOULLI, build_design(specs.eta, cols), data.a, terms=specs.eta)

    if specs.mu_kind == MU_BETA:
        mu = BetaPerArm(fit_beta_mle(data.y[data.a == 0]), fit_beta_mle(data.y[data.a == 1]))
        y_rule = gauss_legendre(y_nodes or 40)
    else:
        mu = fit_glm(GlmFamily.GAUSSIAN, build_design(specs.mu, cols), data.y, terms=specs.mu)
        y_rule = gauss_hermite(y_nodes or 20)

    pi = fit_glm(GlmFamily.BERNOULLI, build_design(specs.pi, cols), data.s, terms=specs.pi)

    ccd = data.complete_cases().columns
    lam = []
    for s in specs.lam:
        fit = fit_glm(s.family, build_design(s.terms, ccd), ccd[s.name], terms=s.terms,
                      shape=specs.gamma_shape)
        lam.append(LambdaComponent(s.name, fit))

    return NuisanceSet(eta, mu, pi, tuple(lam), data.lc_names, y_rule,
                       laguerre_nodes=laguerre_nodes, hermite_nodes=hermite_nodes,
                       pi_clip=pi_clip, lp_method=lp_method, mc_draws=mc_draws, mc_seed=mc_seed)


# ---------------------------------------------------------------------------
# evaluation helpers


def _rows(ns, l_c, *others):
    """Normalize L_c (mapping or array in ``ns.lc_names`` order) plus extra row vectors."""
    if isinstance(l_c, Mapping):
        lc = {k: np.atleast_1d(np.asarray(l_c[k], dtype=float)) for k in ns.lc_names}
    else:
        arr = np.asarray(l_c if l_c is not None else [], dtype=float)
        if arr.ndim <= 1:
            arr = arr.reshape(1, -1)
        if arr.shape[1] != len(ns.lc_names):
            raise ConfigError(f"L_c must have {len(ns.lc_names)} components")
        lc = {k: arr[:, j] for j, k in enumerate(ns.lc_names)}
    scalar = all(np.ndim(v) == 0 for v in others) and all(v.shape[0] == 1 for v in lc.values())
    rows = [np.atleast_1d(np.asarray(v, dtype=float)) for v in others]
    n = max([v.shape[0] for v in lc.values()] + [v.shape[0] for v in rows] + [1])
    lc = {k: np.broadcast_to(v, (n,)) for k, v in lc.items()}
    rows = [np.broadcast_to(v, (n,)) for v in rows]
    return lc, rows, n, scalar


def _lp_rows(ns, l_p, n):
    out = {}
    for name in ns.lp_names:
        if isinstance(l_p, Mapping):
            v = l_p[name]
        else:
            v = np.asarray(l_p, dtype=float)[..., ns.lp_names.index(name)]
        out[name] = np.broadcast_to(np.atleast_1d(np.asarray(v, dtype=float)), (n,))
    return out


def _eta1(ns, lc):
    return ns.eta.mean(lc)


def _eta_arm(ns, lc, a):
    p1 = _eta1(ns, lc)
    return p1 if a == 1 else 1.0 - p1


def pi_hat(ns: NuisanceSet, l_c, a, y, clip: bool = True):
    """P(S=1 | L_c, A, Y), clipped to ``ns.pi_clip`` unless ``clip`` is false."""
    _require(ns)
    lc, (a, y), n, scalar = _rows(ns, l_c, a, y)
    p = np.broadcast_to(ns.pi.mean({**lc, "A": a, "Y": y}), (n,))
    if clip and ns.pi_clip is not None:
        p = np.clip(p, *ns.pi_clip)
    return float(p[0]) if scalar else p


def _log_density(fit: FittedGlm, x, eta):
    fam = fit.family
    if fam is GlmFamily.GAMMA:
        al = fit.shape
        return (al * np.log(al) - al * eta - special.gammaln(al)
                + (al - 1.0) * np.log(x) - al * x * np.exp(-eta))
    if fam is GlmFamily.BERNOULLI:
        return x * eta - np.logaddexp(0.0, eta)
    s = fit.sigma
    return -0.5 * ((x - eta) / s) ** 2 - np.log(s) - _LOG_SQRT_2PI


def _y_grid(ns, lc, a, n):
    """Outcome nodes (n or 1, 1, K) and log weights broadcastable to them."""
    if isinstance(ns.mu, BetaPerArm):
        y = ns.y_rule.nodes
        lw = np.log(ns.y_rule.weights)
        a = np.asarray(a)
        if a.ndim == 0:
            lw = lw + ns.mu.law(int(a)).logpdf(y)
            return y[None, None, :], lw[None, None, :]
        lw0 = lw + ns.mu.arm0.logpdf(y)
        lw1 = lw + ns.mu.arm1.logpdf(y)
        lwa = np.where(a[:, None] == 1, lw1[None, :], lw0[None, :])
        return y[None, None, :], lwa[:, None, :]
    m = np.broadcast_to(ns.mu.eta({**lc, "A": np.asarray(a, dtype=float)}), (n,))
    x, w = ns.y_rule.nodes, ns.y_rule.weights
    y = m[:, None, None] + np.sqrt(2.0) * ns.mu.sigma * x[None, None, :]
    return y, np.log(w / np.sqrt(np.pi))[None, None, :]


def _xi_loggamma(ns, lc, a, lp):
    """log gamma and xi at target arm ``a`` for L_p on a grid.

    ``lc`` values are (n,), ``lp`` values are (n, G); returns two (n, G) arrays.
    """
    n = next(iter(lp.values())).shape[0]
    y, lw = _y_grid(ns, lc, a, n)
    env = {k: v[:, None, None] for k, v in lc.items()}
    a_arr = np.asarray(a, dtype=float)
    env["A"] = a_arr if a_arr.ndim == 0 else a_arr[:, None, None]
    env["Y"] = y
    log_lam = 0.0
    for comp in ns.lam:
        x = lp[comp.name][:, :, None]
        env[comp.name] = x
        log_lam = log_lam + _log_density(comp.fit, x, comp.fit.eta(env))
    z = lw + log_lam
    z = np.broadcast_to(z, np.broadcast_shapes(z.shape, y.shape))
    lg = special.logsumexp(z, axis=-1)
    xi = np.sum(np.exp(z - lg[..., None]) * y, axis=-1)
    return lg, xi


def _mc_standard(ns, j, comp):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(ns.mc_seed, spawn_key=(j,))))
    if comp.fit.family is GlmFamily.GAMMA:
        return rng.standard_gamma(comp.fit.shape, ns.mc_draws)
    return rng.standard_normal(ns.mc_draws)


def _lp_grid(ns, lc, a, y):
    """Tensor grid over L_p under lambda(. | L_c, a, y): values (n, G) and log weights (n, G)."""
    n = a.shape[0]
    env = {k: v[:, None] for k, v in lc.items()}
    env["A"] = a[:, None]
    env["Y"] = y[:, None]
    grid: dict[str, np.ndarray] = {}
    logw = np.zeros((n, 1))
    for j, comp in enumerate(ns.lam):
        fit = comp.fit
        eta = np.broadcast_to(fit.eta({**env, **grid}), logw.shape)
        fam = fit.family
        mc = ns.lp_method == LP_MONTE_CARLO and fam is not GlmFamily.BERNOULLI
        if fam is GlmFamily.BERNOULLI:
            nodes = np.broadcast_to(np.array([0.0, 1.0]), eta.shape + (2,))
            lse = np.logaddexp(0.0, eta)[..., None]
            lw = np.stack([np.zeros_like(eta), eta], axis=-1) - lse
        elif mc:
            z = _mc_standard(ns, j, comp)
            if fam is GlmFamily.GAMMA:
                nodes = z[None, None, :] * (np.exp(eta) / fit.shape)[..., None]
            else:
                nodes = eta[..., None] + fit.sigma * z[None, None, :]
            lw = np.full(nodes.shape, -np.log(z.size))
        elif fam is GlmFamily.GAMMA:
            rule = gen_laguerre(ns.laguerre_nodes, fit.shape - 1.0)
            x, w = rule.nodes, rule.weights
            nodes = x[None, None, :] * (np.exp(eta) / fit.shape)[..., None]
            lw = np.broadcast_to(np.log(w / np.sum(w)), nodes.shape)
        else:
            rule = gauss_hermite(ns.hermite_nodes)
            nodes, w = rule.gaussian(eta, fit.sigma)
            lw = np.broadcast_to(np.log(w), nodes.shape)
        k = nodes.shape[-1]
        g = logw.shape[1]
        grid = {name: np.repeat(v, k, axis=1) for name, v in grid.items()}
        grid[comp.name] = np.reshape(nodes, (n, g * k))
        logw = np.reshape(logw[:, :, None] + lw, (n, g * k))
    return grid, logw


def _chunks(n, per_row):
    size = max(1, _CHUNK_ELEMENTS // max(per_row, 1))
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def _grid_size(ns):
    g = 1
    for comp in ns.lam:
        fam = comp.fit.family
        if fam is GlmFamily.BERNOULLI:
            g *= 2
        elif ns.lp_method == LP_MONTE_CARLO:
            g *= ns.mc_draws
        elif fam is GlmFamily.GAMMA:
            g *= ns.laguerre_nodes
        else:
            g *= ns.hermite_nodes
    return g


def _sub(d, sl):
    return {k: v[sl] for k, v in d.items()}


# ---------------------------------------------------------------------------
# public functionals


def beta_gamma(ns: NuisanceSet, l_c, a: int, l_p):
    """(beta, gamma) at target arm ``a`` for fully observed ``l_p``.

    Inputs broadcast over rows; scalars in give scalars out. gamma is
    floored at 1e-12.
    """
    _require(ns)
    lc, _, n, scalar = _rows(ns, l_c)
    lp = _lp_rows(ns, l_p, n)
    scalar = scalar and all(v.shape[0] == 1 for v in lp.values())
    n = max(n, max(v.shape[0] for v in lp.values()))
    lc = {k: np.broadcast_to(v, (n,)) for k, v in lc.items()}
    lp = {k: np.broadcast_to(v, (n,))[:, None] for k, v in lp.items()}
    lg, xi = _xi_loggamma(ns, lc, a, lp)
    gamma = np.maximum(np.exp(lg[:, 0]), GAMMA_FLOOR)
    beta = xi[:, 0] * np.exp(lg[:, 0])
    if scalar:
        return float(beta[0]), float(gamma[0])
    return beta, gamma


def xi(ns: NuisanceSet, l_c, a: int, l_p):
    """xi = beta / gamma, computed without forming the ratio explicitly."""
    _require(ns)
    lc, _, n, scalar = _rows(ns, l_c)
    lp = _lp_rows(ns, l_p, n)
    n = max(n, max(v.shape[0] for v in lp.values()))
    lc = {k: np.broadcast_to(v, (n,)) for k, v in lc.items()}
    lp = {k: np.broadcast_to(v, (n,))[:, None] for k, v in lp.items()}
    out = _xi_loggamma(ns, lc, a, lp)[1][:, 0]
    return float(out[0]) if scalar and n == 1 else out


def tau(ns: NuisanceSet, l_c, l_p):
    """tau = sum over arms of eta(a' | L_c) * gamma(L_c, a'; l_p)."""
    _require(ns)
    b0, g0 = beta_gamma(ns, l_c, 0, l_p)
    b1, g1 = beta_gamma(ns, l_c, 1, l_p)
    lc, _, n, scalar = _rows(ns, l_c)
    p1 = _eta1(ns, lc)
    out = p1 * g1 + (1.0 - p1) * g0
    if np.ndim(g0) == 0:
        return float(np.asarray(out).reshape(-1)[0])
    return np.broadcast_to(out, np.shape(g0))


def _b_terms(ns, lc, a_obs, y, arms, want_b2):
    """b_a1 for each target arm in ``arms`` and, if asked, b_a2 for arm ``a_obs``.

    Rows are chunked to bound the (rows x L_p grid x y grid) working set.
    """
    n = a_obs.shape[0]
    per_row = _grid_size(ns) * ns.y_rule.n_nodes
    b1 = {arm: np.empty(n) for arm in arms}
    b2 = np.empty(n) if want_b2 else None
    for sl in _chunks(n, per_row):
        lcs = _sub(lc, sl)
        grid, logw = _lp_grid(ns, lcs, a_obs[sl], y[sl])
        w = np.exp(logw)
        lg, xs = {}, {}
        need = set(arms) | ({0, 1} if want_b2 else set())
        for arm in sorted(need):
            lg[arm], xs[arm] = _xi_loggamma(ns, lcs, arm, grid)
        for arm in arms:
            b1[arm][sl] = np.sum(w * xs[arm], axis=1)
        if want_b2:
            ao = a_obs[sl].astype(int)
            p1 = np.broadcast_to(_eta1(ns, lcs), ao.shape)
            own_p = np.where(ao == 1, p1, 1.0 - p1)[:, None]
            other_p = 1.0 - own_p
            own_lg = np.where(ao[:, None] == 1, lg[1], lg[0])
            other_lg = np.where(ao[:, None] == 1, lg[0], lg[1])
            own_xi = np.where(ao[:, None] == 1, xs[1], xs[0])
            ratio = own_p + other_p * np.exp(other_lg - own_lg)
            b2[sl] = np.sum(w * ratio * (y[sl][:, None] - own_xi), axis=1)
    return b1, b2


def b_a1(ns: NuisanceSet, l_c, a_obs, y, a: int):
    """E[xi(L_c, a; L_p) | L_c, A=a_obs, Y=y, S=1] under the fitted lambda."""
    _require(ns)
    lc, (a_obs, y), n, scalar = _rows(ns, l_c, a_obs, y)
    b1, _ = _b_terms(ns, lc, np.asarray(a_obs, dtype=float), np.asarray(y, dtype=float), (a,), False)
    return float(b1[a][0]) if scalar else b1[a]


def b_a2(ns: NuisanceSet, l_c, y, a: int):
    """E[(tau/gamma_a)(y - xi_a) | L_c, A=a, Y=y, S=1] under the fitted lambda."""
    _require(ns)
    lc, (y,), n, scalar = _rows(ns, l_c, y)
    a_obs = np.full(n, float(a))
    _, b2 = _b_terms(ns, lc, a_obs, np.asarray(y, dtype=float), (), True)
    return float(b2[0]) if scalar else b2


@dataclass(frozen=True)
class RecordTerms:
    """Per-record pieces of the CCMAR estimators.

    ``xi_obs[:, a]`` and ``ratio_obs`` (tau / gamma at the observed arm) are
    NaN for incomplete rows; ``b2`` belongs to the observed arm.
    """

    pi: np.ndarray
    eta1: np.ndarray
    xi_obs: np.ndarray
    ratio_obs: np.ndarray
    b1: Optional[np.ndarray]
    b2: Optional[np.ndarray]
    n_clipped: int


def record_terms(ns: NuisanceSet, data: CoarsenedData, with_corrections: bool = True) -> RecordTerms:
    """Evaluate every nuisance quantity the estimators need on ``data``."""
    _require(ns)
    lc = {k: np.asarray(data[k]) for k in ns.lc_names}
    a = np.asarray(data.a)
    y = np.asarray(data.y)
    n = data.n
    raw_pi = np.broadcast_to(ns.pi.mean({**lc, "A": a, "Y": y}), (n,))
    pi = raw_pi
    n_clipped = 0
    if ns.pi_clip is not None:
        pi = np.clip(raw_pi, *ns.pi_clip)
        n_clipped = int(np.count_nonzero(pi != raw_pi))
    eta1 = np.broadcast_to(_eta1(ns, lc), (n,)).copy() if lc else np.full(n, float(_eta1(ns, {})))

    cc = np.flatnonzero(data.s == 1)
    xi_obs = np.full((n, 2), np.nan)
    ratio_obs = np.full(n, np.nan)
    lcc = {k: v[cc] for k, v in lc.items()}
    lp = {k: np.asarray(data[k])[cc][:, None] for k in ns.lp_names}
    per_row = ns.y_rule.n_nodes
    lgs = np.empty((cc.size, 2))
    for sl in _chunks(cc.size, per_row):
        for arm in (0, 1):
            lg, xs = _xi_loggamma(ns, _sub(lcc, sl), arm, _sub(lp, sl))
            lgs[sl, arm] = lg[:, 0]
            xi_obs[cc[sl], arm] = xs[:, 0]
    ao = a[cc].astype(int)
    p1 = eta1[cc]
    own_p = np.where(ao == 1, p1, 1.0 - p1)
    own = lgs[np.arange(cc.size), ao]
    other = lgs[np.arange(cc.size), 1 - ao]
    ratio_obs[cc] = own_p + (1.0 - own_p) * np.exp(other - own)

    b1 = b2 = None
    if with_corrections:
        b1d, b2 = _b_terms(ns, lc, a.astype(float), y, (0, 1), True)
        b1 = np.column_stack([b1d[0], b1d[1]])
    return RecordTerms(pi, eta1, xi_obs, ratio_obs, b1, b2, n_clipped)
