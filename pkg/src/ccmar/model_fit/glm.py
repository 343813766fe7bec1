"""Generalized linear models fitted by iteratively reweighted least squares."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import optimize, special

from ..errors import DomainError, SingularDesignError, StateError
from .terms import TermSpec, as_terms, linear_predictor

PROB_CLIP = 1e-12
SEPARATION_ETA = 30.0


class GlmFamily(str, enum.Enum):
    """Response family with its (fixed) link.

    The dispersion slot of a fitted model holds sigma for the gaussian
    family and the gamma shape alpha for the gamma family.
    """

    GAUSSIAN = "gaussian-identity"
    BERNOULLI = "bernoulli-logit"
    GAMMA = "gamma-log"

    def inverse_link(self, eta):
        if self is GlmFamily.GAUSSIAN:
            return eta
        if self is GlmFamily.BERNOULLI:
            return special.expit(eta)
        return np.exp(eta)

    def link(self, mu):
        if self is GlmFamily.GAUSSIAN:
            return mu
        if self is GlmFamily.BERNOULLI:
            return special.logit(mu)
        return np.log(mu)

    def _mu_eta(self, eta, mu):
        if self is GlmFamily.GAUSSIAN:
            return np.ones_like(mu)
        if self is GlmFamily.BERNOULLI:
            return np.maximum(mu * (1.0 - mu), 1e-300)
        return mu

    def _variance(self, mu):
        if self is GlmFamily.GAUSSIAN:
            return np.ones_like(mu)
        if self is GlmFamily.BERNOULLI:
            return np.maximum(mu * (1.0 - mu), 1e-300)
        return mu * mu

    def deviance(self, y, mu, w):
        if self is GlmFamily.GAUSSIAN:
            return float(np.sum(w * (y - mu) ** 2))
        if self is GlmFamily.BERNOULLI:
            mu = np.clip(mu, 1e-300, 1.0 - 1e-16)
            return float(-2.0 * np.sum(w * (special.xlogy(y, mu) + special.xlog1py(1.0 - y, -mu))))
        return float(2.0 * np.sum(w * (-np.log(y / mu) + (y - mu) / mu)))

    def check_response(self, y):
        if self is GlmFamily.BERNOULLI and not np.all((y == 0) | (y == 1)):
            raise DomainError("bernoulli response must be 0/1")
        if self is GlmFamily.GAMMA and not np.all(y > 0):
            raise DomainError("gamma response must be strictly positive")
        if not np.all(np.isfinite(y)):
            raise DomainError("response contains non-finite values")


@dataclass(frozen=True)
class FittedGlm:
    terms: Optional[tuple[TermSpec, ...]]
    coef: np.ndarray
    family: GlmFamily
    dispersion: Optional[float] = None
    penalty: Optional[float] = None
    converged: bool = True
    n_used: int = 0
    iterations: int = 0
    deviance: float = float("nan")
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        coef = np.array(self.coef, dtype=float)
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)
        if self.terms is not None:
            terms = as_terms(self.terms)
            object.__setattr__(self, "terms", terms)
            if len(terms) != coef.shape[0]:
                raise ValueError("coefficients and terms have different lengths")
        if not np.all(np.isfinite(coef)):
            raise ValueError("fitted coefficients must be finite")
        if self.family is GlmFamily.GAUSSIAN and self.dispersion is not None and self.dispersion < 0:
            raise ValueError("sigma must be non-negative")
        if self.family is GlmFamily.GAMMA and self.dispersion is not None and not self.dispersion > 0:
            raise ValueError("gamma shape must be positive")

    @property
    def sigma(self) -> float:
        return self.dispersion

    @property
    def shape(self) -> float:
        return self.dispersion

    def eta(self, env: Mapping[str, np.ndarray]) -> np.ndarray:
        if self.terms is None:
            raise StateError("model was fitted without term labels; use predict_design")
        return linear_predictor(self.terms, self.coef, env)

    def mean(self, env: Mapping[str, np.ndarray]) -> np.ndarray:
        """Conditional mean (a probability for the bernoulli family)."""
        mu = self.family.inverse_link(self.eta(env))
        if self.family is GlmFamily.BERNOULLI:
            mu = np.clip(mu, PROB_CLIP, 1.0 - PROB_CLIP)
        return mu

    def predict_design(self, X: np.ndarray) -> np.ndarray:
        mu = self.family.inverse_link(np.asarray(X, dtype=float) @ self.coef)
        if self.family is GlmFamily.BERNOULLI:
            mu = np.clip(mu, PROB_CLIP, 1.0 - PROB_CLIP)
        return mu

    def coef_dict(self) -> dict[str, float]:
        return {t.name: float(c) for t, c in zip(self.terms, self.coef)}


def glm_predict(fit: FittedGlm, record: Mapping[str, float]) -> float:
    """Inverse link of the linear predictor at a single record."""
    return float(fit.mean({k: np.asarray(v, dtype=float) for k, v in record.items()}))


def _wls(X, z, W):
    sw = np.sqrt(W)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
    return beta


def gamma_shape_mle(y, mu, w=None) -> float:
    """Profile MLE of the gamma shape for fixed means."""
    w = np.ones_like(y) if w is None else w
    r = y / mu
    d = float(np.sum(w * (r - np.log(r) - 1.0)) / np.sum(w))
    if d <= 0:
        return float("inf")
    f = lambda a: np.log(a) - special.digamma(a) - d
    return float(optimize.brentq(f, 1e-8, 1e10, xtol=1e-14, rtol=1e-14))


def fit_glm(
    family: GlmFamily | str,
    design: np.ndarray,
    response: np.ndarray,
    weights: Optional[np.ndarray] = None,
    *,
    terms: Optional[Sequence[TermSpec | str]] = None,
    shape: str | float = "moment",
    max_iter: int = 50,
    tol: float = 1e-14,
) -> FittedGlm:
    """Maximum-likelihood GLM fit by IRLS.

    Stops when ``|dev - dev_old| / (|dev| + 0.1) < tol`` or after
    ``max_iter`` iterations; steps that increase the deviance are halved up
    to ten times. A rank-deficient design raises
    :class:`SingularDesignError`. Logistic fits whose linear predictor runs
    off to infinity (separation) come back with ``converged=False``.

    ``shape`` selects the gamma shape estimate: ``"moment"`` for
    ``(n - p) / Pearson chi^2``, ``"mle"`` for the profile MLE, or a number
    to hold the shape fixed.
    """
    family = GlmFamily(family)
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("design must be (n, p) and response (n,)")
    n, p = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DomainError("weights must be a finite non-negative vector of length n")
    if n < p:
        raise DomainError(f"need at least as many rows as coefficients (n={n}, p={p})")
    family.check_response(y)
    if p and np.linalg.matrix_rank(X * np.sqrt(w)[:, None]) < p:
        raise SingularDesignError(f"design of shape {X.shape} is rank deficient")

    if family is GlmFamily.GAUSSIAN:
        beta = _wls(X, y, w)
        rss = family.deviance(y, X @ beta, w)
        dof = max(n - p, 1)
        return FittedGlm(terms, beta, family, dispersion=float(np.sqrt(rss / dof)),
                         converged=True, n_used=n, iterations=1, deviance=rss)

    if family is GlmFamily.BERNOULLI:
        mu = (w * y + 0.5) / (w + 1.0)
    else:
        mu = y.copy()
    eta = family.link(mu)
    dev_old = family.deviance(y, mu, w)
    beta = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu_eta = family._mu_eta(eta, mu)
        z = eta + (y - mu) / mu_eta
        W = w * mu_eta ** 2 / family._variance(mu)
        beta_new = _wls(X, z, W)
        eta_new = X @ beta_new
        mu_new = family.inverse_link(eta_new)
        dev = family.deviance(y, mu_new, w)
        if beta is not None:
            halvings = 0
            while (not np.isfinite(dev) or dev > dev_old + 1e-12 * abs(dev_old)) and halvings < 10:
                beta_new = 0.5 * (beta + beta_new)
                eta_new = X @ beta_new
                mu_new = family.inverse_link(eta_new)
                dev = family.deviance(y, mu_new, w)
                halvings += 1
        done = abs(dev - dev_old) / (abs(dev) + 0.1) < tol
        beta, eta, mu, dev_old = beta_new, eta_new, mu_new, dev
        if done:
            converged = True
            break
    if family is GlmFamily.BERNOULLI and np.max(np.abs(eta)) > SEPARATION_ETA:
        converged = False

    dispersion = None
    if family is GlmFamily.GAMMA:
        if isinstance(shape, str):
            if shape == "moment":
                chi2 = float(np.sum(w * ((y - mu) / mu) ** 2))
                dispersion = (n - p) / chi2 if chi2 > 0 else float("inf")
            elif shape == "mle":
                dispersion = gamma_shape_mle(y, mu, w)
            else:
                raise ValueError(f"unknown shape method {shape!r}")
        else:
            dispersion = float(shape)
        if not np.isfinite(dispersion):
            dispersion = 1e8
    return FittedGlm(terms, beta, family, dispersion=dispersion, converged=converged,
                     n_used=n, iterations=it, deviance=dev_old)


def log_likelihood(family: GlmFamily | str, y, mu, dispersion=None, w=None) -> float:
    """Full log-likelihood, used by tests and by the gamma-shape MLE check."""
    family = GlmFamily(family)
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    if family is GlmFamily.GAUSSIAN:
        s = dispersion
        return float(np.sum(w * (-0.5 * ((y - mu) / s) ** 2 - np.log(s) - 0.5 * np.log(2 * np.pi))))
    if family is GlmFamily.BERNOULLI:
        return float(np.sum(w * (special.xlogy(y, mu) + special.xlog1py(1 - y, -mu))))
    a = dispersion
    rate = a / mu
    return float(np.sum(w * (a * np.log(rate) - special.gammaln(a) + (a - 1) * np.log(y) - rate * y)))
