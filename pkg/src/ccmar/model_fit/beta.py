from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from ..errors import DomainError


@dataclass(frozen=True)
class BetaLaw:
    shape1: float
    shape2: float
    converged: bool = True

    def __post_init__(self):
        if not (self.shape1 > 0 and self.shape2 > 0):
            raise DomainError("beta shapes must be positive")

    @property
    def mean(self) -> float:
        return self.shape1 / (self.shape1 + self.shape2)

    @property
    def var(self) -> float:
        a, b = self.shape1, self.shape2
        return a * b / ((a + b) ** 2 * (a + b + 1))

    def logpdf(self, y):
        a, b = self.shape1, self.shape2
        return special.xlogy(a - 1, y) + special.xlog1py(b - 1, -y) - special.betaln(a, b)

    def pdf(self, y):
        return np.exp(self.logpdf(y))


def beta_moment_start(samples) -> tuple[float, float]:
    """Method-of-moments shapes: solve mean and variance for (a, b)."""
    y = np.asarray(samples, dtype=float)
    m = y.mean()
    v = y.var()
    common = m * (1 - m) / v - 1.0
    return m * common, (1 - m) * common


def fit_beta_mle(samples, max_iter: int = 100, tol: float = 1e-8) -> BetaLaw:
    """Beta MLE by Newton's method started at the moment estimates.

    Convergence is declared when the per-observation score has Euclidean
    norm below ``tol``; otherwise the last iterate comes back with
    ``converged=False``.
    """
    y = np.asarray(samples, dtype=float)
    if y.ndim != 1 or y.size < 10:
        raise DomainError("need at least 10 samples")
    if np.any(y <= 0) or np.any(y >= 1):
        raise DomainError("beta samples must lie strictly inside (0, 1)")
    s1 = np.mean(np.log(y))
    s2 = np.mean(np.log1p(-y))
    a, b = beta_moment_start(y)
    if not (a > 0 and b > 0):
        a, b = 1.0, 1.0

    def score(a, b):
        dab = special.digamma(a + b)
        return np.array([dab - special.digamma(a) + s1, dab - special.digamma(b) + s2])

    def loglik(a, b):
        return (a - 1) * s1 + (b - 1) * s2 - special.betaln(a, b)

    g = score(a, b)
    for _ in range(max_iter):
        if np.linalg.norm(g) < tol:
            return BetaLaw(float(a), float(b), True)
        t = special.polygamma(1, a + b)
        H = np.array([[t - special.polygamma(1, a), t], [t, t - special.polygamma(1, b)]])
        step = np.linalg.solve(H, -g)
        ll0 = loglik(a, b)
        scale = 1.0
        for _ in range(30):
            na, nb = a + scale * step[0], b + scale * step[1]
            if na > 0 and nb > 0 and loglik(na, nb) >= ll0 - 1e-12 * abs(ll0):
                break
            scale *= 0.5
        a, b = na, nb
        g = score(a, b)
    return BetaLaw(float(a), float(b), bool(np.linalg.norm(g) < tol))
