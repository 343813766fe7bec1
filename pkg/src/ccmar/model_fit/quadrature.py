"""Fixed-node quadrature rules and the expectations built on them.

Rules are normalized so that the weights integrate the law itself, i.e.
``sum(weights) == 1`` after mapping onto a particular distribution.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from numpy.polynomial import hermite, legendre
from scipy import special

from ..errors import ConfigError, DomainError
from .beta import BetaLaw

HERMITE = "gauss-hermite"
LAGUERRE = "generalized-gauss-laguerre"
LEGENDRE = "gauss-legendre"

DEFAULT_HERMITE_NODES = 20
DEFAULT_LAGUERRE_NODES = 30
DEFAULT_LEGENDRE_NODES = 40


@functools.lru_cache(maxsize=256)
def _hermite(k):
    x, w = hermite.hermgauss(k)
    return x, w


@functools.lru_cache(maxsize=256)
def _laguerre(k, alpha):
    x, w = special.roots_genlaguerre(k, alpha)
    return x, w


@functools.lru_cache(maxsize=256)
def _legendre(k):
    x, w = legendre.leggauss(k)
    return x, w


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for one of three classical Gauss rules.

    ``gauss-hermite`` integrates against exp(-x^2) on the real line,
    ``generalized-gauss-laguerre`` against x^alpha exp(-x) on (0, inf), and
    ``gauss-legendre`` is mapped to the unit interval.
    """

    kind: str
    n_nodes: int
    alpha_param: float = 0.0

    def __post_init__(self):
        if self.kind not in (HERMITE, LAGUERRE, LEGENDRE):
            raise ConfigError(f"unknown quadrature kind {self.kind!r}")
        if self.n_nodes < 2:
            raise ConfigError("quadrature rules need at least 2 nodes")
        if self.kind == LAGUERRE and not self.alpha_param > -1:
            raise DomainError("Laguerre alpha parameter must exceed -1")

    @property
    def nodes(self) -> np.ndarray:
        return self._raw()[0]

    @property
    def weights(self) -> np.ndarray:
        return self._raw()[1]

    def _raw(self):
        if self.kind == HERMITE:
            return _hermite(self.n_nodes)
        if self.kind == LAGUERRE:
            return _laguerre(self.n_nodes, float(self.alpha_param))
        x, w = _legendre(self.n_nodes)
        return 0.5 * (x + 1.0), 0.5 * w

    # -- mapped rules: return (nodes, probability weights) --------------

    def gaussian(self, mean, sd):
        """Nodes for N(mean, sd^2); ``mean``/``sd`` broadcast, nodes on a new last axis."""
        self._expect(HERMITE)
        x, w = self.nodes, self.weights
        mean = np.asarray(mean, dtype=float)[..., None]
        sd = np.asarray(sd, dtype=float)[..., None]
        return mean + np.sqrt(2.0) * sd * x, w / np.sqrt(np.pi)

    def gamma(self, shape, rate):
        """Nodes for Gamma(shape, rate); rule alpha must equal shape - 1."""
        self._expect(LAGUERRE)
        if not np.isclose(self.alpha_param, shape - 1.0, rtol=0, atol=1e-12):
            raise ConfigError("Laguerre alpha parameter must equal gamma shape - 1")
        x, w = self.nodes, self.weights
        rate = np.asarray(rate, dtype=float)[..., None]
        return x / rate, w / np.sum(w)

    def beta(self, law: BetaLaw):
        """Unit-interval nodes with weights times the beta density."""
        self._expect(LEGENDRE)
        y, w = self.nodes, self.weights
        return y, w * law.pdf(y)

    def _expect(self, kind):
        if self.kind != kind:
            raise ConfigError(f"rule of kind {self.kind} cannot be used where {kind} is required")


def gauss_hermite(n_nodes: int = DEFAULT_HERMITE_NODES) -> QuadratureRule:
    return QuadratureRule(HERMITE, n_nodes)


def gen_laguerre(n_nodes: int = DEFAULT_LAGUERRE_NODES, alpha_param: float = 0.0) -> QuadratureRule:
    return QuadratureRule(LAGUERRE, n_nodes, float(alpha_param))


def gauss_legendre(n_nodes: int = DEFAULT_LEGENDRE_NODES) -> QuadratureRule:
    return QuadratureRule(LEGENDRE, n_nodes)


@dataclass(frozen=True)
class GaussianLaw:
    mean: float
    sd: float

    def __post_init__(self):
        if self.sd < 0:
            raise DomainError("gaussian sd must be non-negative")


OutcomeLaw = Union[GaussianLaw, BetaLaw]


def expect_outcome(law: OutcomeLaw, f: Callable[[np.ndarray], np.ndarray], rule: QuadratureRule) -> float:
    """E[f(Y)] for a gaussian (Hermite) or beta (Legendre on (0, 1)) outcome law."""
    if isinstance(law, GaussianLaw):
        if rule.kind != HERMITE:
            raise ConfigError("gaussian outcome law needs a Gauss-Hermite rule")
        y, w = rule.gaussian(law.mean, law.sd)
    elif isinstance(law, BetaLaw):
        if rule.kind != LEGENDRE:
            raise ConfigError("beta outcome law needs a Gauss-Legendre rule")
        y, w = rule.beta(law)
    else:
        raise ConfigError(f"unsupported outcome law {law!r}")
    return float(np.sum(w * f(y)))


def expect_gamma(shape: float, rate: float, g: Callable[[np.ndarray], np.ndarray],
                 rule: QuadratureRule | None = None) -> float:
    """E[g(L)] for L ~ Gamma(shape, rate) by generalized Gauss-Laguerre."""
    if not (shape > 0 and rate > 0):
        raise DomainError("gamma shape and rate must be positive")
    if rule is None:
        rule = gen_laguerre(DEFAULT_LAGUERRE_NODES, shape - 1.0)
    if rule.kind != LAGUERRE:
        raise ConfigError("gamma expectation needs a generalized Gauss-Laguerre rule")
    x, w = rule.gamma(shape, rate)
    return float(np.sum(w * g(x)))
