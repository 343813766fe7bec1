"""L1-penalized GLMs: coordinate descent along a lambda path with K-fold CV.

Columns are standardized (population SD) before fitting, the intercept is
never penalized, and coefficients are reported on the original scale.
Objectives follow glmnet:

* gaussian:  (1/2n) ||y - b0 - X b||^2 + lambda ||b||_1
* bernoulli: -(1/n) loglik(b0, b) + lambda ||b||_1
"""

from __future__ import annotations

from typing import Optional, Sequence

import numba
import numpy as np

from ..errors import ConfigError, DomainError
from .glm import FittedGlm, GlmFamily
from .terms import TermSpec

DEFAULT_N_LAMBDA = 100
DEFAULT_LAMBDA_MIN_RATIO = 1e-3
MIN_WEIGHT = 1e-5


@numba.njit(cache=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@numba.njit(cache=True)
def _gaussian_path(gram, xy, lambdas, active, tol, max_sweeps):
    # covariance-mode CD; gram = Xs'Xs/n, xy = Xs'(y - ybar)/n
    p = gram.shape[0]
    n_lam = lambdas.shape[0]
    out = np.zeros((n_lam, p))
    b = np.zeros(p)
    grad = xy.copy()
    sweeps = np.zeros(n_lam, dtype=np.int64)
    for li in range(n_lam):
        lam = lambdas[li]
        for sweep in range(max_sweeps):
            max_d = 0.0
            for j in range(p):
                if not active[j]:
                    continue
                gjj = gram[j, j]
                old = b[j]
                new = _soft(grad[j] + gjj * old, lam) / gjj
                d = new - old
                if d != 0.0:
                    b[j] = new
                    for k in range(p):
                        grad[k] -= gram[k, j] * d
                    if gjj * d * d > max_d:
                        max_d = gjj * d * d
            if max_d < tol:
                break
        sweeps[li] = sweep + 1
        out[li, :] = b
    return out, sweeps


@numba.njit(cache=True)
def _logistic_path(xs, y, lambdas, active, tol, max_outer, max_sweeps):
    # naive-update CD on the IRLS quadratic approximation, warm started
    n, p = xs.shape
    n_lam = lambdas.shape[0]
    out = np.zeros((n_lam, p + 1))
    ybar = 0.0
    for i in range(n):
        ybar += y[i]
    ybar /= n
    b0 = np.log(ybar / (1.0 - ybar))
    b = np.zeros(p)
    eta = np.full(n, b0)
    w = np.empty(n)
    r = np.empty(n)
    xv = np.empty(p)
    converged = np.ones(n_lam, dtype=np.bool_)
    for li in range(n_lam):
        lam = lambdas[li]
        outer_ok = False
        for outer in range(max_outer):
            for i in range(n):
                pr = 1.0 / (1.0 + np.exp(-eta[i]))
                wi = pr * (1.0 - pr)
                if wi < MIN_WEIGHT:
                    wi = MIN_WEIGHT
                w[i] = wi
                r[i] = (y[i] - pr) / wi
            wsum = 0.0
            for i in range(n):
                wsum += w[i]
            for j in range(p):
                s = 0.0
                for i in range(n):
                    s += w[i] * xs[i, j] * xs[i, j]
                xv[j] = s / n
            outer_change = 0.0
            full = True
            for sweep in range(max_sweeps):
                max_d = 0.0
                s = 0.0
                for i in range(n):
                    s += w[i] * r[i]
                d0 = s / wsum
                if d0 != 0.0:
                    b0 += d0
                    for i in range(n):
                        r[i] -= d0
                    if wsum / n * d0 * d0 > max_d:
                        max_d = wsum / n * d0 * d0
                for j in range(p):
                    if not active[j] or xv[j] <= 0.0:
                        continue
                    if not full and b[j] == 0.0:
                        continue
                    g = 0.0
                    for i in range(n):
                        g += w[i] * xs[i, j] * r[i]
                    g /= n
                    old = b[j]
                    new = _soft(g + xv[j] * old, lam) / xv[j]
                    d = new - old
                    if d != 0.0:
                        b[j] = new
                        for i in range(n):
                            r[i] -= d * xs[i, j]
                        if xv[j] * d * d > max_d:
                            max_d = xv[j] * d * d
                if max_d > outer_change:
                    outer_change = max_d
                if max_d < tol:
                    if full:
                        break
                    full = True
                else:
                    full = False
            for i in range(n):
                e = b0
                for j in range(p):
                    if b[j] != 0.0:
                        e += xs[i, j] * b[j]
                eta[i] = e
            if outer_change < tol:
                outer_ok = True
                break
        converged[li] = outer_ok
        out[li, 0] = b0
        out[li, 1:] = b
    return out, converged


def _intercept_index(X):
    ones = np.where(np.all(X == 1.0, axis=0))[0]
    if ones.size != 1:
        raise ConfigError("lasso design must contain exactly one all-ones intercept column")
    return int(ones[0])


def _standardize(Z):
    center = Z.mean(axis=0)
    scale = np.sqrt(((Z - center) ** 2).mean(axis=0))
    active = scale > 1e-12 * np.maximum(1.0, np.abs(center))
    safe = np.where(active, scale, 1.0)
    return (Z - center) / safe, center, safe, active


def lambda_max(family: GlmFamily | str, design: np.ndarray, response: np.ndarray) -> float:
    """Smallest penalty at which every slope is exactly zero."""
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    k = _intercept_index(X)
    Zs, _, _, active = _standardize(np.delete(X, k, axis=1))
    g = np.abs(Zs.T @ (y - y.mean())) / y.shape[0]
    return float(np.max(np.where(active, g, 0.0))) if g.size else 0.0


def default_lambda_grid(lmax: float, n_lambda: int = DEFAULT_N_LAMBDA,
                        min_ratio: float = DEFAULT_LAMBDA_MIN_RATIO) -> np.ndarray:
    if lmax <= 0:
        return np.array([0.0])
    return np.geomspace(lmax, lmax * min_ratio, n_lambda)


def _path(family, Zs, y, lambdas, active, tol):
    n = y.shape[0]
    if family is GlmFamily.GAUSSIAN:
        ybar = y.mean()
        gram = Zs.T @ Zs / n
        xy = Zs.T @ (y - ybar) / n
        scale = max(float(np.mean((y - ybar) ** 2)), 1e-300)
        slopes, _ = _gaussian_path(gram, xy, lambdas, active, tol * scale, 1_000_000)
        b0 = np.full(lambdas.shape[0], ybar)
        return b0, slopes, np.ones(lambdas.shape[0], dtype=bool)
    out, conv = _logistic_path(np.ascontiguousarray(Zs), y, lambdas, active, tol, 200, 100_000)
    return out[:, 0], out[:, 1:], conv


def _heldout_deviance(family, b0, slopes, Zs, y):
    eta = b0[None, :] + Zs @ slopes.T
    if family is GlmFamily.GAUSSIAN:
        return np.sum((y[:, None] - eta) ** 2, axis=0)
    # -2 loglik, computed stably
    return 2.0 * np.sum(np.logaddexp(0.0, eta) - y[:, None] * eta, axis=0)


def fit_lasso_glm(
    family: GlmFamily | str,
    design: np.ndarray,
    response: np.ndarray,
    lambda_grid: Optional[Sequence[float]] = None,
    folds: int = 5,
    seed: int = 0,
    *,
    terms: Optional[Sequence[TermSpec | str]] = None,
    tol: float = 1e-13,
) -> FittedGlm:
    """LASSO fit with the penalty picked by K-fold cross-validated deviance.

    ``design`` must carry an all-ones intercept column, which stays
    unpenalized. The default grid is 100 log-spaced values from the
    smallest all-zero penalty down to 1e-3 of it. Fold membership comes from
    ``seed`` alone, so repeated calls give identical results.
    """
    family = GlmFamily(family)
    if family not in (GlmFamily.GAUSSIAN, GlmFamily.BERNOULLI):
        raise ConfigError("lasso supports the gaussian and bernoulli families only")
    if folds < 2:
        raise ConfigError("need at least 2 cross-validation folds")
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    n, p = X.shape
    family.check_response(y)
    if family is GlmFamily.BERNOULLI and (y.min() == y.max()):
        raise DomainError("bernoulli response has a single class")
    k = _intercept_index(X)
    Z = np.delete(X, k, axis=1)
    Zs, center, scale, active = _standardize(Z)

    if lambda_grid is None:
        lmax = float(np.max(np.where(active, np.abs(Zs.T @ (y - y.mean())) / n, 0.0))) if p > 1 else 0.0
        lambdas = default_lambda_grid(lmax)
    else:
        lambdas = np.asarray(lambda_grid, dtype=float)
        if lambdas.size == 0:
            raise ConfigError("lambda grid is empty")
        if np.any(lambdas < 0) or np.any(np.diff(lambdas) >= 0):
            raise ConfigError("lambda grid must be non-negative and strictly decreasing")

    if lambdas.size == 1:
        best = 0
        cv_dev = np.array([np.nan])
    else:
        rng = np.random.default_rng(seed)
        fold_id = rng.permutation(np.arange(n) % folds)
        cv_dev = np.zeros(lambdas.size)
        for f in range(folds):
            tr = fold_id != f
            te = ~tr
            Ztr, c_tr, s_tr, a_tr = _standardize(Z[tr])
            a_tr &= active
            b0, slopes, _ = _path(family, Ztr, y[tr], lambdas, a_tr, tol)
            cv_dev += _heldout_deviance(family, b0, slopes, (Z[te] - c_tr) / s_tr, y[te])
        cv_dev /= n
        best = int(np.argmin(cv_dev))

    b0, slopes, conv = _path(family, Zs, y, lambdas[: best + 1], active, tol)
    b0, bs = float(b0[-1]), slopes[-1]
    beta_slopes = np.where(active, bs / scale, 0.0)
    intercept = b0 - float(np.dot(beta_slopes, center))
    coef = np.insert(beta_slopes, k, intercept)
    eta = X @ coef
    mu = family.inverse_link(eta)
    dev = family.deviance(y, mu, np.ones(n))
    disp = None
    if family is GlmFamily.GAUSSIAN:
        nz = int(np.count_nonzero(beta_slopes)) + 1
        disp = float(np.sqrt(dev / max(n - nz, 1)))
    return FittedGlm(terms, coef, family, dispersion=disp, penalty=float(lambdas[best]),
                     converged=bool(conv[-1]), n_used=n, iterations=best + 1, deviance=dev,
                     meta={"lambda_grid": lambdas, "cv_deviance": cv_dev, "lambda_index": best})
