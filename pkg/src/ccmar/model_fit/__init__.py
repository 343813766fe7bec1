"""Numeric substrate: terms and designs, GLM/LASSO fitting, beta MLE, quadrature."""

from .beta import BetaLaw, beta_moment_start, fit_beta_mle
from .glm import FittedGlm, GlmFamily, fit_glm, gamma_shape_mle, glm_predict, log_likelihood
from .lasso import default_lambda_grid, fit_lasso_glm, lambda_max
from .quadrature import (
    GaussianLaw,
    QuadratureRule,
    expect_gamma,
    expect_outcome,
    gauss_hermite,
    gauss_legendre,
    gen_laguerre,
)
from .terms import TermSpec, as_terms, build_design, linear_predictor, main_terms, pairwise_terms, parse_term

__all__ = [
    "BetaLaw", "FittedGlm", "GaussianLaw", "GlmFamily", "QuadratureRule", "TermSpec",
    "as_terms", "beta_moment_start", "build_design", "default_lambda_grid", "expect_gamma",
    "expect_outcome", "fit_beta_mle", "fit_glm", "fit_lasso_glm", "gamma_shape_mle",
    "gauss_hermite", "gauss_legendre", "gen_laguerre", "glm_predict", "lambda_max",
    "linear_predictor", "log_likelihood", "main_terms", "pairwise_terms", "parse_term",
]
