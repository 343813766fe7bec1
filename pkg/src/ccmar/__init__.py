"""Estimators of the average treatment effect with partially missing confounders."""

__version__ = "0.1.0"
