"""Bagging, stacking, prediction intervals and residual correction for probabilistic forecasts."""

__version__ = "0.1.0"
