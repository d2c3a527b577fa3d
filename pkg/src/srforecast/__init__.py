"""Probabilistic forecasting with conditional generative networks trained by scoring-rule minimisation."""

__version__ = "0.1.0"
