"""Bayesian multivariate mixed-response school value-added models."""

__version__ = "0.1.0"
