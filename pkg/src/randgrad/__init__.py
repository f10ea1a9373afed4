"""Gradient interface models with quenched random fields: exact Gaussian and MCMC engines."""

__version__ = "0.1.0"
