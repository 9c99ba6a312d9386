"""Empirical-likelihood confidence regions for spatial error models."""

__version__ = "0.1.0"
