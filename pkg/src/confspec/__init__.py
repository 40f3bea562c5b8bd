"""Spectral toolkit for conformal deformations of conformally covariant operators."""

__version__ = "0.1.0"
