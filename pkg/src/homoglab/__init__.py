"""Numerical laboratory for homogenization with mean-value algebras."""

__version__ = "0.1.0"
