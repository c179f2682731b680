"""Numerical laboratory for backward doubly stochastic equations with jumps."""

__version__ = "0.1.0"
