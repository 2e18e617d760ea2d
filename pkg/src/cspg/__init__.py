"""Compressive-sensing Petrov-Galerkin approximation of parametric functionals."""

__version__ = "0.1.0"
