"""Numerical toolkit for Kneser-type ODE inequalities."""

__version__ = "0.1.0"
