"""Finite-dimensional reduction of adiabatic Fredholm families."""

__version__ = "0.1.0"
