"""Numerical laboratory for the weak-disorder Anderson model on Z^d_L."""

__version__ = "0.1.0"
