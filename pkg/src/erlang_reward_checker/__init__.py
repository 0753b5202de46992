"""Distributional model checking for DTMC cumulative rewards."""

__version__ = "0.1.0"
