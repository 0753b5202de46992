"""Numerical services of the reward checker."""
