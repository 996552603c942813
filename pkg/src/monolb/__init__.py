"""Numerical companion for a monotonicity-testing lower bound construction."""

__version__ = "0.1.0"
