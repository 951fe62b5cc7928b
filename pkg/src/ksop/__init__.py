"""Optimal-prediction model reduction for the truncated Kuramoto-Sivashinsky system."""

__version__ = "0.1.0"
