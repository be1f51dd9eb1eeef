"""Simulation and inference toolkit for an NV centre probing a cluster of dark electron spins."""

__version__ = "0.1.0"
