"""Simulation and verification tools for a parasite-burden epidemic and its branching approximation."""

__version__ = "0.1.0"
