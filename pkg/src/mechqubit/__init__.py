"""Simulation and statistical analysis of mechanically induced qubit errors."""

__version__ = "0.1.0"
