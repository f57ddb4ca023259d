"""Simulation and statistics toolkit for entanglement-based picking with granular grains."""

__version__ = "0.1.0"
