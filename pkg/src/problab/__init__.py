"""Simulation and exact verification for open problems in discrete probability."""

__version__ = "0.1.0"
