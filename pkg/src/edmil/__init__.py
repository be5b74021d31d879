"""Strictly-batch imitation learning with energy-based distribution matching."""

__version__ = "0.1.0"
