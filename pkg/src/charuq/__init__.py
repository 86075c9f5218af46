"""Charring-ablator calibration and uncertainty extension toolkit."""

__version__ = "0.1.0"
