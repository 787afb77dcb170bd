"""Lumped thermal model, sensor placement and Kalman-filter-bank fault diagnosis for large-format cells."""

__version__ = "0.1.0"
