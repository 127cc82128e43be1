"""Supervised accompaniment style translation workbench."""

__version__ = "0.1.0"
