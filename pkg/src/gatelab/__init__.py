"""Gradient-gated preference optimization laboratory."""

__version__ = "0.1.0"
