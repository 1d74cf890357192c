"""Adaptive topology identification and tracking control for LTI networks."""

__version__ = "0.1.0"
