"""Numerical potential theory on colander domains."""

__version__ = "0.1.0"
