"""Numerical tools for regularity of optimal transport under general costs."""

__version__ = "0.1.0"
