"""Tilted random walks, tilted random interlacements and their soft local time coupling."""

__version__ = "0.1.0"
