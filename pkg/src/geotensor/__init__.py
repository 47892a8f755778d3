"""Geodesic ray transforms of symmetric tensor fields on conformal discs."""

__version__ = "0.1.0"
