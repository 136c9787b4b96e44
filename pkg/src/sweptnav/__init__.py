"""Clearance-guaranteed trajectory optimisation and tracking for a free-floating vehicle."""

__version__ = "0.1.0"
