"""Desk-scale lab for trajectory-decomposed group-relative policy optimisation."""

__version__ = "0.1.0"
