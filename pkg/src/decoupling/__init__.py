"""Numerical estimators for decoupled infima of function families, with
uniform lower semicontinuity certificates and a multiplier search."""

__version__ = "0.1.0"
