"""Dimensionally consistent block preconditioners for saddle-point problems."""

__version__ = "0.1.0"
