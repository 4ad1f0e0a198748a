"""Tool version recorded in every report."""

__version__ = "1.0.0"
