"""Operator size distributions and their quench-statistics fingerprints on qudit chains."""

__version__ = "0.1.0"
