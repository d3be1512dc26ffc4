"""Benchmark harness for Arabic alphabet sign language recognition."""

__version__ = "0.1.0"
