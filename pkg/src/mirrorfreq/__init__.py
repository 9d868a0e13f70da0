"""Impedance extraction and dq / modified-sequence stability analysis for AC converter systems."""

__version__ = "0.1.0"
