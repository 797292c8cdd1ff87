"""Leakage-safe benchmark engine for procure-to-pay risk detection."""

__version__ = "0.1.0"
