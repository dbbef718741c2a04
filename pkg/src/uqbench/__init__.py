"""Uncertainty-quantification benchmark for surrogate models on MMT wave data."""

__version__ = "0.1.0"
