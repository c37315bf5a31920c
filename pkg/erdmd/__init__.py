"""Entropic-regression lagged dynamic mode decomposition."""

__version__ = "0.1.0"
