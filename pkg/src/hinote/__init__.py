"""Hierarchical neural-operator transformer for arbitrary-scale super-resolution."""

__version__ = "0.1.0"
