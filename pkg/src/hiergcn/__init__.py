"""Hierarchical linear graph convolution for implicit-feedback recommendation."""

__version__ = "0.1.0"
