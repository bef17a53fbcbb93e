"""Cascaded FP64x2 matrix multiplication built from binary64 GEMMs."""

__version__ = "1.0.0"
