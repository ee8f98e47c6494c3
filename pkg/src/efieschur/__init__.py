"""Hierarchical-matrix EFIE solver with a symmetric near-field Schur-complement preconditioner."""

__version__ = "0.1.0"
