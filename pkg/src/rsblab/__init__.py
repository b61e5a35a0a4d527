"""Numerical laboratory for replica symmetry in the transverse/longitudinal random-field Ising model."""

__version__ = "0.1.0"
