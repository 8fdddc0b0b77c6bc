"""Harmonic metrics and regulated L2 norms on the (2,3) wild Higgs moduli space."""

__version__ = "0.1.0"
