"""Rotating 2D Navier-Stokes on the beta-plane: spectral solver and attractor-dimension diagnostics."""

__version__ = "0.1.0"
