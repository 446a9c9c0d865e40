"""Pseudo-spectral simulator and diagnostics for the mass-critical Hartree equation."""

__version__ = "0.1.0"
