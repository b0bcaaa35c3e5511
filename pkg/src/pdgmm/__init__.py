"""Blind source separation with per-dimension Gaussian-mixture-prior VAEs."""

__version__ = "0.1.0"
