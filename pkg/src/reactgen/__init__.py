"""Diffusion-based online reaction generation for two-person interactions."""

__version__ = "0.1.0"
