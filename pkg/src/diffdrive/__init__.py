"""Diffusion-based driving policy with sparse expert routing."""

__version__ = "0.1.0"
