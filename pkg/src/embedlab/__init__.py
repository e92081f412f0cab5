"""Desk-scale laboratory for text-embedding editing in toy diffusion models."""

__version__ = "0.1.0"
