"""Polynomial-diffusion models for long-term electricity forwards."""

__version__ = "0.1.0"
