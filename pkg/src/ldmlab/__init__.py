"""Desk-scale latent-diffusion domain-adaptation lab."""

__version__ = "0.1.0"
