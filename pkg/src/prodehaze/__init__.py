"""Desk-scale dehazing toolkit: structural prompts, haze-aware sparse attention,
a toy latent diffusion restorer, a refiner, haze synthesis and metrics."""

__version__ = "0.1.0"
