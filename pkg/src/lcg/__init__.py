"""Compositional latent classifier guidance over synthetic latent worlds."""

__version__ = "0.1.0"
