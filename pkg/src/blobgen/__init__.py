"""Blob-based generative scene model with differentiable splatting."""

__version__ = "0.1.0"
