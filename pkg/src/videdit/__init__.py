"""Denoiser-agnostic video diffusion sampling, editing and paired-data generation."""
__version__ = "0.1.0"
