"""Desk-scale lab for pivot-language denoising in zero-shot multilingual translation."""

__version__ = "0.1.0"
