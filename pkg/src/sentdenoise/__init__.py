"""Sentence representations from a pooled-vector denoising decoder plus in-batch contrast."""

__version__ = "0.1.0"
