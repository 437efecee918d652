"""Data-driven acoustic signal processing on a small reverse-mode autodiff core."""

__version__ = "0.1.0"
