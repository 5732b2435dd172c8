"""Multi-scale disparity Transformer for light-field super-resolution."""

__version__ = "0.1.0"
