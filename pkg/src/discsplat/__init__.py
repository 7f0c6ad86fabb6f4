"""Discontinuity-aware 2D Gaussian splatting with Bezier scissor curves."""

__version__ = "0.1.0"
