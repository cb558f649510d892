"""Numerical laboratory for the softmax bottleneck and monotone logit maps."""

__version__ = "0.1.0"
