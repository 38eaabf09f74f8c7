"""Temporal-spatial factor disentanglement for multimodal sequence regression."""

__version__ = "0.1.0"
