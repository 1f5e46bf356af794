"""Bi-stage adversarial training with consistency regularization and saliency-masked updates."""

__version__ = "0.1.0"
