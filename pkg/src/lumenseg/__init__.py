"""Lumen segmentation ensemble: models, training, evaluation, statistics."""

__version__ = "0.1.0"
