"""Dual-encoder speech/style-caption embedding: training, evaluation, best-of-N selection."""

__version__ = "0.1.0"
