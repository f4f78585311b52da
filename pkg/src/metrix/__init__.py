"""Desk-scale metric-learning toolkit with label-interpolated mixing.

A generic pair/proxy loss calculus on a scalar autodiff tape, convex mixing
of inputs/features/embeddings with interpolated two-class labels, a small
trainable encoder, and embedding-space diagnostics (positivity curves,
alignment, uniformity, utilization, Recall@K).
"""

from . import autodiff, datasets, encoder, evaluation, losses, mixing, training

__version__ = "0.1.0"

__all__ = ["autodiff", "datasets", "encoder", "evaluation", "losses",
           "mixing", "training", "__version__"]
