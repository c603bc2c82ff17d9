"""Coherence-aligned token embedding training.

Subpackages cover the full pipeline: corpus ingestion and stratified
sampling, embedding tables, contextual kernels, rank-1 tensor fields,
the coherence loss and its gradient, the training loops, a tied-embedding
bigram language model, and report emitters.
"""

__version__ = "0.1.0"
