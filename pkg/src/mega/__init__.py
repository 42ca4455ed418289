"""Continual memory injection for a byte-level toy transformer.

The package trains a small decoder-only language model from scratch,
then injects new event memories one at a time as gated low-rank
adapters.  Stored memories are recalled or queried through a softmax
gate over context-key embeddings.  Continual fine-tuning baselines
(full-weight, with L2 or Fisher penalties, sequential merged adapters,
joint batch training, retrieval into context) share the same model,
data, and evaluation stack.
"""

__version__ = "0.1.0"
