"""Graph-contrastive sequential recommendation.

Builds a weighted item-transition graph from interaction logs, augments
each sequence with two sampled subgraph views, encodes them with a shared
GNN alongside a causal self-attention sequence encoder, and trains the
fused model with a three-term objective (next-item cross-entropy,
view-contrastive, distribution-alignment).
"""

__version__ = "0.1.0"
