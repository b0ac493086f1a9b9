"""Sequential recommendation with reused item representations.

Two models share one training and evaluation stack: a recursive attention
model whose blocks attend over a fixed sequence-embedding matrix, and a
minimal causal self-attention comparator that rewrites all positions per
block. Diagnostics cover attention-weight entropy, consecutive-block
output similarity, user-embedding similarity histograms, and per-block
compute-cost benchmarks.
"""

__version__ = "0.1.0"
