"""permcast: permutation-robust multivariate time-series forecasting.

A frozen per-channel temporal codec, a permutation-equivariant set-attention
channel mixer, a channel-shuffling trainer, and an audit harness that measures
forecast stability under channel reordering.
"""

__version__ = "0.1.0"
