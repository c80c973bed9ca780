"""Trainable set-attention block mixing channel representations.

The block is a pre-norm transformer encoder layer applied to the channel set
with no positional information of any kind: no channel embeddings, no masks,
no biases indexed by position. Its parameter count is independent of the
number of channels, so the same block evaluates on any C >= 1. Reordering the
input set provably reorders the output set the same way (eval mode; train-mode
dropout is sampled per element after any permutation, so there equivariance
holds only in distribution).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .numerics import Tensor

FFN_WIDTH_FACTOR = 4


@dataclass
class SpatialBlockParams:
    """Per-head projections, feed-forward weights, and two layer norms."""

    hidden_dim: int
    n_heads: int = 4
    dropout_rate: float = 0.3
    params: dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self):
        if self.hidden_dim % self.n_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}"
            )

    def named(self, prefix: str = "spatial") -> dict[str, Tensor]:
        return {f"{prefix}.{k}": v for k, v in self.params.items()}

    def set_trainable(self, trainable: bool) -> None:
        for p in self.params.values():
            p.requires_grad = trainable

    def astype(self, dtype) -> "SpatialBlockParams":
        cast = {k: Tensor(v.data.astype(dtype), requires_grad=False)
                for k, v in self.params.items()}
        return SpatialBlockParams(
            hidden_dim=self.hidden_dim, n_heads=self.n_heads,
            dropout_rate=self.dropout_rate, params=cast,
        )


def init_spatial_params(
    hidden_dim: int,
    n_heads: int = 4,
    dropout_rate: float = 0.3,
    seed: int = 0,
    dtype=np.float32,
) -> SpatialBlockParams:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5A71A1]))
    d = hidden_dim
    hidden = FFN_WIDTH_FACTOR * d

    def w(shape):
        scale = 1.0 / np.sqrt(shape[0])
        return Tensor(rng.normal(0.0, scale, size=shape).astype(dtype), requires_grad=True)

    params = {
        "ln1.gain": Tensor(np.ones(d, dtype=dtype), requires_grad=True),
        "ln1.bias": Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
        "attn.wq": w((d, d)),
        "attn.wk": w((d, d)),
        "attn.wv": w((d, d)),
        "attn.wo": w((d, d)),
        "ln2.gain": Tensor(np.ones(d, dtype=dtype), requires_grad=True),
        "ln2.bias": Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
        "ffn.w1": w((d, hidden)),
        "ffn.w2": w((hidden, d)),
    }
    return SpatialBlockParams(
        hidden_dim=d, n_heads=n_heads, dropout_rate=dropout_rate, params=params
    )


def _coerce_set(h, hidden_dim: int) -> tuple[Tensor, bool]:
    """Accept (C, D) or (B, C, D); returns a 3-D tensor plus squeeze flag."""
    t = h if isinstance(h, Tensor) else Tensor(np.asarray(h, dtype=np.float64))
    if t.ndim == 2:
        squeeze = True
        t = nm.reshape(t, (1,) + t.shape)
    elif t.ndim == 3:
        squeeze = False
    else:
        raise ValueError(f"expected (C, D) or (B, C, D) feature set, got {t.shape}")
    if t.shape[-2] < 1:
        raise ValueError("channel set must contain at least one element")
    if t.shape[-1] != hidden_dim:
        raise ValueError(f"feature dim {t.shape[-1]} != block dim {hidden_dim}")
    return t, squeeze


def spatial_forward(
    h,
    block: SpatialBlockParams,
    mode: str = "eval",
    seed: int | None = None,
) -> Tensor:
    """Mix the channel set through pre-norm self-attention + feed-forward.

    eval mode is deterministic and dropout-free; train mode applies dropout
    to the attention probabilities and the feed-forward hidden layer and
    requires an explicit seed.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    if train and seed is None:
        raise ValueError("train mode requires a dropout seed")
    x, squeeze = _coerce_set(h, block.hidden_dim)
    p = block.params
    rate = block.dropout_rate if train else 0.0

    attn_in = nm.layer_norm(x, p["ln1.gain"], p["ln1.bias"])
    attn = nm.multi_head_attention(
        attn_in, p["attn.wq"], p["attn.wk"], p["attn.wv"], p["attn.wo"],
        block.n_heads,
        attn_dropout=rate,
        dropout_seed=None if seed is None else 2 * int(seed),
    )
    x2 = nm.add(x, attn)

    ffn_in = nm.layer_norm(x2, p["ln2.gain"], p["ln2.bias"])
    hidden = nm.gelu(nm.matmul(ffn_in, p["ffn.w1"]))
    if rate > 0.0:
        hidden = nm.dropout(hidden, rate, 2 * int(seed) + 1)
    out = nm.add(x2, nm.matmul(hidden, p["ffn.w2"]))
    return out[0] if squeeze else out


def attention_weights(h, block: SpatialBlockParams) -> np.ndarray:
    """Per-head (n_heads, C, C) attention matrices, eval semantics."""
    x, squeeze = _coerce_set(h, block.hidden_dim)
    if not squeeze:
        raise ValueError("attention_weights expects a single (C, D) feature set")
    p = block.params
    d = block.hidden_dim
    dh = d // block.n_heads
    c = x.shape[1]

    normed = nm.layer_norm(x, p["ln1.gain"], p["ln1.bias"]).data[0]
    q = (normed @ p["attn.wq"].data).reshape(c, block.n_heads, dh)
    k = (normed @ p["attn.wk"].data).reshape(c, block.n_heads, dh)
    scores = np.einsum("ihd,jhd->hij", q, k) / float(np.sqrt(dh))
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def mean_pool_interaction(h, block: SpatialBlockParams) -> Tensor:
    """Ablation comparator: replace attention with the set mean.

    Every output is the residual h_i plus the block's feed-forward path
    applied to mean_j(h_j); the mean is symmetric, so the map is exactly
    permutation-equivariant.
    """
    x, squeeze = _coerce_set(h, block.hidden_dim)
    p = block.params
    pooled = nm.mean(x, axis=-2, keepdims=True)
    ffn_in = nm.layer_norm(pooled, p["ln2.gain"], p["ln2.bias"])
    delta = nm.matmul(nm.gelu(nm.matmul(ffn_in, p["ffn.w1"])), p["ffn.w2"])
    out = nm.add(x, delta)
    return out[0] if squeeze else out
