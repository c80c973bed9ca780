"""Composite neural-net operations built from the tape primitives."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor, as_tensor

_GELU_C0 = 0.7978845608028654  # sqrt(2/pi)
_GELU_C1 = 0.044715


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight (+ bias); weight is (in, out)."""
    out = T.matmul(x, weight)
    if bias is not None:
        out = T.add(out, bias)
    return out


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh formulation."""
    x = as_tensor(x)
    cubic = T.add(x, T.mul(T.pow(x, 3.0), _GELU_C1))
    return T.mul(T.mul(x, 0.5), T.add(T.tanh(T.mul(cubic, _GELU_C0)), 1.0))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    The eps floor under the variance makes constant rows map to the bias
    (centered values are exactly zero) instead of producing NaN.
    """
    x = as_tensor(x)
    gain, bias = as_tensor(gain), as_tensor(bias)
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise ValueError("layer_norm requires a non-empty last dimension")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(
            f"gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = T.mean(x, axis=-1, keepdims=True)
    centered = T.sub(x, mu)
    var = T.mean(T.mul(centered, centered), axis=-1, keepdims=True)
    normed = T.div(centered, T.sqrt(T.add(var, eps)))
    return T.add(T.mul(normed, gain), bias)


def mae_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error over all elements."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return T.mean(T.abs(T.sub(pred, target)))


def multi_head_attention(
    x: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    n_heads: int,
    *,
    causal: bool = False,
    distance_bias_slopes: np.ndarray | None = None,
    attn_dropout: float = 0.0,
    dropout_seed: int | None = None,
) -> Tensor:
    """Self-attention over the middle axis of a (B, S, D) tensor.

    ``distance_bias_slopes`` (one slope per head) subtracts slope*(i-j) from
    the score of key j at query i, a parameter-free stand-in for positional
    information; ``causal`` masks j > i. Without either, the op carries no
    positional signal at all and is permutation-equivariant over S.
    """
    b, s, d = x.shape
    if d % n_heads != 0:
        raise ValueError(f"model dim {d} not divisible by {n_heads} heads")
    dh = d // n_heads

    def split_heads(t: Tensor) -> Tensor:
        return T.transpose(T.reshape(t, (b, s, n_heads, dh)), (0, 2, 1, 3))

    q = split_heads(T.matmul(x, wq))
    k = split_heads(T.matmul(x, wk))
    v = split_heads(T.matmul(x, wv))

    # python-float scale keeps float32 inputs from promoting to float64
    scores = T.mul(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / float(np.sqrt(dh)))
    bias = np.zeros((n_heads, s, s), dtype=x.dtype)
    if distance_bias_slopes is not None:
        dist = np.arange(s)[:, None] - np.arange(s)[None, :]
        bias -= np.asarray(distance_bias_slopes, dtype=x.dtype)[:, None, None] * dist
    if causal:
        bias += np.triu(np.full((s, s), -np.inf, dtype=x.dtype), k=1)
    if distance_bias_slopes is not None or causal:
        scores = T.add(scores, bias)

    probs = T.softmax(scores, axis=-1)
    if attn_dropout > 0.0:
        if dropout_seed is None:
            raise ValueError("attention dropout requires a seed")
        probs = T.dropout(probs, attn_dropout, dropout_seed)

    mixed = T.matmul(probs, v)
    merged = T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (b, s, d))
    return T.matmul(merged, wo)
