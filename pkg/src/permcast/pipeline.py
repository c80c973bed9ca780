"""Three-stage forecast model: frozen encode -> channel mixing -> frozen decode.

The codec touches each channel in isolation and the mixing block carries no
positional parameters, so reordering input columns reorders the forecast
columns identically. Normalization statistics travel with channel content:
callers that permute a window's columns pass equally permuted stats, and the
forecast is returned in original units (stats applied before encoding,
inverted after decoding).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .codec import CodecParams, decode_channel, encode_channel
from .datagen import NormalizationStats
from .numerics import Tensor
from .spatial import SpatialBlockParams, init_spatial_params, spatial_forward


@dataclass
class ForecastModel:
    codec: CodecParams
    spatial_blocks: list[SpatialBlockParams]
    norm_stats: NormalizationStats
    mode: str = "eval"

    @property
    def history_len(self) -> int:
        return self.codec.config.input_len

    @property
    def horizon(self) -> int:
        return self.codec.config.horizon

    def trainable_params(self) -> dict[str, Tensor]:
        """Everything that currently carries requires_grad (spatial always;
        codec only while unfrozen)."""
        out: dict[str, Tensor] = {}
        for i, block in enumerate(self.spatial_blocks):
            for name, p in block.named(f"spatial{i}").items():
                if p.requires_grad:
                    out[name] = p
        if not self.codec.frozen:
            for name, p in self.codec.params.items():
                out[f"codec.{name}"] = p
        return out

    def astype(self, dtype) -> "ForecastModel":
        """Deterministic dtype cast for high-precision evaluation."""
        return ForecastModel(
            codec=self.codec.astype(dtype),
            spatial_blocks=[b.astype(dtype) for b in self.spatial_blocks],
            norm_stats=self.norm_stats,
            mode="eval",
        )


def build_model(
    codec: CodecParams,
    norm_stats: NormalizationStats,
    *,
    n_heads: int = 4,
    depth: int = 1,
    dropout_rate: float = 0.3,
    seed: int = 0,
) -> ForecastModel:
    d = codec.config.hidden_dim
    blocks = [
        init_spatial_params(d, n_heads=n_heads, dropout_rate=dropout_rate,
                            seed=seed + 101 * i)
        for i in range(depth)
    ]
    return ForecastModel(codec=codec, spatial_blocks=blocks, norm_stats=norm_stats)


def _validate_input(x, model: ForecastModel, stats: NormalizationStats):
    arr = np.asarray(x, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None, ...]
    if arr.ndim != 3:
        raise ValueError(f"expected (L, C) or (N, L, C) input, got shape {np.shape(x)}")
    n, l, c = arr.shape
    if l != model.history_len:
        raise ValueError(f"history length {l} != model's {model.history_len}")
    if c < 1:
        raise ValueError("input needs at least one channel")
    if stats.n_channels != c:
        raise ValueError(
            f"normalization stats cover {stats.n_channels} channels, input has {c}"
        )
    if not np.isfinite(arr).all():
        raise ValueError("input contains NaN or non-finite values")
    return arr, squeeze


def _encode_set(z: np.ndarray, model: ForecastModel) -> Tensor:
    """Normalized (N, L, C) -> channel feature set (N, C, D)."""
    n, l, c = z.shape
    dtype = next(iter(model.codec.params.values())).data.dtype
    per_channel = np.ascontiguousarray(z.transpose(0, 2, 1)).reshape(n * c, l)
    h = encode_channel(per_channel.astype(dtype), model.codec)
    return nm.reshape(h, (n, c, h.shape[-1]))


def _decode_set(h: Tensor, model: ForecastModel) -> Tensor:
    """(N, C, D) -> forecasts (N, T, C), still in normalized units."""
    n, c, d = h.shape
    flat = nm.reshape(h, (n * c, d))
    y = decode_channel(flat, model.codec)
    return nm.transpose(nm.reshape(y, (n, c, model.horizon)), (0, 2, 1))


def forward_tensor(
    x,
    model: ForecastModel,
    *,
    stats: NormalizationStats | None = None,
    mode: str | None = None,
    seed: int | None = None,
) -> Tensor:
    """Full pipeline returning the tape node (for training); original units."""
    st = stats if stats is not None else model.norm_stats
    arr, squeeze = _validate_input(x, model, st)
    mode = mode or model.mode
    z = st.apply(arr)

    h = _encode_set(z, model)
    for i, block in enumerate(model.spatial_blocks):
        block_seed = None if seed is None else int(seed) * 1009 + i
        h = spatial_forward(h, block, mode=mode, seed=block_seed)
    y_norm = _decode_set(h, model)

    dtype = y_norm.data.dtype
    scale = Tensor(st.std.astype(dtype))
    offset = Tensor(st.mean.astype(dtype))
    y = nm.add(nm.mul(y_norm, scale), offset)
    return y[0] if squeeze else y


def forward(
    x,
    model: ForecastModel,
    *,
    stats: NormalizationStats | None = None,
    mode: str | None = None,
    seed: int | None = None,
) -> np.ndarray:
    """Forecast (T, C) / (N, T, C) in original units."""
    return forward_tensor(x, model, stats=stats, mode=mode, seed=seed).data


def ci_forward(
    x,
    model: ForecastModel,
    *,
    stats: NormalizationStats | None = None,
) -> np.ndarray:
    """Channel-independent ablation: bypass the mixing stage entirely."""
    st = stats if stats is not None else model.norm_stats
    arr, squeeze = _validate_input(x, model, st)
    z = st.apply(arr)
    h = _encode_set(z, model)
    y_norm = _decode_set(h, model).data.astype(np.float64)
    y = y_norm * st.std + st.mean
    return y[0] if squeeze else y


def forward_with_embeddings(
    x,
    model: ForecastModel,
    *,
    stats: NormalizationStats | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eval-mode forward that also returns pre- and post-mixing feature sets.

    Accepts a single (L, C) window; returns (forecast (T, C), H (C, D),
    H' (C, D)).
    """
    st = stats if stats is not None else model.norm_stats
    arr, squeeze = _validate_input(x, model, st)
    if not squeeze:
        raise ValueError("embedding export expects a single (L, C) window")
    z = st.apply(arr)
    h = _encode_set(z, model)
    pre = h.data[0].copy()
    for i, block in enumerate(model.spatial_blocks):
        h = spatial_forward(h, block, mode="eval")
    post = h.data[0].copy()
    y_norm = _decode_set(h, model).data[0].astype(np.float64)
    y = y_norm * st.std + st.mean
    return y, pre, post


def predictor(model: ForecastModel, *, float64: bool = True):
    """Closure suitable for the audit harness: (X, stats) -> forecasts.

    High-precision evaluation is the default so that metric-level identities
    hold to 1e-9 under permutation.
    """
    m = model.astype(np.float64) if float64 else model

    def predict(x: np.ndarray, stats: NormalizationStats) -> np.ndarray:
        return forward(x, m, stats=stats, mode="eval")

    return predict
