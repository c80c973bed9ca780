"""Frozen per-channel temporal codec and its one-time pretraining.

The codec is a small patch transformer: a patch embedding, a few causal
self-attention encoder layers with a parameter-free linear distance bias on
the scores, and a linear head mapping the final patch state to a point
forecast. Each channel is encoded and decoded in isolation, so the codec is
trivially indifferent to channel order. After pretraining on a synthetic
univariate corpus the parameters are frozen and shared by every downstream
experiment.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .errors import TrainingError
from .numerics import OptimizerState, Tensor, adam_step

FFN_WIDTH_FACTOR = 4


@dataclass(frozen=True)
class PatchConfig:
    """Shape of the codec: patching, width, depth, and forecast horizon."""

    patch_len: int = 16
    input_len: int = 96
    hidden_dim: int = 64
    n_layers: int = 3
    n_heads: int = 4
    horizon: int = 96

    def __post_init__(self):
        if min(self.patch_len, self.input_len, self.hidden_dim, self.n_layers,
               self.n_heads, self.horizon) < 1:
            raise ValueError("all PatchConfig fields must be positive")
        if self.hidden_dim % self.n_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}"
            )

    @property
    def n_patches(self) -> int:
        return -(-self.input_len // self.patch_len)

    @property
    def padded_len(self) -> int:
        return self.n_patches * self.patch_len


@dataclass
class CodecParams:
    """Named codec tensors plus the freeze flag honored by the trainer."""

    config: PatchConfig
    params: dict[str, Tensor]
    frozen: bool = False

    def set_frozen(self, frozen: bool) -> None:
        self.frozen = frozen
        for p in self.params.values():
            p.requires_grad = not frozen

    def digest(self) -> str:
        return params_digest(self.params)

    def astype(self, dtype) -> "CodecParams":
        cast = {k: Tensor(v.data.astype(dtype), requires_grad=False)
                for k, v in self.params.items()}
        out = CodecParams(config=self.config, params=cast, frozen=True)
        return out


def params_digest(params: dict[str, Tensor]) -> str:
    """Byte-level digest over names, shapes, dtypes, and raw values."""
    h = hashlib.sha256()
    for name in sorted(params):
        t = params[name]
        h.update(name.encode())
        h.update(str(t.shape).encode())
        h.update(str(t.data.dtype).encode())
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()


def init_codec_params(
    config: PatchConfig, seed: int = 0, dtype=np.float32
) -> CodecParams:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC0DEC]))
    d = config.hidden_dim
    hidden = FFN_WIDTH_FACTOR * d

    def w(shape):
        scale = 1.0 / np.sqrt(shape[0])
        return Tensor(rng.normal(0.0, scale, size=shape).astype(dtype), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(shape):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    params: dict[str, Tensor] = {
        "patch_embed.weight": w((config.patch_len, d)),
        "patch_embed.bias": zeros((d,)),
    }
    for i in range(config.n_layers):
        params[f"enc{i}.ln1.gain"] = ones((d,))
        params[f"enc{i}.ln1.bias"] = zeros((d,))
        for proj in ("wq", "wk", "wv", "wo"):
            params[f"enc{i}.attn.{proj}"] = w((d, d))
        params[f"enc{i}.ln2.gain"] = ones((d,))
        params[f"enc{i}.ln2.bias"] = zeros((d,))
        params[f"enc{i}.ffn.w1"] = w((d, hidden))
        params[f"enc{i}.ffn.w2"] = w((hidden, d))
    params["final_norm.gain"] = ones((d,))
    params["final_norm.bias"] = zeros((d,))
    params["head.weight"] = w((d, config.horizon))
    params["head.bias"] = zeros((config.horizon,))
    return CodecParams(config=config, params=params)


def _distance_slopes(n_heads: int) -> np.ndarray:
    return np.array([2.0 ** -(h + 1) for h in range(n_heads)])


def _encode_states(x: Tensor, codec: CodecParams) -> Tensor:
    """All patch hidden states: (N, padded_L) -> (N, P, D)."""
    cfg = codec.config
    p = codec.params
    n = x.shape[0]
    patches = nm.reshape(x, (n, cfg.n_patches, cfg.patch_len))
    h = nm.linear(patches, p["patch_embed.weight"], p["patch_embed.bias"])
    slopes = _distance_slopes(cfg.n_heads)
    for i in range(cfg.n_layers):
        attn_in = nm.layer_norm(h, p[f"enc{i}.ln1.gain"], p[f"enc{i}.ln1.bias"])
        attn = nm.multi_head_attention(
            attn_in,
            p[f"enc{i}.attn.wq"], p[f"enc{i}.attn.wk"],
            p[f"enc{i}.attn.wv"], p[f"enc{i}.attn.wo"],
            cfg.n_heads, causal=True, distance_bias_slopes=slopes,
        )
        h = nm.add(h, attn)
        ffn_in = nm.layer_norm(h, p[f"enc{i}.ln2.gain"], p[f"enc{i}.ln2.bias"])
        ffn = nm.matmul(nm.gelu(nm.matmul(ffn_in, p[f"enc{i}.ffn.w1"])), p[f"enc{i}.ffn.w2"])
        h = nm.add(h, ffn)
    return nm.layer_norm(h, p["final_norm.gain"], p["final_norm.bias"])


def _prepare_input(series, codec: CodecParams) -> tuple[Tensor, bool]:
    cfg = codec.config
    if isinstance(series, Tensor):
        squeeze = series.ndim == 1
        x = nm.reshape(series, (1, cfg.input_len)) if squeeze else series
        if x.ndim != 2 or x.shape[1] != cfg.input_len:
            raise ValueError(f"series shape {series.shape} incompatible with L={cfg.input_len}")
        if not np.isfinite(x.data).all():
            raise ValueError("series contains NaN or non-finite values")
    else:
        arr = np.asarray(series, dtype=np.float64)
        squeeze = arr.ndim == 1
        if squeeze:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != cfg.input_len:
            raise ValueError(f"series shape {np.asarray(series).shape} incompatible with L={cfg.input_len}")
        if not np.isfinite(arr).all():
            raise ValueError("series contains NaN or non-finite values")
        x = Tensor(arr.astype(next(iter(codec.params.values())).data.dtype))
    if cfg.padded_len != cfg.input_len:
        # left-pad with the first observed value to keep the last patch aligned
        pad = nm.broadcast_to(
            x[:, 0:1], (x.shape[0], cfg.padded_len - cfg.input_len)
        )
        x = nm.concat([pad, x], axis=1)
    return x, squeeze


def encode_channel(series, codec: CodecParams, *, mean_pool: bool = False) -> Tensor:
    """One channel's history -> D-vector (last patch state, or patch mean)."""
    x, squeeze = _prepare_input(series, codec)
    states = _encode_states(x, codec)
    h = nm.mean(states, axis=1) if mean_pool else states[:, -1, :]
    return h[0] if squeeze else h


def encode_channel_meanpool(series, codec: CodecParams) -> Tensor:
    """Ablation readout: mean over all patch states instead of the last."""
    return encode_channel(series, codec, mean_pool=True)


def decode_channel(h, codec: CodecParams) -> Tensor:
    """Enriched D-vector -> deterministic T-step point forecast."""
    cfg = codec.config
    if isinstance(h, Tensor):
        t = h
    else:
        t = Tensor(np.asarray(h, dtype=np.float64))
    if not np.isfinite(t.data).all():
        raise ValueError("decode input contains NaN or non-finite values")
    squeeze = t.ndim == 1
    if squeeze:
        t = nm.reshape(t, (1, cfg.hidden_dim))
    if t.shape[-1] != cfg.hidden_dim:
        raise ValueError(f"decode input dim {t.shape[-1]} != D={cfg.hidden_dim}")
    out = nm.linear(t, codec.params["head.weight"], codec.params["head.bias"])
    return out[0] if squeeze else out


# -- pretraining ----------------------------------------------------------------


@dataclass(frozen=True)
class PretrainCorpusSpec:
    """Synthetic univariate corpus: sinusoids + trend + AR(1) noise."""

    n_series: int = 96
    length: int = 768
    n_components: int = 2
    amp_range: tuple[float, float] = (0.5, 1.5)
    period_range: tuple[float, float] = (16.0, 64.0)
    trend_range: tuple[float, float] = (-0.002, 0.002)
    ar_coef: float = 0.7
    noise_std: float = 0.3
    seed: int = 0


def generate_corpus(spec: PretrainCorpusSpec) -> np.ndarray:
    """Deterministic (n_series, length) float64 corpus for the given spec."""
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 0xC09B05]))
    t = np.arange(spec.length, dtype=np.float64)
    series = np.empty((spec.n_series, spec.length))
    for i in range(spec.n_series):
        lo, hi = spec.amp_range
        amps = rng.uniform(lo, hi, size=spec.n_components)
        periods = rng.uniform(*spec.period_range, size=spec.n_components)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=spec.n_components)
        slope = rng.uniform(*spec.trend_range)
        x = slope * t
        for a, p, ph in zip(amps, periods, phases):
            x = x + a * np.sin(2.0 * np.pi * t / p + ph)
        if spec.noise_std > 0:
            eps = rng.normal(0.0, spec.noise_std, size=spec.length)
            noise = np.empty(spec.length)
            acc = 0.0
            for k in range(spec.length):
                acc = spec.ar_coef * acc + eps[k]
                noise[k] = acc
            x = x + noise
        series[i] = x
    return series


@dataclass
class PretrainReport:
    epochs_run: int
    train_losses: list[float] = field(default_factory=list)
    val_mae: float = float("nan")
    persistence_mae: float = float("nan")


def _corpus_windows(series: np.ndarray, l: int, t: int, stride: int):
    xs, ys = [], []
    for row in series:
        for start in range(0, len(row) - l - t + 1, stride):
            xs.append(row[start : start + l])
            ys.append(row[start + l : start + l + t])
    return np.asarray(xs), np.asarray(ys)


def pretrain_codec(
    corpus: PretrainCorpusSpec,
    config: PatchConfig,
    epochs: int,
    *,
    batch_size: int = 64,
    val_fraction: float = 0.2,
    stride: int | None = None,
    optimizer: OptimizerState | None = None,
    seed: int = 0,
) -> tuple[CodecParams, PretrainReport]:
    """Train the codec on direct history->forecast pairs, then freeze it.

    Training minimizes mean absolute error, matching the downstream trainer.
    After a non-trivial run the held-out MAE must beat the predict-last-value
    persistence baseline, otherwise a TrainingError is raised.
    """
    codec = init_codec_params(config, seed=seed)
    report = PretrainReport(epochs_run=0)
    cfg = config
    stride = stride or max(1, (cfg.input_len + cfg.horizon) // 4)

    raw = generate_corpus(corpus)
    mu = raw.mean(axis=1, keepdims=True)
    sd = np.maximum(raw.std(axis=1, keepdims=True), 1e-8)
    normed = (raw - mu) / sd

    n_val = max(1, int(round(val_fraction * corpus.n_series)))
    if corpus.n_series < 2:
        raise ValueError("corpus needs at least 2 series for a held-out split")
    train_x, train_y = _corpus_windows(normed[:-n_val], cfg.input_len, cfg.horizon, stride)
    val_x, val_y = _corpus_windows(normed[-n_val:], cfg.input_len, cfg.horizon, stride)
    if len(train_x) == 0 or len(val_x) == 0:
        raise ValueError("corpus too short for one history+horizon window")

    persistence = np.mean(np.abs(val_y - val_x[:, -1:]))
    report.persistence_mae = float(persistence)

    if epochs > 0:
        # pretraining wants its decay late in the budget, unlike the main trainer
        state = optimizer or OptimizerState(
            base_lr=2e-3,
            milestones=(max(1, int(0.6 * epochs)), max(2, int(0.8 * epochs))),
        )
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x9E7A11]))
        order = np.arange(len(train_x))
        for epoch in range(epochs):
            state.epoch = epoch
            rng.shuffle(order)
            epoch_loss = 0.0
            n_batches = 0
            for lo in range(0, len(order), batch_size):
                idx = order[lo : lo + batch_size]
                h = encode_channel(train_x[idx], codec)
                pred = decode_channel(h, codec)
                loss = nm.mae_loss(pred, train_y[idx].astype(pred.data.dtype))
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingError(f"codec pretraining diverged at epoch {epoch}")
                nm.zero_grads(codec.params)
                nm.backward(loss)
                grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                         for k, p in codec.params.items()}
                adam_step(codec.params, grads, state)
                epoch_loss += value
                n_batches += 1
            report.train_losses.append(epoch_loss / max(1, n_batches))
            report.epochs_run = epoch + 1

        val_pred = decode_channel(encode_channel(val_x, codec), codec).data
        report.val_mae = float(np.mean(np.abs(val_y - val_pred)))
        if report.val_mae >= report.persistence_mae:
            raise TrainingError(
                f"pretrained codec ({report.val_mae:.4f} MAE) failed to beat "
                f"persistence ({report.persistence_mae:.4f} MAE)"
            )

    codec.set_frozen(True)
    return codec, report
