"""Deliberately order-bound forecaster used as the audit's contrast case.

Each channel index owns a learned embedding. The embeddings do double duty:
a static channel-mixing attention softmax(E E^T / sqrt(dim)) — a graph wired
by position, not content — and an extra per-index feature for the forecast
head. A shared MLP summarizes each channel's own history. Trained on a fixed
channel order, the model binds both the mixing graph and the head features
to positions, which is exactly the memorization the shuffle audit exposes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .datagen import NormalizationStats
from .numerics import Tensor


@dataclass
class ContrastBaselineParams:
    """Index-embedding table plus shared temporal MLP and forecast head."""

    n_channels: int
    history_len: int
    horizon: int
    embed_dim: int = 16
    hidden_dim: int = 128
    feat_dim: int = 64
    params: dict[str, Tensor] = field(default_factory=dict)

    def named(self, prefix: str = "baseline") -> dict[str, Tensor]:
        return {f"{prefix}.{k}": v for k, v in self.params.items()}

    def trainable_params(self) -> dict[str, Tensor]:
        return self.named()

    def astype(self, dtype) -> "ContrastBaselineParams":
        cast = {k: Tensor(v.data.astype(dtype), requires_grad=False)
                for k, v in self.params.items()}
        return ContrastBaselineParams(
            n_channels=self.n_channels, history_len=self.history_len,
            horizon=self.horizon, embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim, feat_dim=self.feat_dim, params=cast,
        )


def init_baseline(
    n_channels: int,
    history_len: int,
    horizon: int,
    *,
    embed_dim: int = 16,
    hidden_dim: int = 128,
    feat_dim: int = 64,
    seed: int = 0,
    dtype=np.float32,
) -> ContrastBaselineParams:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xBA5E]))

    def w(shape):
        scale = 1.0 / np.sqrt(shape[0])
        return Tensor(rng.normal(0.0, scale, size=shape).astype(dtype), requires_grad=True)

    params = {
        "embed": Tensor(rng.normal(0.0, 1.0, size=(n_channels, embed_dim)).astype(dtype),
                        requires_grad=True),
        "mlp.w1": w((history_len, hidden_dim)),
        "mlp.w2": w((hidden_dim, feat_dim)),
        "head.weight": w((2 * feat_dim + embed_dim, horizon)),
        "head.bias": Tensor(np.zeros(horizon, dtype=dtype), requires_grad=True),
    }
    return ContrastBaselineParams(
        n_channels=n_channels, history_len=history_len, horizon=horizon,
        embed_dim=embed_dim, hidden_dim=hidden_dim, feat_dim=feat_dim,
        params=params,
    )


def baseline_forward_tensor(
    x,
    model: ContrastBaselineParams,
    stats: NormalizationStats,
) -> Tensor:
    """Raw (N, L, C) history -> (N, T, C) forecast tensor (original units)."""
    arr = np.asarray(x, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None, ...]
    n, l, c = arr.shape
    if l != model.history_len:
        raise ValueError(f"history length {l} != model's {model.history_len}")
    if c != model.n_channels:
        raise ValueError(
            f"index-embedded baseline is bound to C={model.n_channels}, got {c}"
        )
    if stats.n_channels != c:
        raise ValueError("stats/channel mismatch")
    p = model.params
    dtype = p["embed"].data.dtype

    z = stats.apply(arr).transpose(0, 2, 1).astype(dtype)  # (N, C, L)
    feats = nm.matmul(nm.gelu(nm.matmul(Tensor(z), p["mlp.w1"])), p["mlp.w2"])

    # static mixing graph from index embeddings only; the diagonal is masked
    # so this pathway carries strictly other-channel content, wired by index
    scores = nm.mul(
        nm.matmul(p["embed"], nm.transpose(p["embed"])),
        1.0 / float(np.sqrt(model.embed_dim)),
    )
    if c > 1:
        mask = np.zeros((c, c), dtype=dtype)
        np.fill_diagonal(mask, -np.inf)
        scores = nm.add(scores, Tensor(mask))
    mixing = nm.softmax(scores, axis=-1)  # (C, C)
    mixed = nm.matmul(mixing, feats)  # broadcasts over the batch axis

    embed_b = nm.broadcast_to(p["embed"], (n, c, model.embed_dim))
    head_in = nm.concat([feats, mixed, embed_b], axis=-1)
    y_norm = nm.linear(head_in, p["head.weight"], p["head.bias"])  # (N, C, T)
    y_norm = nm.transpose(y_norm, (0, 2, 1))

    y = nm.add(nm.mul(y_norm, Tensor(stats.std.astype(y_norm.data.dtype))),
               Tensor(stats.mean.astype(y_norm.data.dtype)))
    return y[0] if squeeze else y


def baseline_forward(
    x, model: ContrastBaselineParams, stats: NormalizationStats
) -> np.ndarray:
    return baseline_forward_tensor(x, model, stats).data


def baseline_predictor(model: ContrastBaselineParams, *, float64: bool = True):
    """Audit closure; evaluates in float64 by default like the main model."""
    m = model.astype(np.float64) if float64 else model

    def predict(x: np.ndarray, stats: NormalizationStats) -> np.ndarray:
        return baseline_forward(x, m, stats)

    return predict


def train_baseline(splits, model: ContrastBaselineParams, config):
    """Train the contrast baseline with the shared loop (optionally shuffled)."""
    from . import numerics as nm
    from .errors import TrainingError
    from .evalsuite import wape
    from .numerics import adam_step, zero_grads
    from .trainer import _derived_seed, _step_permutation, run_training_loop

    def step_fn(epoch, bi, idx, opt_state):
        x = splits.train.x[idx]
        y = splits.train.y[idx]
        stats = splits.stats
        if config.shuffle_channels:
            perm = _step_permutation(x.shape[2], _derived_seed(config.master_seed, 0x57E9, epoch, bi))
            x = x[..., perm]
            y = y[..., perm]
            stats = stats.permute(perm)
        pred = baseline_forward_tensor(x, model, stats)
        loss = nm.mae_loss(pred, y.astype(pred.data.dtype))
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingError(f"baseline loss became non-finite at step {opt_state.step}")
        params = model.trainable_params()
        zero_grads(params)
        nm.backward(loss)
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                 for k, p in params.items()}
        adam_step(params, grads, opt_state)
        return value

    def val_fn():
        if splits.val.n_windows == 0:
            return float("nan")
        pred = baseline_forward(splits.val.x, model, splits.stats)
        return wape(splits.val.y, pred)

    def snapshot():
        return {k: p.data.copy() for k, p in model.params.items()}

    def restore(snap):
        for k, p in model.params.items():
            p.data = snap[k].copy()

    curve = run_training_loop(
        splits.train.n_windows, config, step_fn,
        val_fn=val_fn, snapshot_fn=snapshot, restore_fn=restore,
    )
    return curve


def checkpoint_from_baseline(model: ContrastBaselineParams, stats: NormalizationStats,
                             config_digest: str = ""):
    from .trainer import Checkpoint

    return Checkpoint(
        tensors={f"baseline.{k}": p.data.copy() for k, p in model.params.items()},
        freeze_flags={},
        norm_mean=stats.mean.copy(),
        norm_std=stats.std.copy(),
        config_digest=config_digest,
        model_kind="baseline",
        structure={
            "n_channels": float(model.n_channels),
            "history_len": float(model.history_len),
            "horizon": float(model.horizon),
            "embed_dim": float(model.embed_dim),
            "hidden_dim": float(model.hidden_dim),
            "feat_dim": float(model.feat_dim),
        },
    )


def baseline_from_checkpoint(ckpt) -> tuple[ContrastBaselineParams, NormalizationStats]:
    if ckpt.model_kind != "baseline":
        raise ValueError(f"not a baseline checkpoint: kind={ckpt.model_kind!r}")
    s = ckpt.structure
    params = {
        k[len("baseline."):]: Tensor(v.copy(), requires_grad=True)
        for k, v in ckpt.tensors.items()
        if k.startswith("baseline.")
    }
    model = ContrastBaselineParams(
        n_channels=int(s["n_channels"]),
        history_len=int(s["history_len"]),
        horizon=int(s["horizon"]),
        embed_dim=int(s["embed_dim"]),
        hidden_dim=int(s["hidden_dim"]),
        feat_dim=int(s["feat_dim"]),
        params=params,
    )
    stats = NormalizationStats(mean=ckpt.norm_mean.copy(), std=ckpt.norm_std.copy())
    return model, stats
