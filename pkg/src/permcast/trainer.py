"""Training loop with per-batch channel shuffling and freeze scheduling.

Every batch draws one random channel permutation and applies it jointly to
the histories, the targets, and the per-channel normalization stats, so the
loss is always computed against correctly-aligned targets. Only parameters
that currently carry requires_grad receive updates; the frozen codec stays
byte-identical unless the unfreeze schedule activates for the last epochs.
All randomness (batch order, permutations, dropout) derives from the master
seed, making checkpoints bit-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import numerics as nm
from .codec import CodecParams, params_digest
from .datagen import (
    NormalizationStats,
    SeriesDataset,
    SplitWindows,
    split_and_window,
    subset_channels,
)
from .errors import TrainingError
from .evalsuite import wape
from .numerics import OptimizerState, Tensor, adam_step, zero_grads
from .pipeline import ForecastModel, build_model, forward, forward_tensor

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    loss: str = "mae"
    shuffle_channels: bool = True
    unfreeze_last_epochs: int = 0
    channel_fraction: float = 1.0
    master_seed: int = 0
    base_lr: float = 1e-3
    milestones: tuple[int, ...] = (1, 10, 25, 40)
    decay_factor: float = 0.5
    weight_decay: float = 1e-5
    clip_norm: float = 3.0
    patience: int = 10

    def __post_init__(self):
        if self.loss != "mae":
            raise ValueError(f"unsupported loss {self.loss!r}; only 'mae' is defined")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.unfreeze_last_epochs <= max(self.epochs, 0):
            raise ValueError("unfreeze_last_epochs must lie in [0, epochs]")
        if not 0.0 < self.channel_fraction <= 1.0:
            raise ValueError("channel_fraction must be in (0, 1]")

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()

    def optimizer_state(self) -> OptimizerState:
        return OptimizerState(
            base_lr=self.base_lr,
            milestones=tuple(self.milestones),
            decay_factor=self.decay_factor,
            weight_decay=self.weight_decay,
            clip_norm=self.clip_norm,
        )


@dataclass
class CurvePoint:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class Checkpoint:
    """Named tensors plus freeze flags, normalization stats, and provenance."""

    tensors: dict[str, np.ndarray]
    freeze_flags: dict[str, bool]
    norm_mean: np.ndarray
    norm_std: np.ndarray
    config_digest: str
    model_kind: str
    structure: dict[str, float] = field(default_factory=dict)
    format_version: int = CHECKPOINT_FORMAT_VERSION

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in self.tensors:
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.tensors[name]).tobytes())
        h.update(self.config_digest.encode())
        return h.hexdigest()


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


def _step_permutation(c: int, step_seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([int(step_seed), 0x314C]))
    return rng.permutation(c)


def train_step(
    x: np.ndarray,
    y: np.ndarray,
    stats: NormalizationStats,
    model: ForecastModel,
    config: TrainConfig,
    opt_state: OptimizerState,
    step_seed: int,
) -> float:
    """One shuffled batch: permute, forward in train mode, backprop, update.

    The same permutation reorders X columns, Y columns, and the stats, so the
    loss compares aligned channels. Only requires-grad parameters update.
    """
    if x.ndim != 3 or y.ndim != 3 or x.shape[0] != y.shape[0] or x.shape[2] != y.shape[2]:
        raise ValueError(f"bad batch shapes {x.shape} / {y.shape}")
    batch_stats = stats
    if config.shuffle_channels:
        perm = _step_permutation(x.shape[2], step_seed)
        x = x[..., perm]
        y = y[..., perm]
        batch_stats = stats.permute(perm)

    pred = forward_tensor(
        x, model, stats=batch_stats, mode="train", seed=_derived_seed(step_seed, 0xD0)
    )
    loss = nm.mae_loss(pred, y.astype(pred.data.dtype))
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingError(f"loss became non-finite at optimizer step {opt_state.step}")

    params = model.trainable_params()
    zero_grads(params)
    nm.backward(loss)
    grads = {
        k: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for k, p in params.items()
    }
    adam_step(params, grads, opt_state)
    return value


def _validation_wape(model: ForecastModel, splits: SplitWindows) -> float:
    if splits.val.n_windows == 0:
        return float("nan")
    pred = forward(splits.val.x, model, stats=splits.stats, mode="eval")
    return wape(splits.val.y, pred)


def _model_snapshot(model: ForecastModel) -> dict[str, np.ndarray]:
    snap = {f"codec.{k}": p.data.copy() for k, p in model.codec.params.items()}
    for i, block in enumerate(model.spatial_blocks):
        for k, p in block.params.items():
            snap[f"spatial{i}.{k}"] = p.data.copy()
    return snap


def _model_restore(model: ForecastModel, snap: dict[str, np.ndarray]) -> None:
    for k, p in model.codec.params.items():
        p.data = snap[f"codec.{k}"].copy()
    for i, block in enumerate(model.spatial_blocks):
        for k, p in block.params.items():
            p.data = snap[f"spatial{i}.{k}"].copy()


def run_training_loop(
    n_windows: int,
    config: TrainConfig,
    step_fn: Callable[[int, int, np.ndarray, OptimizerState], float],
    *,
    val_fn: Callable[[], float] | None = None,
    epoch_hook: Callable[[int], None] | None = None,
    snapshot_fn: Callable[[], dict[str, np.ndarray]] | None = None,
    restore_fn: Callable[[dict[str, np.ndarray]], None] | None = None,
) -> list[CurvePoint]:
    """Epoch/batch skeleton shared by the pipeline and baseline trainers.

    Early stopping watches validation WAPE with the configured patience and
    restores the best snapshot before returning.
    """
    opt_state = config.optimizer_state()
    curve: list[CurvePoint] = []
    best_val = float("inf")
    best_snap: dict[str, np.ndarray] | None = None
    epochs_since_best = 0

    for epoch in range(config.epochs):
        if epoch_hook is not None:
            epoch_hook(epoch)
        opt_state.epoch = epoch
        order_rng = np.random.default_rng(
            np.random.SeedSequence([config.master_seed, 0xEB0C, epoch])
        )
        order = order_rng.permutation(n_windows)
        losses = []
        for bi, lo in enumerate(range(0, n_windows, config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            try:
                losses.append(step_fn(epoch, bi, idx, opt_state))
            except TrainingError as err:
                raise TrainingError(f"epoch {epoch}: {err}") from None
        train_loss = float(np.mean(losses)) if losses else float("nan")
        val_loss = val_fn() if val_fn is not None else float("nan")
        curve.append(CurvePoint(epoch, train_loss, val_loss, opt_state.effective_lr()))

        if val_fn is not None and np.isfinite(val_loss):
            if val_loss < best_val:
                best_val = val_loss
                epochs_since_best = 0
                if snapshot_fn is not None:
                    best_snap = snapshot_fn()
            else:
                epochs_since_best += 1
                if epochs_since_best >= config.patience:
                    break
    if best_snap is not None and restore_fn is not None:
        restore_fn(best_snap)
    return curve


def train(
    splits: SplitWindows,
    model: ForecastModel,
    config: TrainConfig,
) -> tuple[Checkpoint, list[CurvePoint]]:
    """Full training run; deterministic in (config, master_seed).

    The codec digest is asserted unchanged unless the unfreeze schedule
    activates; validation runs unshuffled (for an equivariant model the
    shuffled validation loss would be identical anyway).
    """
    frozen_digest = params_digest(model.codec.params) if model.codec.frozen else None
    unfreeze_at = (
        config.epochs - config.unfreeze_last_epochs
        if config.unfreeze_last_epochs > 0
        else None
    )

    def epoch_hook(epoch: int) -> None:
        if unfreeze_at is not None and epoch >= unfreeze_at and model.codec.frozen:
            model.codec.set_frozen(False)

    def step_fn(epoch: int, bi: int, idx: np.ndarray, opt: OptimizerState) -> float:
        step_seed = _derived_seed(config.master_seed, 0x57E9, epoch, bi)
        return train_step(
            splits.train.x[idx], splits.train.y[idx], splits.stats,
            model, config, opt, step_seed,
        )

    curve = run_training_loop(
        splits.train.n_windows,
        config,
        step_fn,
        val_fn=lambda: _validation_wape(model, splits),
        epoch_hook=epoch_hook,
        snapshot_fn=lambda: _model_snapshot(model),
        restore_fn=lambda snap: _model_restore(model, snap),
    )

    if frozen_digest is not None and model.codec.frozen:
        after = params_digest(model.codec.params)
        if after != frozen_digest:
            raise TrainingError("frozen codec parameters changed during training")

    ckpt = checkpoint_from_model(model, config_digest=config.digest())
    return ckpt, curve


def checkpoint_from_model(model: ForecastModel, config_digest: str = "") -> Checkpoint:
    cfg = model.codec.config
    tensors: dict[str, np.ndarray] = {
        f"codec.{k}": p.data.copy() for k, p in model.codec.params.items()
    }
    for i, block in enumerate(model.spatial_blocks):
        for k, p in block.params.items():
            tensors[f"spatial{i}.{k}"] = p.data.copy()
    structure = {
        "patch_len": float(cfg.patch_len),
        "input_len": float(cfg.input_len),
        "hidden_dim": float(cfg.hidden_dim),
        "codec_layers": float(cfg.n_layers),
        "codec_heads": float(cfg.n_heads),
        "horizon": float(cfg.horizon),
        "spatial_depth": float(len(model.spatial_blocks)),
        "spatial_heads": float(model.spatial_blocks[0].n_heads),
        "dropout_rate": float(model.spatial_blocks[0].dropout_rate),
    }
    return Checkpoint(
        tensors=tensors,
        freeze_flags={"codec": model.codec.frozen},
        norm_mean=model.norm_stats.mean.copy(),
        norm_std=model.norm_stats.std.copy(),
        config_digest=config_digest,
        model_kind="pipeline",
        structure=structure,
    )


def model_from_checkpoint(ckpt: Checkpoint) -> ForecastModel:
    from .codec import PatchConfig
    from .spatial import SpatialBlockParams

    if ckpt.model_kind != "pipeline":
        raise ValueError(f"not a pipeline checkpoint: kind={ckpt.model_kind!r}")
    s = ckpt.structure
    cfg = PatchConfig(
        patch_len=int(s["patch_len"]),
        input_len=int(s["input_len"]),
        hidden_dim=int(s["hidden_dim"]),
        n_layers=int(s["codec_layers"]),
        n_heads=int(s["codec_heads"]),
        horizon=int(s["horizon"]),
    )
    frozen = ckpt.freeze_flags.get("codec", True)
    codec_params = {
        k[len("codec."):]: Tensor(v.copy(), requires_grad=not frozen)
        for k, v in ckpt.tensors.items()
        if k.startswith("codec.")
    }
    codec = CodecParams(config=cfg, params=codec_params, frozen=frozen)

    blocks = []
    for i in range(int(s["spatial_depth"])):
        prefix = f"spatial{i}."
        params = {
            k[len(prefix):]: Tensor(v.copy(), requires_grad=True)
            for k, v in ckpt.tensors.items()
            if k.startswith(prefix)
        }
        blocks.append(
            SpatialBlockParams(
                hidden_dim=int(s["hidden_dim"]),
                n_heads=int(s["spatial_heads"]),
                dropout_rate=float(s["dropout_rate"]),
                params=params,
            )
        )
    stats = NormalizationStats(mean=ckpt.norm_mean.copy(), std=ckpt.norm_std.copy())
    return ForecastModel(codec=codec, spatial_blocks=blocks, norm_stats=stats)


# -- subset-channel protocol ---------------------------------------------------


@dataclass
class SubsetCell:
    fraction: float
    shuffle_channels: bool
    seed: int
    wape_pct: float
    mae: float
    wall_time_s: float
    trained_channels: int


@dataclass
class SubsetGrid:
    rows: list[SubsetCell] = field(default_factory=list)

    def mean_wape(self, fraction: float, shuffle: bool) -> float:
        vals = [
            r.wape_pct
            for r in self.rows
            if r.fraction == fraction and r.shuffle_channels == shuffle
        ]
        return float(np.mean(vals)) if vals else float("nan")

    def mean_time(self, fraction: float) -> float:
        vals = [r.wall_time_s for r in self.rows if r.fraction == fraction]
        return float(np.mean(vals)) if vals else float("nan")


def train_subset_protocol(
    ds: SeriesDataset,
    codec: CodecParams,
    fractions: tuple[float, ...],
    base_config: TrainConfig,
    *,
    stride: int = 1,
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    shuffle_modes: tuple[bool, ...] = (True, False),
    seeds: tuple[int, ...] = (0, 1, 2),
    spatial_heads: int = 4,
    spatial_depth: int = 1,
    dropout_rate: float = 0.3,
) -> SubsetGrid:
    """Train on channel subsets, always evaluate on all channels.

    Every cell trains its own model on ceil(fraction*C) channels and then
    scores the full-channel test windows without retraining — possible only
    because the mixing block has no channel-indexed parameters.
    """
    from .evalsuite import mae as mae_metric

    l = codec.config.input_len
    t = codec.config.horizon
    full = split_and_window(ds, l, t, stride=stride, ratios=ratios)

    grid = SubsetGrid()
    for fraction in fractions:
        for shuffle in shuffle_modes:
            for seed in seeds:
                sub_ds, _ = subset_channels(ds, fraction, seed=_derived_seed(seed, 0x5E1))
                sub_splits = split_and_window(sub_ds, l, t, stride=stride, ratios=ratios)
                model = build_model(
                    codec, sub_splits.stats,
                    n_heads=spatial_heads, depth=spatial_depth,
                    dropout_rate=dropout_rate, seed=seed,
                )
                cfg_kwargs = asdict(base_config)
                cfg_kwargs.update(
                    shuffle_channels=shuffle,
                    channel_fraction=fraction,
                    master_seed=seed,
                )
                cfg_kwargs["milestones"] = tuple(cfg_kwargs["milestones"])
                config = TrainConfig(**cfg_kwargs)
                started = time.perf_counter()
                train(sub_splits, model, config)
                elapsed = time.perf_counter() - started

                pred = forward(full.test.x, model, stats=full.stats, mode="eval")
                grid.rows.append(
                    SubsetCell(
                        fraction=float(fraction),
                        shuffle_channels=shuffle,
                        seed=seed,
                        wape_pct=wape(full.test.y, pred),
                        mae=mae_metric(full.test.y, pred),
                        wall_time_s=elapsed,
                        trained_channels=sub_ds.n_channels,
                    )
                )
    return grid
