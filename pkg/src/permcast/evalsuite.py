"""Metrics, permutation machinery, and the channel-shuffle audit battery.

WAPE aggregates absolute error over an entire window collection and divides
by the aggregate signal magnitude (plus a tiny epsilon), reported as a
percent; MAE is the plain elementwise mean. Both are invariant under a joint
channel permutation of targets and forecasts, which is what lets the audit
express "robust under reordering" as a degradation ratio of exactly one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .datagen import NormalizationStats, WindowSet

DEFAULT_EPS_SCALE = 1e-8

# predict(X_raw (N, L, C), column-aligned stats) -> forecasts (N, T, C)
PredictFn = Callable[[np.ndarray, NormalizationStats], np.ndarray]


def _check_pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValueError(f"shape mismatch: targets {y.shape} vs forecasts {yhat.shape}")
    if not (np.isfinite(y).all() and np.isfinite(yhat).all()):
        raise ValueError("metrics require finite inputs")
    return y, yhat


def wape(y, yhat, eps_scale: float = DEFAULT_EPS_SCALE) -> float:
    """Sum|y-yhat| / (Sum|y| + eps) as a percent; eps = eps_scale * mean|y|.

    An all-zero target would collapse eps to zero as well, so eps_scale
    itself is used as the absolute fallback to keep the value finite.
    """
    y, yhat = _check_pair(y, yhat)
    abs_y = np.abs(y)
    mean_abs = float(abs_y.mean()) if y.size else 0.0
    eps = eps_scale * mean_abs if mean_abs > 0.0 else eps_scale
    return 100.0 * float(np.abs(y - yhat).sum()) / (float(abs_y.sum()) + eps)


def mae(y, yhat) -> float:
    y, yhat = _check_pair(y, yhat)
    return float(np.abs(y - yhat).mean())


@dataclass(frozen=True)
class PermutationMap:
    """A bijection on channel indices; ``mapping[i]`` is the source column."""

    mapping: tuple[int, ...]
    seed: int | None = None

    def __post_init__(self):
        m = np.asarray(self.mapping, dtype=np.int64)
        if sorted(m.tolist()) != list(range(len(m))):
            raise ValueError(f"not a bijection on 0..{len(m) - 1}: {self.mapping}")

    @classmethod
    def identity(cls, c: int) -> "PermutationMap":
        return cls(mapping=tuple(range(c)))

    @classmethod
    def sample(cls, c: int, seed: int) -> "PermutationMap":
        rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
        return cls(mapping=tuple(int(v) for v in rng.permutation(c)), seed=seed)

    @property
    def n_channels(self) -> int:
        return len(self.mapping)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.mapping, dtype=np.int64)

    def inverse(self) -> "PermutationMap":
        inv = np.argsort(self.array)
        return PermutationMap(mapping=tuple(int(v) for v in inv), seed=self.seed)

    def is_identity(self) -> bool:
        return all(i == v for i, v in enumerate(self.mapping))

    def fixed_points(self) -> set[int]:
        return {i for i, v in enumerate(self.mapping) if i == v}


def apply_permutation(m: np.ndarray, pi: PermutationMap) -> np.ndarray:
    """Reorder the trailing (channel) axis: output column i = input column pi(i)."""
    m = np.asarray(m)
    if m.shape[-1] != pi.n_channels:
        raise ValueError(
            f"permutation over {pi.n_channels} channels cannot apply to shape {m.shape}"
        )
    return m[..., pi.array]


def sample_partial_permutation(c: int, fraction: float, seed: int) -> PermutationMap:
    """Permute a uniform floor(fraction*C) channel subset; fix the rest."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    k = int(np.floor(fraction * c))
    mapping = np.arange(c, dtype=np.int64)
    if k >= 2:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x9A57]))
        subset = np.sort(rng.choice(c, size=k, replace=False))
        mapping[subset] = subset[rng.permutation(k)]
    return PermutationMap(mapping=tuple(int(v) for v in mapping), seed=seed)


@dataclass
class MetricReport:
    wape_pct: float
    mae: float
    n_windows: int
    shuffle_mode: str = "none"  # none | full | partial(p)
    eps_scale: float = DEFAULT_EPS_SCALE

    def __post_init__(self):
        if self.wape_pct < 0 or self.mae < 0:
            raise ValueError("metrics must be non-negative")


def evaluate_windows(
    predict: PredictFn,
    windows: WindowSet,
    stats: NormalizationStats,
    pi: PermutationMap | None = None,
    eps_scale: float = DEFAULT_EPS_SCALE,
) -> MetricReport:
    """Evaluate over a window collection, optionally under a channel permutation.

    The permutation is applied jointly to histories, targets, and the
    per-channel statistics, so normalization still travels with content.
    """
    x, y, st = windows.x, windows.y, stats
    mode = "none"
    if pi is not None and not pi.is_identity():
        x = apply_permutation(x, pi)
        y = apply_permutation(y, pi)
        st = stats.permute(pi.array)
        mode = "full" if len(pi.fixed_points()) == 0 else "partial"
    yhat = predict(x, st)
    return MetricReport(
        wape_pct=wape(y, yhat, eps_scale),
        mae=mae(y, yhat),
        n_windows=windows.n_windows,
        shuffle_mode=mode,
        eps_scale=eps_scale,
    )


@dataclass
class AuditRow:
    fraction: float
    repeat: int
    wape_pct: float
    mae: float
    degradation_ratio: float


@dataclass
class AuditReport:
    """Partial-shuffle degradation table (rows keyed by fraction, repeat)."""

    rows: list[AuditRow] = field(default_factory=list)
    n_windows: int = 0
    baseline_wape_pct: float = float("nan")
    master_seed: int = 0

    def fractions(self) -> list[float]:
        seen: list[float] = []
        for r in self.rows:
            if r.fraction not in seen:
                seen.append(r.fraction)
        return seen

    def mean_by_fraction(self, attr: str = "wape_pct") -> dict[float, float]:
        out: dict[float, list[float]] = {}
        for r in self.rows:
            out.setdefault(r.fraction, []).append(getattr(r, attr))
        return {f: float(np.mean(v)) for f, v in out.items()}

    def mean_ratio(self, fraction: float) -> float:
        vals = [r.degradation_ratio for r in self.rows if r.fraction == fraction]
        return float(np.mean(vals))


def cpi_audit(
    predict: PredictFn,
    windows: WindowSet,
    stats: NormalizationStats,
    fractions: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
    n_repeats: int = 5,
    master_seed: int = 0,
) -> AuditReport:
    """Mean WAPE/MAE per shuffle fraction plus degradation ratio vs fraction 0."""
    if windows.n_windows == 0:
        raise ValueError("audit requires a non-empty window collection")
    c = windows.n_channels

    base = evaluate_windows(predict, windows, stats, pi=None)
    report = AuditReport(
        n_windows=windows.n_windows,
        baseline_wape_pct=base.wape_pct,
        master_seed=master_seed,
    )
    for fi, fraction in enumerate(fractions):
        for rep in range(n_repeats):
            if fraction == 0.0:
                metrics = base
            else:
                seed = int(
                    np.random.SeedSequence([int(master_seed), 0xA0D17, fi, rep])
                    .generate_state(1)[0]
                )
                pi = sample_partial_permutation(c, fraction, seed)
                try:
                    metrics = evaluate_windows(predict, windows, stats, pi=pi)
                except Exception as err:
                    raise RuntimeError(
                        f"audit failed at fraction {fraction}, repeat {rep}: {err}"
                    ) from err
            report.rows.append(
                AuditRow(
                    fraction=float(fraction),
                    repeat=rep,
                    wape_pct=metrics.wape_pct,
                    mae=metrics.mae,
                    degradation_ratio=metrics.wape_pct / base.wape_pct
                    if base.wape_pct > 0
                    else float("inf"),
                )
            )
    return report


@dataclass
class ComparisonRow:
    model: str
    trained_with_shuffle: bool
    plain_wape_pct: float
    test_shuffle_wape_pct: float
    full_shuffle_ratio: float


@dataclass
class PairedReport:
    """Fixed-order baseline vs shuffle-trained twin vs the equivariant model."""

    baseline_fixed: AuditReport
    baseline_shuffled: AuditReport
    pipeline: AuditReport
    comparison: list[ComparisonRow] = field(default_factory=list)


def contrast_experiment(
    splits,
    codec,
    *,
    train_config,
    fractions: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
    n_repeats: int = 5,
    audit_seed: int = 0,
    baseline_kwargs: dict | None = None,
    spatial_kwargs: dict | None = None,
) -> PairedReport:
    """Train the contrast baseline twice (fixed order and shuffled) plus the
    equivariant model, then audit all three under the same partial-shuffle
    battery.
    """
    from dataclasses import asdict, replace

    from .baseline import baseline_predictor, init_baseline, train_baseline
    from .pipeline import build_model, predictor
    from .trainer import train

    c = splits.train.n_channels
    l, t = splits.history_len, splits.horizon
    bl_kwargs = baseline_kwargs or {}
    sp_kwargs = spatial_kwargs or {}

    fixed = init_baseline(c, l, t, seed=train_config.master_seed, **bl_kwargs)
    train_baseline(splits, fixed, replace(train_config, shuffle_channels=False))

    shuffled = init_baseline(c, l, t, seed=train_config.master_seed, **bl_kwargs)
    train_baseline(splits, shuffled, replace(train_config, shuffle_channels=True))

    model = build_model(codec, splits.stats, seed=train_config.master_seed, **sp_kwargs)
    train(splits, model, replace(train_config, shuffle_channels=True))

    audits = {}
    for name, predict in (
        ("baseline_fixed", baseline_predictor(fixed)),
        ("baseline_shuffled", baseline_predictor(shuffled)),
        ("pipeline", predictor(model)),
    ):
        audits[name] = cpi_audit(
            predict, splits.test, splits.stats,
            fractions=fractions, n_repeats=n_repeats, master_seed=audit_seed,
        )

    comparison = []
    for name, trained_shuffled in (
        ("baseline_fixed", False),
        ("baseline_shuffled", True),
        ("pipeline", True),
    ):
        audit = audits[name]
        comparison.append(
            ComparisonRow(
                model=name,
                trained_with_shuffle=trained_shuffled,
                plain_wape_pct=audit.baseline_wape_pct,
                test_shuffle_wape_pct=audit.mean_by_fraction()[1.0]
                if 1.0 in audit.mean_by_fraction()
                else float("nan"),
                full_shuffle_ratio=audit.mean_ratio(1.0) if 1.0 in audit.fractions() else float("nan"),
            )
        )
    return PairedReport(
        baseline_fixed=audits["baseline_fixed"],
        baseline_shuffled=audits["baseline_shuffled"],
        pipeline=audits["pipeline"],
        comparison=comparison,
    )
