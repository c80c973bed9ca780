"""Synthetic multivariate generators, CSV ingestion, splitting, normalization.

Two generators provide controllable cross-channel coupling so there is real
channel-dependent structure to learn: a first-order vector autoregression
whose transition matrix blends per-channel persistence with a random
channel graph, and a graph-diffusion process with per-node daily cycles.
Each channel also carries its own seasonal component (random amplitude,
period, and phase); with the coupling turned off, distinct channels are
therefore nearly uncorrelated, while the graph term propagates each
channel's seasonal signature to its neighbors when coupling is on.
"""

from __future__ import annotations

import gzip
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CsvParseError, DataError

STD_FLOOR = 1e-8


@dataclass
class SeriesDataset:
    """A raw multivariate series: (n_steps, n_channels) values plus labels."""

    values: np.ndarray
    sampling_period: float = 1.0
    channel_ids: list[str] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"expected a 2-D value matrix, got shape {self.values.shape}")
        if np.isnan(self.values).any():
            raise DataError("dataset contains NaN after ingestion cleaning")
        if not self.channel_ids:
            self.channel_ids = [f"ch{i}" for i in range(self.values.shape[1])]
        if len(self.channel_ids) != self.values.shape[1]:
            raise DataError("channel_ids length does not match channel count")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for the coupled synthetic generators."""

    kind: str = "var"  # "var" | "graph-diffusion"
    n_channels: int = 8
    length: int = 4096
    coupling_strength: float = 0.5
    edge_prob: float = 0.3
    noise_std: float = 1.0
    seed: int = 0
    graph_seed: int | None = None
    diag_coef: float = 0.6
    coupling_gain: float = 0.9
    coupling_delay: int = 1
    amp_range: tuple[float, float] = (1.0, 2.0)
    period_range: tuple[float, float] = (24.0, 80.0)
    level_range: tuple[float, float] = (8.0, 16.0)

    def __post_init__(self):
        if self.kind not in ("var", "graph-diffusion"):
            raise DataError(f"unknown synthetic kind {self.kind!r}")
        if not 0.0 <= self.coupling_strength < 1.0:
            raise DataError("coupling_strength must lie in [0, 1)")
        if self.n_channels < 1 or self.length < 2:
            raise DataError("n_channels and length must be positive")


def _random_row_stochastic_graph(c: int, edge_prob: float, rng) -> np.ndarray:
    """Directed random adjacency, self-loops excluded, rows normalized."""
    adj = (rng.random((c, c)) < edge_prob).astype(np.float64)
    np.fill_diagonal(adj, 0.0)
    for i in range(c):
        if adj[i].sum() == 0.0 and c > 1:
            j = int(rng.integers(c - 1))
            adj[i, j if j < i else j + 1] = 1.0
    if c == 1:
        return np.zeros((1, 1))
    return adj / np.maximum(adj.sum(axis=1, keepdims=True), 1.0)


def _seasonal_matrix(spec: SyntheticSpec, rng) -> np.ndarray:
    """(length, C) per-channel sinusoids with random amplitude/period/phase.

    Frequencies are drawn one per stratum of the admissible band, so no two
    channels share a near-identical period; otherwise colliding sinusoids
    would correlate even with the channel coupling turned off.
    """
    t = np.arange(spec.length, dtype=np.float64)[:, None]
    c = spec.n_channels
    amps = rng.uniform(*spec.amp_range, size=c)
    f_lo, f_hi = 1.0 / spec.period_range[1], 1.0 / spec.period_range[0]
    edges = np.linspace(f_lo, f_hi, c + 1)
    width = edges[1] - edges[0]
    freqs = rng.uniform(edges[:-1] + 0.2 * width, edges[1:] - 0.2 * width)
    freqs = rng.permutation(freqs)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=c)
    return amps * np.sin(2.0 * np.pi * t * freqs + phases)


def _lagged_flow_graph(c: int, edge_prob: float, rng) -> np.ndarray:
    """Directed cycle backbone plus sparse extra edges, rows normalized.

    Each channel is driven mainly by one upstream source (think consecutive
    traffic sensors), so pairwise relations stay heterogeneous — mixing the
    wrong channels is genuinely worse than mixing the right ones — while the
    cycle still correlates every channel with every other at some lag.
    """
    if c == 1:
        return np.zeros((1, 1))
    order = rng.permutation(c)
    w = np.zeros((c, c))
    for k in range(c):
        w[order[k], order[(k + 1) % c]] = 1.0
    extras = (rng.random((c, c)) < edge_prob).astype(np.float64) * 0.25
    np.fill_diagonal(extras, 0.0)
    extras[w > 0] = 0.0
    w = w + extras
    return w / w.sum(axis=1, keepdims=True)


def _companion_radius(diag: np.ndarray, cross: np.ndarray, delay: int) -> float:
    """Spectral radius of the stacked lag-1 form of the delayed system."""
    c = diag.shape[0]
    if delay == 1:
        return float(np.max(np.abs(np.linalg.eigvals(diag + cross))))
    n = c * delay
    comp = np.zeros((n, n))
    comp[:c, :c] = diag
    comp[:c, (delay - 1) * c :] = cross
    comp[c:, :-c] = np.eye(c * (delay - 1))
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def _transition_matrix(spec: SyntheticSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal persistence plus (possibly delayed) cross coupling.

    Stationarity is enforced on the companion form; a delayed coupling term
    tolerates row gains near one, which is what lets the propagated signal
    dominate channel variance.
    """
    c = spec.n_channels
    graph_rng = (
        np.random.default_rng(np.random.SeedSequence([int(spec.graph_seed), 0x6EAF]))
        if spec.graph_seed is not None
        else rng
    )
    w = _lagged_flow_graph(c, spec.edge_prob, graph_rng)
    cs = spec.coupling_strength
    diag = (1.0 - cs) * spec.diag_coef * np.eye(c)
    cross = cs * spec.coupling_gain * w
    for _ in range(8):
        if _companion_radius(diag, cross, spec.coupling_delay) < 1.0:
            break
        cross = cross * 0.95
    else:
        radius = _companion_radius(diag, cross, spec.coupling_delay)
        raise DataError(f"transition matrix not stationary (spectral radius {radius:.3f})")
    return diag, cross


def gen_var_process(spec: SyntheticSpec) -> SeriesDataset:
    """Vector autoregression with seasonal forcing:
    x_t = D x_{t-1} + B x_{t-delay} + s_t + eps_t.

    At the default delay of 1 this is exactly x_t = A x_{t-1} + s_t + eps_t
    with A = D + B. coupling_strength 0 makes the process diagonal; the
    per-channel seasonal parameters then leave distinct channels essentially
    uncorrelated. A delay larger than 1 makes the upstream channel lead its
    targets, so the freshest upstream values are predictive and visible only
    across channels — the structure a channel mixer can exploit.
    """
    if spec.coupling_delay < 1:
        raise DataError("coupling_delay must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 0x7A9]))
    diag, cross = _transition_matrix(spec, rng)
    seasonal = _seasonal_matrix(spec, rng)
    levels = rng.uniform(*spec.level_range, size=spec.n_channels)

    # near-unit delayed gains mix slowly; burn in long enough to reach steady state
    burn_in = 200 + 60 * spec.coupling_delay
    total = spec.length + burn_in
    eps = rng.normal(0.0, spec.noise_std, size=(total, spec.n_channels))
    x = np.zeros((total, spec.n_channels))
    reps = burn_in // spec.length + 1 if burn_in > spec.length else 1
    season_full = np.concatenate(
        [np.tile(seasonal, (reps, 1))[-burn_in:], seasonal], axis=0
    )
    d = spec.coupling_delay
    for t in range(1, total):
        lagged = x[t - d] if t >= d else x[0]
        x[t] = diag @ x[t - 1] + cross @ lagged + season_full[t] + eps[t]
    values = x[burn_in:] + levels
    return SeriesDataset(
        values=values,
        channel_ids=[f"ch{i}" for i in range(spec.n_channels)],
        provenance={"synthetic": spec.__dict__.copy()},
    )


def gen_graph_diffusion(spec: SyntheticSpec) -> SeriesDataset:
    """Values diffuse over a random undirected graph with daily periodicity."""
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 0xD1FF]))
    c = spec.n_channels
    adj = _random_row_stochastic_graph(c, spec.edge_prob, rng)
    adj = (adj + adj.T) / 2.0
    row_sum = np.maximum(adj.sum(axis=1, keepdims=True), STD_FLOOR)
    w = adj / row_sum
    beta = spec.coupling_strength * 0.8
    persistence = 0.85

    day = 48.0
    t = np.arange(spec.length + 200, dtype=np.float64)[:, None]
    amps = rng.uniform(*spec.amp_range, size=c)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=c)
    daily = amps * np.sin(2.0 * np.pi * t / day + phases)

    eps = rng.normal(0.0, spec.noise_std, size=(spec.length + 200, c))
    x = np.zeros((spec.length + 200, c))
    for k in range(1, spec.length + 200):
        x[k] = persistence * ((1.0 - beta) * x[k - 1] + beta * (w @ x[k - 1])) \
            + daily[k] + eps[k]
    values = x[200:] + rng.uniform(*spec.level_range, size=c)
    return SeriesDataset(
        values=values,
        channel_ids=[f"ch{i}" for i in range(c)],
        provenance={"synthetic": spec.__dict__.copy()},
    )


def generate(spec: SyntheticSpec) -> SeriesDataset:
    if spec.kind == "var":
        return gen_var_process(spec)
    return gen_graph_diffusion(spec)


def lag1_cross_correlation(values: np.ndarray) -> np.ndarray:
    """Pearson correlation between x_i(t-1) and x_j(t) for all channel pairs."""
    x = np.asarray(values, dtype=np.float64)
    past = x[:-1] - x[:-1].mean(axis=0)
    future = x[1:] - x[1:].mean(axis=0)
    denom = np.outer(
        np.sqrt((past**2).sum(axis=0)), np.sqrt((future**2).sum(axis=0))
    )
    return (past.T @ future) / np.maximum(denom, STD_FLOOR)


def mean_abs_offdiag_lag1(values: np.ndarray) -> float:
    corr = lag1_cross_correlation(values)
    c = corr.shape[0]
    if c < 2:
        return 0.0
    mask = ~np.eye(c, dtype=bool)
    return float(np.abs(corr[mask]).mean())


# -- CSV ingestion -----------------------------------------------------------


def _open_text(path: Path, mode: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def save_csv(ds: SeriesDataset, path) -> None:
    """Wide format: header ``timestamp,<id1>,...``; repr floats round-trip exactly."""
    path = Path(path)
    with _open_text(path, "w") as fh:
        fh.write("timestamp," + ",".join(ds.channel_ids) + "\n")
        for i, row in enumerate(ds.values):
            stamp = repr(float(i * ds.sampling_period))
            fh.write(stamp + "," + ",".join(repr(float(v)) for v in row) + "\n")


def load_csv(path, *, strict: bool = True) -> SeriesDataset:
    """Parse a wide-format CSV; bad rows raise (strict) or are dropped with
    their line numbers recorded in provenance."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such data file: {path}")
    with _open_text(path, "r") as fh:
        header = fh.readline()
        if not header.strip():
            raise CsvParseError(f"{path}: empty file")
        columns = [c.strip() for c in header.rstrip("\n").split(",")]
        if len(columns) < 2:
            raise CsvParseError(f"{path}: header needs a timestamp and one channel")
        channel_ids = columns[1:]
        n_cols = len(columns)
        rows: list[list[float]] = []
        stamps: list[float] = []
        dropped: list[int] = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            if len(parts) != n_cols:
                raise CsvParseError(
                    f"{path}: line {lineno}: expected {n_cols} fields, got {len(parts)}"
                )
            try:
                stamp = float(parts[0])
                vals = [float(v) for v in parts[1:]]
            except ValueError:
                if strict:
                    raise CsvParseError(f"{path}: line {lineno}: unparseable value") from None
                dropped.append(lineno)
                continue
            stamps.append(stamp)
            rows.append(vals)
    if not rows:
        raise CsvParseError(f"{path}: no data rows")
    period = stamps[1] - stamps[0] if len(stamps) > 1 else 1.0
    prov: dict = {"file": str(path)}
    if dropped:
        prov["dropped_lines"] = dropped
    return SeriesDataset(
        values=np.asarray(rows),
        sampling_period=period if period > 0 else 1.0,
        channel_ids=channel_ids,
        provenance=prov,
    )


# -- normalization -----------------------------------------------------------


@dataclass
class NormalizationStats:
    """Per-channel mean/std computed on the training split only."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64), STD_FLOOR)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise DataError("stats must be 1-D and congruent")

    @classmethod
    def from_train_values(cls, train_values: np.ndarray) -> "NormalizationStats":
        v = np.asarray(train_values, dtype=np.float64)
        return cls(mean=v.mean(axis=0), std=v.std(axis=0))

    @property
    def n_channels(self) -> int:
        return self.mean.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def permute(self, order: np.ndarray) -> "NormalizationStats":
        order = np.asarray(order)
        return NormalizationStats(mean=self.mean[order], std=self.std[order])

    def subset(self, indices) -> "NormalizationStats":
        idx = np.asarray(indices)
        return NormalizationStats(mean=self.mean[idx], std=self.std[idx])


# -- splitting and windowing ---------------------------------------------------


@dataclass
class WindowSet:
    """Batched supervised windows: X (n, L, C) histories, Y (n, T, C) targets."""

    x: np.ndarray
    y: np.ndarray
    channel_ids: list[str]
    start_indices: np.ndarray

    @property
    def n_windows(self) -> int:
        return self.x.shape[0]

    @property
    def n_channels(self) -> int:
        return self.x.shape[2]

    def select_channels(self, indices) -> "WindowSet":
        idx = np.asarray(indices)
        return WindowSet(
            x=self.x[:, :, idx],
            y=self.y[:, :, idx],
            channel_ids=[self.channel_ids[i] for i in idx],
            start_indices=self.start_indices,
        )


@dataclass
class SplitWindows:
    train: WindowSet
    val: WindowSet
    test: WindowSet
    stats: NormalizationStats
    history_len: int
    horizon: int
    boundaries: tuple[int, int, int]


def _segment_windows(segment: np.ndarray, offset: int, l: int, t: int,
                     stride: int, ids: list[str]) -> WindowSet:
    n = segment.shape[0]
    starts = list(range(0, n - l - t + 1, stride))
    xs = np.stack([segment[s : s + l] for s in starts]) if starts else \
        np.empty((0, l, segment.shape[1]))
    ys = np.stack([segment[s + l : s + l + t] for s in starts]) if starts else \
        np.empty((0, t, segment.shape[1]))
    return WindowSet(
        x=xs, y=ys, channel_ids=list(ids),
        start_indices=np.asarray(starts, dtype=np.int64) + offset,
    )


def split_and_window(
    ds: SeriesDataset,
    history_len: int,
    horizon: int,
    stride: int = 1,
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
) -> SplitWindows:
    """Chronological split, then windows fully inside each segment.

    Because windows never straddle a boundary, no test history overlaps any
    training target. Window count per segment is
    floor((segment_len - L - T) / stride) + 1.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    if min(ratios) < 0:
        raise DataError("split ratios must be non-negative")
    if stride < 1:
        raise DataError("stride must be >= 1")
    n = ds.n_steps
    n_train = int(np.floor(ratios[0] * n))
    n_val = int(np.floor(ratios[1] * n))
    n_test = n - n_train - n_val if ratios[2] > 0 else 0
    bounds = (n_train, n_train + n_val, n_train + n_val + n_test)

    segments = {
        "train": (ds.values[: bounds[0]], 0, ratios[0]),
        "val": (ds.values[bounds[0] : bounds[1]], bounds[0], ratios[1]),
        "test": (ds.values[bounds[1] : bounds[2]], bounds[1], ratios[2]),
    }
    out = {}
    for name, (segment, offset, ratio) in segments.items():
        if ratio == 0:
            out[name] = WindowSet(
                x=np.empty((0, history_len, ds.n_channels)),
                y=np.empty((0, horizon, ds.n_channels)),
                channel_ids=list(ds.channel_ids),
                start_indices=np.empty(0, dtype=np.int64),
            )
            continue
        if segment.shape[0] < history_len + horizon:
            raise DataError(
                f"{name} segment ({segment.shape[0]} steps) too short for one "
                f"window of {history_len}+{horizon}"
            )
        out[name] = _segment_windows(
            segment, offset, history_len, horizon, stride, ds.channel_ids
        )

    stats = NormalizationStats.from_train_values(ds.values[: bounds[0]])
    return SplitWindows(
        train=out["train"], val=out["val"], test=out["test"],
        stats=stats, history_len=history_len, horizon=horizon, boundaries=bounds,
    )


def subset_channels(
    ds: SeriesDataset, fraction: float, seed: int
) -> tuple[SeriesDataset, list[str]]:
    """Keep a uniform ceil(fraction*C) channel sample; returns held-out ids."""
    if not 0.0 < fraction <= 1.0:
        raise DataError(f"channel fraction must be in (0, 1], got {fraction}")
    c = ds.n_channels
    k = int(np.ceil(fraction * c))
    if k == 0:
        raise DataError("channel fraction selects zero channels")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5B5E7]))
    keep = np.sort(rng.choice(c, size=k, replace=False))
    held_out = [ds.channel_ids[i] for i in range(c) if i not in set(keep.tolist())]
    sub = SeriesDataset(
        values=ds.values[:, keep],
        sampling_period=ds.sampling_period,
        channel_ids=[ds.channel_ids[i] for i in keep],
        provenance={**ds.provenance, "channel_subset": keep.tolist()},
    )
    return sub, held_out
