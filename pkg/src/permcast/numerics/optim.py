"""Adam with decoupled weight decay, global-norm clipping, and milestone LR decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerState:
    """Per-run optimizer state; moments are keyed by parameter name.

    The effective learning rate is ``base_lr * decay_factor**k`` where k counts
    milestones at or below the current epoch, so it is non-increasing in step.
    """

    base_lr: float = 1e-3
    milestones: tuple[int, ...] = (1, 10, 25, 40)
    decay_factor: float = 0.5
    weight_decay: float = 1e-5
    clip_norm: float = 3.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    epoch: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def effective_lr(self) -> float:
        hits = sum(1 for m in self.milestones if self.epoch >= m)
        return self.base_lr * self.decay_factor**hits


def clip_global_norm(
    grads: dict[str, np.ndarray], clip_norm: float
) -> tuple[dict[str, np.ndarray], float]:
    """Rescale all gradients by clip_norm/norm when the global norm exceeds it."""
    sq = 0.0
    for g in grads.values():
        sq += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    norm = float(np.sqrt(sq))
    if clip_norm > 0 and norm > clip_norm:
        scale = clip_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
) -> OptimizerState:
    """One clipped Adam update with bias correction and decoupled weight decay.

    Parameters are updated in place (the one sanctioned mutation of tensor
    data). Gradients are clipped jointly by global norm before the update.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            grads = dict(grads)
            grads[name] = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter '{name}' {p.shape}"
            )
    grads, _ = clip_global_norm({k: grads[k] for k in params}, state.clip_norm)

    state.step += 1
    t = state.step
    lr = state.effective_lr()
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=p.data.dtype)
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        update = m_hat / (np.sqrt(v_hat) + state.eps)
        if state.weight_decay > 0.0:
            update = update + state.weight_decay * p.data
        p.data = (p.data - lr * update).astype(p.data.dtype)
    return state


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
