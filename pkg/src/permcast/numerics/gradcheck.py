"""Central finite-difference validation of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import GradcheckProtocolError
from .tensor import Tensor, backward


@dataclass
class GradcheckReport:
    max_rel_err: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(v < self.tolerance for v in self.max_rel_err.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values()) if self.max_rel_err else 0.0

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"gradcheck {status} (tol {self.tolerance:g})"]
        for name, err in sorted(self.max_rel_err.items(), key=lambda kv: -kv[1]):
            lines.append(f"  {name}: max rel err {err:.3e}")
        return "\n".join(lines)


def finite_diff_gradcheck(
    forward: Callable[[], Tensor],
    params: dict[str, Tensor],
    tolerance: float = 1e-4,
    step: float = 1e-5,
) -> GradcheckReport:
    """Compare tape gradients of ``forward()`` against central differences.

    ``forward`` must close over ``params`` and be deterministic (dropout
    disabled or seed-pinned); two evaluations that disagree raise
    GradcheckProtocolError. Perturbations run in the parameters' own dtype,
    so use float64 parameters for tolerances near 1e-4.
    """
    first = forward()
    second = forward()
    if first.shape != second.shape or not np.array_equal(first.data, second.data):
        raise GradcheckProtocolError(
            "forward is not deterministic: two evaluations differ"
        )
    if first.size != 1:
        raise ValueError("gradcheck requires a scalar-valued forward")

    for p in params.values():
        p.grad = None
    loss = forward()
    backward(loss)
    analytic = {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    errs: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = forward().item()
            flat[i] = keep - step
            down = forward().item()
            flat[i] = keep
            numeric[i] = (up - down) / (2.0 * step)
        a = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        errs[name] = float(np.max(np.abs(a - numeric) / denom))
    return GradcheckReport(max_rel_err=errs, tolerance=tolerance)
