"""Central finite-difference verification of taped gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    tolerance: float
    # (parameter index, flat coordinate, analytic, numeric, relative error)
    failures: list[tuple[int, int, float, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def relative_error(a: float, n: float, floor: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_coords: int = 1000,
    floor: float = 1e-7,
    seed: int = 0,
) -> GradCheckReport:
    """Compare ``backward()`` gradients of ``fn()`` against central differences.

    ``fn`` must be a pure function of the parameter values (freeze dropout
    masks by reseeding inside it). Parameters must hold float64 data. When the
    total coordinate count exceeds ``max_coords`` a uniform random subsample of
    that size is checked. ``floor`` bounds the denominator so that gradients
    that are zero analytically do not produce spurious relative errors.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError("grad_check requires float64 parameters")
        p.grad = None
    loss = fn()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    sizes = [p.data.size for p in params]
    total = int(sum(sizes))
    if total > max_coords:
        rng = np.random.default_rng(seed)
        picks = np.sort(rng.choice(total, size=max_coords, replace=False))
    else:
        picks = np.arange(total)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    report = GradCheckReport(max_rel_error=0.0, n_checked=len(picks), tolerance=tolerance)
    for flat in picks:
        pi = int(np.searchsorted(offsets, flat, side="right") - 1)
        ci = int(flat - offsets[pi])
        # index in place: reshape(-1) would copy parameters stored in a permuted memory order
        data = params[pi].data
        idx = np.unravel_index(ci, data.shape)
        orig = data[idx]
        data[idx] = orig + step
        fp = fn().item()
        data[idx] = orig - step
        fm = fn().item()
        data[idx] = orig
        num = (fp - fm) / (2.0 * step)
        ana = float(analytic[pi].reshape(-1)[ci])
        err = relative_error(ana, num, floor)
        report.max_rel_error = max(report.max_rel_error, err)
        if err > tolerance:
            report.failures.append((pi, ci, ana, num, err))
    for p in params:
        p.grad = None
    return report
