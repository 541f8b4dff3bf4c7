"""Cash-Karp 5(4) embedded Runge-Kutta integrator with a nonnegativity guard.

Both deterministic solvers integrate concentration vectors that must stay
nonnegative.  A step whose fifth-order solution has a negative entry is
rejected and retried with half the step, independent of the error test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import StiffnessError

# Cash & Karp (1990) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 3 / 5, 1.0, 7 / 8])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [3 / 10, -9 / 10, 6 / 5],
    [-11 / 54, 5 / 2, -70 / 27, 35 / 27],
    [1631 / 55296, 175 / 512, 575 / 13824, 44275 / 110592, 253 / 4096],
]
_B5 = np.array([37 / 378, 0.0, 250 / 621, 125 / 594, 0.0, 512 / 1771])
_B4 = np.array([2825 / 27648, 0.0, 18575 / 48384, 13525 / 55296, 277 / 14336, 1 / 4])
_E = _B5 - _B4


@dataclass
class StepStats:
    accepted: int = 0
    rejected_error: int = 0
    rejected_negative: int = 0
    rhs_evals: int = 0
    clipped: int = 0
    clipped_sum: float = 0.0


def integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    t_end: float,
    *,
    rtol: float = 1e-8,
    atol: float = 1e-14,
    h0: float | None = None,
    h_max: float = math.inf,
    h_min: float = 1e-14,
    t_out: np.ndarray | None = None,
    on_step: Callable[[float, np.ndarray], bool | None] | None = None,
    max_steps: int = 10_000_000,
    nonneg: bool = True,
):
    """Integrate ``y' = rhs(t, y)`` from ``t = 0`` to ``t_end``.

    ``t_out`` lists times the integrator must land on exactly; each is passed
    to ``on_step`` like any accepted step.  ``on_step`` may return ``True`` to
    stop early.  Returns ``(t, y, stats)`` at the final time reached.

    With ``nonneg`` a step producing an entry below ``-atol`` is rejected
    and halved; entries in ``[-atol, 0)`` are set to zero and tallied in the
    returned stats.

    Raises :class:`StiffnessError` if the step falls below ``h_min`` (relative
    to ``max(1, t)``).
    """
    y = np.array(y0, dtype=float)
    t = 0.0
    stats = StepStats()
    outs = np.array([] if t_out is None else sorted(set(float(s) for s in t_out if 0 < s <= t_end)))
    k_out = 0
    k = np.empty((6,) + y.shape)
    k[0] = rhs(t, y)
    stats.rhs_evals += 1
    if h0 is None:
        scale = atol + rtol * np.abs(y)
        d0 = np.max(np.abs(y) / scale)
        d1 = np.max(np.abs(k[0]) / scale)
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h = min(h0, h_max, t_end)
    steps = 0
    while t < t_end:
        steps += 1
        if steps > max_steps:
            raise StiffnessError(f"step budget exhausted at t={t:.6g}", t=t)
        target = t_end
        if k_out < outs.size:
            target = min(target, outs[k_out])
        last = False
        h_free = h
        if t + h >= target * (1 - 1e-15) or target - (t + h) < 1e-12 * max(1.0, t):
            h = target - t
            last = True
        if h < h_min * max(1.0, t):
            raise StiffnessError(f"step size underflow (h={h:.3g}) at t={t:.6g}", t=t)
        for s in range(1, 6):
            ys = y + h * np.tensordot(_A[s], k[:s], axes=1)
            k[s] = rhs(t + _C[s] * h, ys)
        stats.rhs_evals += 5
        y_new = y + h * np.tensordot(_B5, k, axes=1)
        err_vec = h * np.tensordot(_E, k, axes=1)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.max(np.abs(err_vec) / scale)) if y.size else 0.0
        if not np.all(np.isfinite(y_new)):
            err = math.inf
        if err > 1.0:
            stats.rejected_error += 1
            fac = 0.2 if not math.isfinite(err) else max(0.2, 0.9 * err ** -0.25)
            h *= fac
            continue
        if nonneg:
            neg = y_new < 0
            if np.any(neg):
                # rounding-level negatives (within atol) are zeroed; anything larger is a real overshoot
                if np.any(y_new[neg] < -atol):
                    stats.rejected_negative += 1
                    h *= 0.5
                    continue
                stats.clipped += int(neg.sum())
                stats.clipped_sum -= float(y_new[neg].sum())
                y_new[neg] = 0.0
        t = target if last else t + h
        y = y_new
        stats.accepted += 1
        k[0] = rhs(t, y)
        stats.rhs_evals += 1
        if last and k_out < outs.size and t >= outs[k_out]:
            k_out += 1
        stop = on_step(t, y) if on_step is not None else None
        if stop:
            break
        fac = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        h = min(max(h * fac, h_free) if last else h * fac, h_max)
    return t, y, stats
