"""Criticality scans over the log exponent α.

* ``k0log``: the dyadic cascade from ``δ_1`` refined in ``n_max``.
* ``k1log``: the integer grid from ``δ_1`` refined in ``N_max`` (level ``log N_max``).
* ``sqrtlog``: the integer grid as for ``k1log``.  Known to conserve mass for
  ``α <= 1`` and to gel for ``α > 2``; in between nothing is proved, so those
  rows carry the verdict ``"paper-open"`` and the numerical outcome only as
  ``tendency``.

Each α gets a verdict from the loss times under refinement (see
:func:`gelscope.grid.classify_refinement`), the applicable theoretical bound,
and the predicted regime.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from ..bounds import BoundSpec, additive_gel_bound, gel_time_bound
from ..cascade import integrate_cascade
from ..errors import DomainError, GelscopeError
from ..grid import classify_refinement, integrate_grid
from ..kernels import k0_log, k1_log, sqrt_log
from ..spectrum import MassSpectrum

# family -> (conserving for α <= lo, gelling for α > hi); undecided in between
REGIMES = {"k0log": (2.0, 2.0), "k1log": (1.0, 1.0), "sqrtlog": (1.0, 2.0)}
OPEN = "paper-open"
DEFAULT_ALPHAS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)


@dataclass(frozen=True)
class ScanBudget:
    levels: tuple
    t_end: float
    tol: float = 1e-6
    threshold: float = 1e-3
    max_steps: int = 200_000
    rule: str = "exponent"
    margin: float | None = None
    workers: int = 1

    @staticmethod
    def default(family: str) -> "ScanBudget":
        if family == "k0log":
            return ScanBudget(levels=(640, 1280, 2560), t_end=400.0)
        if family in ("k1log", "sqrtlog"):
            return ScanBudget(levels=(256, 1024, 4096), t_end=12.0)
        raise DomainError(f"unknown scan family {family!r}")


@dataclass
class ScanRow:
    family: str
    alpha: float
    verdict: str
    predicted: str
    exponent: float | None
    gel_time_estimate: float | None
    bound: float
    bound_route: str
    within_bound: bool | None
    loss_times: list
    levels: list
    reason: str
    seconds: float = 0.0
    runs: list = field(default_factory=list)
    tendency: str | None = None  # raw classifier outcome, kept even when the verdict is paper-open

    @property
    def agrees(self) -> bool:
        return self.verdict == self.predicted


def predicted_regime(family: str, alpha: float) -> str:
    lo, hi = REGIMES[family]
    if alpha <= lo:
        return "conserve"
    if alpha > hi:
        return "gel"
    return OPEN


def _one_run(job):
    family, alpha, level, budget = job
    t0 = time.perf_counter()
    try:
        if family == "k0log":
            r = integrate_cascade(alpha, budget.t_end, int(level), budget.tol,
                                  loss_threshold=budget.threshold, max_steps=budget.max_steps, record="ends")
        else:
            kernel = k1_log(alpha) if family == "k1log" else sqrt_log(alpha)
            r = integrate_grid(kernel, MassSpectrum.dirac(1.0), int(level), budget.t_end, budget.tol,
                               loss_threshold=budget.threshold, snapshots="ends", max_steps=budget.max_steps)
        return (family, alpha, level, r.loss_time, None, time.perf_counter() - t0)
    except GelscopeError as exc:
        return (family, alpha, level, None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0)


def _bound(family: str, alpha: float):
    d = MassSpectrum.dirac(1.0)
    if family == "k0log":
        return gel_time_bound(k0_log(alpha), d, BoundSpec(0.5, 1.5), profile_points=2).tgel_upper, "theorem-2.3"
    if family == "sqrtlog":
        return gel_time_bound(sqrt_log(alpha), d, BoundSpec(0.5, 2.0), profile_points=2).tgel_upper, "theorem-2.3"
    if alpha > 1:
        return additive_gel_bound(alpha, d).tgel_upper, "prop-3.4ii"
    return math.inf, "none"


def criticality_scan(family: str, alphas=DEFAULT_ALPHAS, budget: ScanBudget | None = None) -> list[ScanRow]:
    """Classify each α by a refinement study; rows come back sorted by α."""
    if family not in REGIMES:
        raise DomainError(f"unknown scan family {family!r}; use one of {sorted(REGIMES)}")
    budget = budget or ScanBudget.default(family)
    alphas = sorted(float(a) for a in alphas)
    for a in alphas:
        if not 0 < a <= 4:
            raise DomainError("alphas must lie in (0, 4]")
    jobs = [(family, a, lv, budget) for a in alphas for lv in budget.levels]
    workers = max(1, min(budget.workers, len(jobs)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_run, jobs))
    else:
        results = [_one_run(j) for j in jobs]
    by_key = {(r[1], r[2]): r for r in results}
    rows = []
    for a in alphas:
        runs = [by_key[(a, lv)] for lv in budget.levels]
        errors = [r[4] for r in runs if r[4]]
        levels = [float(lv) if family == "k0log" else math.log(lv) for lv in budget.levels]
        times = [r[3] for r in runs]
        secs = sum(r[5] for r in runs)
        bound, route = _bound(family, a)
        predicted = predicted_regime(family, a)
        if errors:
            rows.append(ScanRow(family, a, "inconclusive", predicted, None, None, bound, route, None, times,
                                list(budget.levels), "; ".join(errors), secs, runs, "inconclusive"))
            continue
        v = classify_refinement(levels, times, rule=budget.rule, margin=budget.margin)
        within = None if v.estimate is None else bool(v.estimate <= bound)
        verdict, reason = v.verdict, v.reason
        if predicted == OPEN:
            verdict, reason = OPEN, f"numerical tendency {v.verdict}, not an established regime ({v.reason})"
        rows.append(ScanRow(family, a, verdict, predicted, v.exponent, v.estimate, bound, route, within,
                            times, list(budget.levels), reason, secs, runs, v.verdict))
    return rows


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))
