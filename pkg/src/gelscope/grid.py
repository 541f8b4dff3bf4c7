"""Discrete Smoluchowski equation on integer masses ``1..N_max``.

    dc_n/dt = (1/2) Σ_{k<n} K(k, n-k) c_k c_{n-k} - c_n Σ_{k<=N_max} K(n, k) c_k

Coagulations that would create a cluster heavier than ``N_max`` remove both
partners; their mass is booked on the ``lost`` ledger so that tracked mass
plus lost mass is conserved exactly.  Loss of tracked mass is the gelation
observable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import convolution, ode
from .errors import DomainError, GelscopeError
from .kernels import Kernel, log_e
from .spectrum import MassSpectrum, Trajectory


# ---------------------------------------------------------------------------
# right-hand side


class _Rhs:
    """Gain/loss evaluator specialised to one kernel on ``1..N``.

    ``strategy`` is ``"product"`` (sum of ``w(x)w(y)``-type terms, one full
    convolution each), ``"minmax"`` (terms ``φ(x∧y)χ(x∨y)``, one half
    convolution each), ``"diagonal"`` or ``"dense"`` (explicit ``N x N`` matrix).
    """

    def __init__(self, kernel: Kernel, N: int):
        self.kernel = kernel
        self.N = N
        n = np.arange(1, N + 1, dtype=float)
        self.n = n
        f = kernel.family
        self.product_terms = None
        self.minmax_terms = None
        self.diag = kernel.diagonal_rate(n)
        if f == "constant":
            c = kernel.p("c")
            self.strategy = "product"
            self.product_terms = [(np.full(N, math.sqrt(c)), np.full(N, math.sqrt(c)))]
        elif f == "additive":
            self.strategy = "product"
            one = np.ones(N)
            self.product_terms = [(n, one), (one, n)]
        elif f == "multiplicative":
            self.strategy = "product"
            self.product_terms = [(n, n)]
        elif f == "prodpow":
            w = n ** (0.5 * kernel.p("gamma"))
            self.strategy = "product"
            self.product_terms = [(w, w)]
        elif f == "minpow":
            g, th = kernel.p("gamma"), kernel.p("theta")
            self.strategy = "minmax"
            self.minmax_terms = [(n ** (g + th), n ** (-th))]
        elif f == "sqrtlog":
            w = np.sqrt(n) * log_e(n) ** (0.5 * kernel.p("alpha"))
            self.strategy = "product"
            self.product_terms = [(w, w)]
        elif f == "k1log":
            L = log_e(n) ** kernel.p("alpha")
            self.strategy = "minmax"
            self.minmax_terms = [(n * L, np.ones(N)), (L, n)]
        elif f == "diagonal":
            self.strategy = "diagonal"
        else:
            self.strategy = "dense"
            self.matrix = _dense_matrix(kernel, N)

    def __call__(self, c: np.ndarray) -> tuple[np.ndarray, float]:
        """Return ``(dc/dt, boundary mass flux)``."""
        N = self.N
        n = self.n
        c = np.asarray(c, dtype=float)
        if self.strategy == "product":
            # K(x, y) = (1/2) Σ [u(x)v(y) + u(y)v(x)]
            gain_full = np.zeros(2 * N - 1)
            rate = np.zeros(N)
            for u, v in self.product_terms:
                uc, vc = u * c, v * c
                gain_full += 0.5 * convolution.full(uc, vc) if u is not v else 0.5 * convolution.full(uc, uc)
                if u is v:
                    rate += u * uc.sum()
                else:
                    rate += 0.5 * (u * vc.sum() + v * uc.sum())
            gain_full = np.maximum(gain_full, 0.0)
            loss = c * rate
        elif self.strategy == "minmax":
            gain_full = np.zeros(2 * N - 1)
            rate = np.zeros(N)
            for phi, chi in self.minmax_terms:
                a, b = phi * c, chi * c
                gain_full += convolution.half(a, b)
                # Σ_{k<n} φ(k)c_k χ(n) + Σ_{k>n} φ(n) χ(k) c_k
                below = np.concatenate(([0.0], np.cumsum(a)[:-1]))
                above = np.concatenate((np.cumsum(b[::-1])[::-1][1:], [0.0]))
                rate += chi * below + phi * above
            gain_full[::2] += 0.5 * self.diag * c * c  # masses 2k: index 2k-2
            rate += self.diag * c
            gain_full = np.maximum(gain_full, 0.0)
            loss = c * rate
        elif self.strategy == "diagonal":
            q = self.diag * c * c
            gain_full = np.zeros(2 * N - 1)
            gain_full[::2] = 0.5 * q
            loss = q
        else:
            M = self.matrix
            rate = M @ c
            loss = c * rate
            P = M * np.outer(c, c)
            idx = _antidiag_index(N)
            gain_full = 0.5 * np.bincount(idx, weights=P.ravel(), minlength=2 * N - 1)
        # gain_full[j] is the gain at mass j + 2
        dc = -loss
        dc[1:] += gain_full[: N - 1]
        tail = gain_full[N - 1:]
        flux = float(np.dot(np.arange(N + 1, 2 * N + 1, dtype=float), tail))
        return dc, flux


def _dense_matrix(kernel: Kernel, N: int) -> np.ndarray:
    if N > 4096:
        raise GelscopeError(f"dense kernel matrix for N_max={N} is too large; kernel {kernel} has no fast path")
    n = np.arange(1, N + 1, dtype=float)
    return kernel.evaluate(n[:, None], n[None, :])


@lru_cache(maxsize=4)
def _antidiag_index(N: int) -> np.ndarray:
    i = np.arange(N)
    return (i[:, None] + i[None, :]).ravel()


def smoluchowski_rhs(spectrum: MassSpectrum, kernel: Kernel, N_max: int) -> tuple[MassSpectrum, float]:
    """Rate of change on ``1..N_max`` and the mass flux past ``N_max``.

    The rate is returned as a spectrum-shaped map (entries may be negative,
    so it is given as a plain ``dict`` wrapped in masses/values arrays).
    """
    c = spectrum.to_dense(N_max)
    dc, flux = _Rhs(kernel, N_max)(c)
    return RateMap(np.arange(1, N_max + 1, dtype=float), dc), flux


@dataclass(frozen=True)
class RateMap:
    masses: np.ndarray
    values: np.ndarray

    def __getitem__(self, mass):
        return float(self.values[int(mass) - 1])

    def as_dict(self) -> dict[float, float]:
        return {float(m): float(v) for m, v in zip(self.masses, self.values) if v != 0}


# ---------------------------------------------------------------------------
# integration


@dataclass
class GridRun:
    kernel: Kernel
    N_max: int
    tol: float
    trajectory: Trajectory
    stats: ode.StepStats
    loss_time: float | None = None
    stopped_early: bool = False

    @property
    def moments(self) -> np.ndarray:
        return self.trajectory.moments


def integrate_grid(
    kernel: Kernel,
    f0: MassSpectrum,
    N_max: int,
    t_end: float,
    tol: float = 1e-8,
    *,
    t_out=None,
    snapshots: str = "out",
    loss_threshold: float | None = None,
    atol: float | None = None,
    max_steps: int = 2_000_000,
) -> GridRun:
    """Integrate the truncated discrete system from ``f0`` up to ``t_end``.

    Moments are recorded at every accepted step.  Full concentration
    snapshots are kept at ``t = 0``, ``t_end`` and the times in ``t_out``
    (``snapshots="out"``), at every step (``"all"``), or only at the ends
    (``"ends"``).  With ``loss_threshold`` the run stops once tracked mass
    falls below ``M1(f0) (1 - loss_threshold)``.
    """
    if N_max < 1:
        raise DomainError("N_max must be positive")
    if not (t_end > 0 and math.isfinite(t_end)):
        raise DomainError("t_end must be positive and finite")
    if not tol > 0:
        raise DomainError("tol must be positive")
    c0 = f0.to_dense(N_max)
    rhs_core = _Rhs(kernel, N_max)
    m1_0 = float(np.dot(rhs_core.n, c0))

    def rhs(t, y):
        dc, flux = rhs_core(y[:-1])
        out = np.empty_like(y)
        out[:-1] = dc
        out[-1] = flux
        return out

    n = rhs_core.n
    logw = n * np.log(math.e + n)
    out_set = set() if t_out is None else {float(s) for s in t_out}
    y0 = np.concatenate((c0, [f0.lost_mass]))
    mom = [_moment_row(0.0, y0, n, logw)]
    snap_t = [0.0]
    snap_y = [y0.copy()]
    state = {"loss": None, "stop": False}

    def on_step(t, y):
        mom.append(_moment_row(t, y, n, logw))
        if snapshots == "all" or (snapshots == "out" and t in out_set):
            snap_t.append(t)
            snap_y.append(y.copy())
        if loss_threshold is not None and state["loss"] is None:
            level = m1_0 * (1.0 - loss_threshold)
            if mom[-1][2] < level:
                t0, m_prev = mom[-2][0], mom[-2][2]
                m_now = mom[-1][2]
                state["loss"] = float(t0 + (t - t0) * (m_prev - level) / (m_prev - m_now))
                state["stop"] = True
                return True
        return None

    t_last, y_last, stats = ode.integrate(
        rhs, y0, t_end, rtol=tol, atol=tol * 1e-6 * max(m1_0, 1e-300) / N_max if atol is None else atol,
        t_out=t_out, on_step=on_step, max_steps=max_steps,
    )
    if snap_t[-1] != t_last:
        snap_t.append(t_last)
        snap_y.append(y_last.copy())
    Y = np.array(snap_y)
    traj = Trajectory(np.array(snap_t), n, Y[:, :-1], Y[:, -1], moments=np.array(mom))
    traj.meta.update(solver="grid", kernel=kernel.render(), N_max=N_max, tol=tol)
    return GridRun(kernel, N_max, tol, traj, stats, state["loss"], state["stop"])


def _moment_row(t, y, n, logw):
    c = y[:-1]
    return (t, float(c.sum()), float(n @ c), float((n * n) @ c), float(logw @ c), float(y[-1]))


# ---------------------------------------------------------------------------
# closed forms used as oracles


def constant_kernel_solution(t, n, K: float = 2.0):
    """``c_n(t)`` for ``K = 2`` from ``δ_1``: ``t^{n-1} / (1 + t)^{n+1}`` (time rescaled for other K)."""
    s = np.asarray(t, dtype=float) * K / 2.0
    n = np.asarray(n, dtype=float)
    return s ** (n - 1) / (1.0 + s) ** (n + 1)


# ---------------------------------------------------------------------------
# blow-up and gel-time estimation


@dataclass
class BlowupEstimate:
    blowup: bool
    time: float | None = None
    interval: tuple[float, float] | None = None
    n_fit: int = 0


def estimate_blowup_time(t, M2, window: float = 0.2, min_points: int = 10) -> BlowupEstimate:
    """Root of a straight-line fit of ``1/M2`` against ``t`` over the final part of the series.

    The fit uses the last ``window`` fraction of the samples (at least
    ``min_points``).  The interval is the root ± two standard errors from the
    fit residuals (delta method).  Bounded or non-growing series give
    ``blowup=False``, as do roots lying more than two window lengths past the
    last sample: a straight line through a saturating ``1/M2`` always has a
    root somewhere, but extrapolating that far says nothing.
    """
    t = np.asarray(t, dtype=float)
    m2 = np.asarray(M2, dtype=float)
    if t.size != m2.size:
        raise DomainError("t and M2 must have equal length")
    if t.size < min_points or not np.all(np.isfinite(m2)) or np.any(m2 <= 0):
        return BlowupEstimate(False)
    k = max(min_points, int(math.ceil(window * t.size)))
    ts, ys = t[-k:], 1.0 / m2[-k:]
    if np.any(np.diff(m2[-k:]) < 0) or m2[-1] < 1.5 * m2[-k]:
        return BlowupEstimate(False, n_fit=k)
    X = np.column_stack((np.ones(k), ts))
    coef, *_ = np.linalg.lstsq(X, ys, rcond=None)
    a, b = coef
    if not b < 0:
        return BlowupEstimate(False, n_fit=k)
    root = -a / b
    if root > ts[-1] + 2.0 * (ts[-1] - ts[0]):
        return BlowupEstimate(False, n_fit=k)
    resid = ys - X @ coef
    dof = max(k - 2, 1)
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(X.T @ X)
    # gradient of -a/b with respect to (a, b)
    grad = np.array([-1.0 / b, a / b**2])
    se = math.sqrt(max(float(grad @ cov @ grad), 0.0))
    return BlowupEstimate(True, float(root), (float(root - 2 * se), float(root + 2 * se)), k)


@dataclass
class RefinementVerdict:
    """Outcome of a refinement study: ``"gel"``, ``"conserve"`` or ``"inconclusive"``."""

    verdict: str
    exponent: float | None
    estimate: float | None
    interval: tuple[float, float] | None
    loss_times: list
    levels: list
    reason: str
    drift: float | None = None


def _phi(L: np.ndarray, beta: float) -> np.ndarray:
    # (1 - L^-β) / β, continuous at β = 0 where it equals log L
    lnL = np.log(L)
    if abs(beta) < 1e-12:
        return lnL
    return -np.expm1(-beta * lnL) / beta


def convergence_exponent(levels, times) -> float | None:
    """Exponent ``β`` of the model ``T(L) = T∞ - b L^{-β}`` through the last three points.

    ``β > 0`` means the sequence has a finite limit; ``β <= 0`` means it
    grows without bound.  Returns ``None`` when the increments do not have a
    common sign.
    """
    L = np.asarray(levels[-3:], dtype=float)
    L = L / L[0]  # the model is invariant under rescaling L; this keeps L^-β representable
    T = np.asarray(times[-3:], dtype=float)
    d1, d2 = T[1] - T[0], T[2] - T[1]
    if d1 == 0 or d2 / d1 <= 0:
        return None
    rho = d2 / d1

    def g(beta):
        p = _phi(L, beta)
        return (p[2] - p[1]) / (p[1] - p[0]) - rho

    lo, hi = -8.0, 20.0
    if g(lo) < 0:
        return lo
    if g(hi) > 0:
        return hi
    from scipy.optimize import brentq

    return float(brentq(g, lo, hi, xtol=1e-10))


def classify_refinement(levels, loss_times, *, rule: str = "exponent", margin: float | None = None,
                        min_levels: int = 3) -> RefinementVerdict:
    """Gel/conserve decision from loss times over increasing refinement.

    ``levels`` measure the reachable mass scale (``log N_max`` for the grid,
    ``n_max`` for the cascade); ``loss_times`` hold ``None`` for censored
    runs (no loss before the horizon).

    ``rule="exponent"`` (default, margin 0.1) fits ``T(L) = T∞ - b L^{-β}``
    and calls gel when ``β > margin``.  ``rule="drift"`` (margin 0.05) calls
    gel when the last relative increment is below the margin.
    Censoring at a finer level than a completed run means the loss time has
    moved past the horizon: conserve.
    """
    if rule not in ("exponent", "drift"):
        raise DomainError(f"unknown rule {rule!r}")
    if margin is None:
        margin = 0.1 if rule == "exponent" else 0.05
    levels = [float(v) for v in levels]
    if len(levels) != len(loss_times):
        raise DomainError("levels and loss_times differ in length")
    if len(levels) < min_levels:
        raise DomainError(f"need at least {min_levels} refinement levels")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise DomainError("levels must increase")

    def verdict(v, reason, beta=None, est=None, iv=None, drift=None):
        return RefinementVerdict(v, beta, est, iv, list(loss_times), levels, reason, drift)

    done = [s is not None for s in loss_times]
    if not any(done):
        return verdict("conserve", "no mass loss before the horizon at any refinement")
    if not all(done):
        first = done.index(True)
        if any(not d for d in done[first:]):
            return verdict("conserve", "loss time moved past the horizon under refinement")
        return verdict("inconclusive", "coarse levels censored but fine levels lose mass")
    T = np.array(loss_times, dtype=float)
    drift = float((T[-1] - T[-2]) / T[-2])
    if rule == "drift":
        if abs(drift) < margin:
            return verdict("gel", f"last drift {drift:.3g} below {margin}", est=float(T[-1]), drift=drift)
        return verdict("conserve", f"last drift {drift:.3g} at or above {margin}", drift=drift)
    beta = convergence_exponent(levels, T)
    if beta is None:
        if abs(drift) < 1e-3:
            return verdict("gel", "loss times already converged", est=float(T[-1]),
                           iv=(float(T.min()), float(T.max())), drift=drift)
        return verdict("inconclusive", "loss-time increments change sign", drift=drift)
    if beta <= margin:
        return verdict("conserve", f"exponent {beta:.3g} <= {margin}: loss times grow without bound",
                       beta=beta, drift=drift)
    L = np.array(levels[-2:]) / levels[-2]
    d = T[-1] - T[-2]
    p = _phi(L, beta)
    # T∞ - T_last = b L_last^{-β}, with b fixed by the last increment
    b = d / (beta * (p[1] - p[0])) if beta != 0 else d / (p[1] - p[0])
    est = float(T[-1] + b * L[-1] ** (-beta))
    iv = (float(T[-1]), est) if est >= T[-1] else (est, float(T[-1]))
    return verdict("gel", f"exponent {beta:.3g} > {margin}: loss times converge", beta=beta, est=est,
                   iv=iv, drift=drift)


def estimate_gel_time(runs: list[GridRun], threshold: float = 1e-3, *, rule: str = "exponent",
                      margin: float | None = None) -> RefinementVerdict:
    """Gel-time estimate from a family of runs over increasing ``N_max``.

    Loss times are recomputed from each run's moment series at the given
    threshold; refinement is measured in ``log N_max``.
    """
    if len(runs) < 3:
        raise DomainError("need at least 3 runs")
    ref = runs[0]
    f0 = ref.trajectory.initial
    for r in runs[1:]:
        if r.kernel != ref.kernel:
            raise DomainError("runs use different kernels")
        if abs(r.trajectory.moments[0, 2] - ref.trajectory.moments[0, 2]) > 1e-12 * max(1.0, f0.M1):
            raise DomainError("runs start from different initial data")
    runs = sorted(runs, key=lambda r: r.N_max)
    times = [loss_time_from_moments(r.moments, threshold) for r in runs]
    return classify_refinement([math.log(r.N_max) for r in runs], times, rule=rule, margin=margin)


def loss_time_from_moments(moments: np.ndarray, threshold: float) -> float | None:
    """First time tracked ``M1`` falls below ``M1(0)(1 - threshold)`` (linear interpolation)."""
    t, m1 = moments[:, 0], moments[:, 2]
    level = m1[0] * (1.0 - threshold)
    idx = np.nonzero(m1 < level)[0]
    if idx.size == 0:
        return None
    i = int(idx[0])
    if i == 0:
        return 0.0
    t0, t1, a, b = t[i - 1], t[i], m1[i - 1], m1[i]
    return float(t0 + (t1 - t0) * (a - level) / (a - b))
