"""Weak-form residuals and mass-monotonicity checks on trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from ..errors import DomainError
from ..kernels import Kernel
from ..spectrum import MassSpectrum, Trajectory
from .testfunctions import TestFunction


@dataclass
class Residual:
    value: float          # left side minus right side
    lhs: float
    rhs: float
    collision_magnitude: float  # ∫_0^t ∫∫ |Δψ| K f f, finite when the weak form makes sense


def _collision_matrix(traj: Trajectory, kernel: Kernel, psi: TestFunction):
    m = traj.masses
    with np.errstate(over="ignore", invalid="ignore"):
        K = kernel.evaluate(m[:, None], m[None, :])
    D = psi.delta(m[:, None], m[None, :])
    K = np.where(np.isfinite(K), K, 0.0)
    return D * K, np.abs(D) * K


def weak_form_residual(traj: Trajectory, kernel: Kernel, psi: TestFunction, t: float) -> Residual:
    """``∫ψ f_t - ∫ψ f_0 - (1/2)∫_0^t ∫∫ Δψ K f_s f_s ds``.

    Sums over the discrete support are exact; the time integral is the
    trapezoidal rule over the snapshots (concentrations are interpolated
    linearly when ``t`` falls between two snapshots).
    """
    times = traj.times
    if t < 0 or t > times[-1] * (1 + 1e-12):
        raise DomainError(f"t={t} lies outside the trajectory horizon [0, {times[-1]}]")
    DK, AK = _collision_matrix(traj, kernel, psi)
    C = traj.conc
    k = int(np.searchsorted(times, t, side="right"))
    ts = list(times[:k])
    cs = [C[i] for i in range(k)]
    if ts[-1] < t:
        i = k  # times[k-1] < t < times[k]
        w = (t - times[i - 1]) / (times[i] - times[i - 1])
        ts.append(t)
        cs.append((1 - w) * C[i - 1] + w * C[i])
    ts = np.array(ts)
    cs = np.array(cs)
    Q = np.einsum("ti,ij,tj->t", cs, DK, cs)
    A = np.einsum("ti,ij,tj->t", cs, AK, cs)
    integral = float(trapezoid(Q, ts)) if ts.size > 1 else 0.0
    mag = float(trapezoid(A, ts)) if ts.size > 1 else 0.0
    psi_m = psi(traj.masses)
    lhs = float(psi_m @ cs[-1])
    rhs = float(psi_m @ cs[0]) + 0.5 * integral
    return Residual(lhs - rhs, lhs, rhs, 0.5 * mag)


@dataclass
class MassCheck:
    passed: bool
    max_violation: float  # max over time of M1(t)/M1(0) - 1, clipped at 0


def monotone_mass_check(traj: Trajectory, tol: float = 1e-9) -> MassCheck:
    """``M1(f_t) <= M1(f_0)(1 + tol)`` on every recorded time (moment series and snapshots)."""
    if len(traj) == 0:
        raise DomainError("empty trajectory")
    m_series = traj.moments[:, 2]
    m_snap = traj.conc @ traj.masses if np.all(np.isfinite(traj.masses)) else m_series
    m0 = float(m_series[0])
    top = max(float(np.max(m_series)), float(np.max(m_snap)))
    viol = max(top / m0 - 1.0, 0.0) if m0 > 0 else (top if top > 0 else 0.0)
    return MassCheck(viol <= tol, viol)


def jensen_gap(spec: MassSpectrum, M1_0: float, a_grid) -> float:
    """Largest value of ``∫_0^a y log(e+y) f - A log(e + ∫_0^a y^2 f / A)`` over ``a``.

    With ``A = max(M1_0, M1(f))`` the inequality says the result is ``<= 0``.
    """
    m = spec.support()
    c = np.array([spec[x] for x in m])
    A = max(M1_0, spec.M1)
    worst = -math.inf
    for a in np.asarray(a_grid, dtype=float):
        sel = m <= a
        left = float(np.sum(m[sel] * np.log(math.e + m[sel]) * c[sel]))
        right = A * math.log(math.e + float(np.sum(m[sel] ** 2 * c[sel])) / A)
        worst = max(worst, left - right)
    return worst


# ---------------------------------------------------------------------------
# golden trajectories


@dataclass
class WeakFormCase:
    name: str
    kernel: Kernel
    trajectory: Trajectory
    t: float
    tol: float


def golden_cases(tol: float) -> list[WeakFormCase]:
    """Reference runs for the residual suite, sampled on a uniform grid of spacing ``sqrt(tol)``.

    The trapezoidal time integral is second order in the spacing, so with
    this sampling its error is of the same size as the solver tolerance.
    """
    from ..cascade import integrate_cascade
    from ..grid import integrate_grid
    from ..kernels import constant, k0_log, multiplicative
    from ..spectrum import MassSpectrum

    def grid_of(t):
        n = int(math.ceil(t / math.sqrt(tol)))
        return np.linspace(0.0, t, n + 1)[1:]

    d = MassSpectrum.dirac(1.0)
    out = []
    k = constant(2.0)
    out.append(WeakFormCase("grid constant", k, integrate_grid(k, d, 128, 1.0, tol, t_out=grid_of(1.0)).trajectory,
                            1.0, tol))
    k = multiplicative()
    out.append(WeakFormCase("grid multiplicative", k,
                            integrate_grid(k, d, 256, 0.5, tol, t_out=grid_of(0.5)).trajectory, 0.5, tol))
    k = k0_log(2.0)
    out.append(WeakFormCase("cascade alpha=2", k,
                            integrate_cascade(2.0, 2.0, 30, tol, t_out=grid_of(2.0)).trajectory, 2.0, tol))
    return out


def residual_table(tol: float, a_values=(0.5, 4.0, 64.0)) -> list[tuple[str, str, float]]:
    """``(case, test function, |residual|)`` over the golden cases and the ψ catalog."""
    from .testfunctions import catalog

    rows = []
    for case in golden_cases(tol):
        for a in a_values:
            for psi in catalog(a):
                r = weak_form_residual(case.trajectory, case.kernel, psi, case.t)
                rows.append((case.name, psi.render(), abs(r.value)))
    return rows
