"""Explicit gel-time bounds and cascade bounds.

Two routes bound the gelation time of every weak solution:

* the box route, through ``H(a) = a inf{K(x, y) : x, y in [a, r a]}`` and
  ``κ = ∫_{x0}^∞ H(a)^{-1/2} da``::

      T_gel <= 2 κ^2 (r / (r - 1))^2 M1(f0) / [∫_{x0}^∞ (x - x0) f0(dx)]^2

* the test-function route for ``K >= (x + y) log^α(e + x∧y)`` with ``α > 1``::

      T_gel <= C / M1(f0)^2,   C = 2 κ_ψ ∫ x (1 + |log x| 1{x<1}) f0(dx)

  where ``κ_ψ = sup_x ψ(x) / (x (1 + |log x| 1{x<1}))`` and
  ``ψ(x) = x ∫_x^∞ du / ((u/2) log^α(e + u/2))``.

Whether ``κ`` is finite is decided from the kernel family, never from a
truncated numerical integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .errors import DomainError, HypothesisError, ToleranceNotMetError, UndecidableConvergenceError
from .kernels import E, Kernel, infimum_on_box
from .spectrum import MassSpectrum

TAIL_SPLIT = 1e6


@dataclass(frozen=True)
class BoundSpec:
    x0: float
    r: float
    quad_tol: float = 1e-10

    def __post_init__(self):
        if not (self.x0 > 0 and math.isfinite(self.x0)):
            raise DomainError(f"x0 must be positive, got {self.x0}")
        if not (self.r > 1 and math.isfinite(self.r)):
            raise DomainError(f"r must exceed 1, got {self.r}")
        if not self.quad_tol > 0:
            raise DomainError("quadrature tolerance must be positive")


@dataclass
class GelBoundReport:
    kappa: float
    tgel_upper: float
    route: str
    M1: float
    excess_above_x0: float = math.nan
    weight_integral: float = math.nan
    H_profile: list[tuple[float, float]] = field(default_factory=list)
    x0: float = math.nan
    r: float = math.nan
    kappa_error: float = 0.0

    def as_row(self, kernel: Kernel) -> dict:
        return {
            "kernel": kernel.render(), "x0": self.x0, "r": self.r,
            "kappa": self.kappa, "tgel_bound": self.tgel_upper, "route": self.route,
        }


@dataclass
class CascadeBounds:
    alpha: float
    bn: np.ndarray
    A: float
    B: float


# ---------------------------------------------------------------------------
# H and κ


def compute_H(kernel: Kernel, a: float, spec: BoundSpec) -> float:
    """``H(a) = a · inf{K(x, y) : x, y in [a, r a]}``."""
    if not a > 0:
        raise DomainError("a must be positive")
    return a * infimum_on_box(kernel, a, spec.r)


@dataclass(frozen=True)
class _Growth:
    """Large-``a`` form of ``H``: ``coef · a^power · log^logpow(e + a)`` (exact, not asymptotic)."""

    coef: float
    power: float
    logpow: float = 0.0

    @property
    def converges(self) -> bool:
        if self.coef <= 0:
            return False
        # ∫ a^{-p/2} log^{-q/2} da converges iff p > 2, or p == 2 and q > 2
        return self.power > 2 or (self.power == 2 and self.logpow > 2)


def _growth(kernel: Kernel, r: float) -> _Growth:
    f = kernel.family
    if f == "constant":
        return _Growth(kernel.p("c"), 1.0)
    if f == "additive":
        return _Growth(2.0, 2.0)
    if f == "multiplicative":
        return _Growth(1.0, 3.0)
    if f == "prodpow":
        return _Growth(1.0, 1.0 + kernel.p("gamma"))
    if f in ("minpow", "mingap"):
        return _Growth(infimum_on_box(kernel, 1.0, r), 1.0 + kernel.p("gamma"))
    if f == "k0log":
        return _Growth(max(1.0 / r - 0.5, 0.0), 2.0, kernel.p("alpha"))
    if f == "k1log":
        return _Growth(2.0, 2.0, kernel.p("alpha"))
    if f == "sqrtlog":
        return _Growth(1.0, 2.0, kernel.p("alpha"))
    if f == "diagonal":
        return _Growth(0.0, 1.0)
    raise UndecidableConvergenceError(
        f"cannot classify the tail of H for kernel {kernel}; supply a catalog kernel"
    )


def kappa_is_finite(kernel: Kernel, spec: BoundSpec) -> bool:
    return _growth(kernel, spec.r).converges


@dataclass(frozen=True)
class KappaResult:
    value: float
    abserr: float


def compute_kappa(kernel: Kernel, spec: BoundSpec) -> float:
    """``κ = ∫_{x0}^∞ H(a)^{-1/2} da`` or ``+inf``."""
    return compute_kappa_certified(kernel, spec).value


def compute_kappa_certified(kernel: Kernel, spec: BoundSpec) -> KappaResult:
    g = _growth(kernel, spec.r)
    if not g.converges:
        return KappaResult(math.inf, 0.0)
    x0, tol = spec.x0, spec.quad_tol
    split = max(x0, TAIL_SPLIT)

    def integrand_log(v):
        # a = e^v, da = a dv
        a = math.exp(v)
        return a / math.sqrt(compute_H(kernel, a, spec))

    head, head_err = 0.0, 0.0
    if split > x0:
        head, head_err = integrate.quad(integrand_log, math.log(x0), math.log(split),
                                        epsabs=0.0, epsrel=tol / 10, limit=400)
    if g.logpow == 0:
        # H = coef a^p exactly for catalog power families
        p = g.power
        tail = g.coef ** -0.5 * split ** (1 - p / 2) / (p / 2 - 1)
        tail_err = 0.0
    else:
        def tail_log(v):
            # log(e + e^v) = v + log1p(e^{1-v}), kept in v to avoid overflow
            return 1.0 / math.sqrt(g.coef * _log_e_exp(v) ** g.logpow)

        tail, tail_err = integrate.quad(tail_log, math.log(split), math.inf,
                                        epsabs=0.0, epsrel=tol / 10, limit=400)
    value = head + tail
    err = head_err + tail_err
    if err > tol * value:
        raise ToleranceNotMetError(f"kappa quadrature error {err:.3g} exceeds tolerance", estimate=value)
    return KappaResult(value, err)


# ---------------------------------------------------------------------------
# box route


def _check_f0(f0: MassSpectrum) -> float:
    m1 = f0.M1
    if not math.isfinite(m1):
        raise HypothesisError("M1(f0) must be finite")
    return m1


def gel_time_bound(kernel: Kernel, f0: MassSpectrum, spec: BoundSpec,
                   profile_points: int = 25) -> GelBoundReport:
    """Box-route upper bound on the gelation time."""
    m1 = _check_f0(f0)
    if f0.mass_above(spec.x0) <= 0:
        raise HypothesisError(f"f0 puts no mass above x0={spec.x0}; the bound does not apply")
    excess = f0.excess_mass_above(spec.x0)
    res = compute_kappa_certified(kernel, spec)
    kappa = res.value
    if math.isinf(kappa):
        t = math.inf
    else:
        t = 2.0 * kappa**2 * (spec.r / (spec.r - 1)) ** 2 * m1 / excess**2
    grid = np.geomspace(spec.x0, max(spec.x0, 1.0) * 1e6, profile_points)
    prof = [(float(a), compute_H(kernel, float(a), spec)) for a in grid]
    return GelBoundReport(kappa=kappa, tgel_upper=t, route="theorem-2.3", M1=m1,
                          excess_above_x0=excess, H_profile=prof, x0=spec.x0, r=spec.r,
                          kappa_error=res.abserr)


def optimize_box_bound(kernel: Kernel, f0: MassSpectrum, x0_grid=None, r_grid=None,
                       quad_tol: float = 1e-8) -> GelBoundReport:
    """Coarse grid search over ``(x0, r)`` for the smallest box-route bound.

    A convenience for exploring the free parameters; the grid is coarse and
    the result is only the best point visited.
    """
    top = float(f0.support().max())
    if x0_grid is None:
        x0_grid = top * np.array([0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
    if r_grid is None:
        r_grid = np.array([1.1, 1.25, 1.5, 1.75, 1.9, 2.0, 3.0, 4.0])
    best = None
    for x0 in x0_grid:
        for r in r_grid:
            try:
                rep = gel_time_bound(kernel, f0, BoundSpec(float(x0), float(r), quad_tol), profile_points=2)
            except (HypothesisError, ToleranceNotMetError):
                continue
            if best is None or rep.tgel_upper < best.tgel_upper:
                best = rep
    if best is None:
        raise HypothesisError("no admissible (x0, r) on the search grid")
    return best


# ---------------------------------------------------------------------------
# cascade bounds


def cascade_bound_sequence(alpha: float, n_max: int) -> CascadeBounds:
    """``b_n = log^{α/2}(e+1) / (2^n log^{α/2}(e+2^n))``, ``A = log(e+1)``, ``B = log 2 · log^{α-1}(e+1)``."""
    if not (0 < alpha <= 2):
        raise DomainError("the cascade bounds hold for alpha in (0, 2]")
    if n_max < 0:
        raise DomainError("n_max must be nonnegative")
    n = np.arange(n_max + 1)
    l1 = math.log(E + 1.0)
    ln = n * math.log(2.0) + np.log1p(E * np.ldexp(1.0, -n))  # log(e + 2^n) without forming 2^n
    bn = l1 ** (alpha / 2) * np.ldexp(1.0, -n) / ln ** (alpha / 2)
    bn[0] = 1.0
    A = l1
    B = math.log(2.0) * l1 ** (alpha - 1)
    return CascadeBounds(alpha, bn, A, B)


def moment_envelope(bounds: CascadeBounds, t):
    """``A e^{B t}``, the bound on ``∫ x log(e + x) f_t(dx)``."""
    return bounds.A * np.exp(bounds.B * np.asarray(t, dtype=float))


# ---------------------------------------------------------------------------
# test-function route for additive-log kernels


def _log_e_exp(w: float) -> float:
    """``log(e + e^w)`` without overflow for large ``w``."""
    return w + math.log1p(math.exp(1.0 - w)) if w > 1 else math.log(E + math.exp(w))


def log_tail_integral(y, alpha: float):
    """``J(y) = ∫_y^∞ dv / (v log^α(e + v))`` for ``alpha > 1`` (scalar)."""
    if not alpha > 1:
        raise DomainError("J diverges for alpha <= 1")
    y = float(y)

    def f(w):
        return _log_e_exp(w) ** -alpha

    val, _ = integrate.quad(f, math.log(y), math.inf, epsabs=0.0, epsrel=1e-12, limit=400)
    return val


def psi_limit(x, alpha: float):
    """``ψ_∞(x) = x ∫_x^∞ du / ((u/2) log^α(e + u/2)) = 2 x J(x/2)``."""
    return 2.0 * float(x) * log_tail_integral(0.5 * float(x), alpha)


def weight(x):
    """``x (1 + |log x| 1{x<1})``."""
    x = np.asarray(x, dtype=float)
    return x * (1.0 + np.where(x < 1, -np.log(np.minimum(x, 1.0)), 0.0))


_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def _J_on_grid(y: np.ndarray, alpha: float) -> np.ndarray:
    """``J`` on an increasing grid by summing Gauss-Legendre panels downward in ``log v``."""
    w = np.log(y)
    lo, hi = w[:-1], w[1:]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    nodes = mid[:, None] + half[:, None] * _GL_X[None, :]
    vals = np.log(E + np.exp(nodes)) ** -alpha
    panels = half * (vals @ _GL_W)
    J = np.empty_like(y)
    J[-1] = log_tail_integral(y[-1], alpha)
    J[:-1] = J[-1] + np.cumsum(panels[::-1])[::-1]
    return J


@dataclass
class PsiConstant:
    kappa_psi: float
    argmax: float
    grid_max: float


def psi_constant(alpha: float, lo: float = 1e-8, hi: float = 1e8, per_decade: int = 400) -> PsiConstant:
    """``κ_ψ = sup_{x>0} ψ_∞(x) / (x (1 + |log x| 1{x<1}))``.

    Maximised on a log grid then refined locally; the ratio tends to 2 as
    ``x -> 0`` and to 0 as ``x -> ∞``, so the ``x -> 0`` limit is folded in.
    """
    if not alpha > 1:
        raise DomainError("alpha must exceed 1")
    decades = math.log10(hi) - math.log10(lo)
    x = np.logspace(math.log10(lo), math.log10(hi), int(round(decades * per_decade)) + 1)
    ratio = 2.0 * x * _J_on_grid(0.5 * x, alpha) / weight(x)
    i = int(np.argmax(ratio))
    grid_max = float(ratio[i])
    best_x, best = float(x[i]), grid_max
    if 0 < i < x.size - 1:
        res = optimize.minimize_scalar(
            lambda s: -psi_limit(math.exp(s), alpha) / float(weight(math.exp(s))),
            bounds=(math.log(x[i - 1]), math.log(x[i + 1])), method="bounded",
            options={"xatol": 1e-10},
        )
        if -res.fun > best:
            best, best_x = float(-res.fun), float(math.exp(res.x))
    return PsiConstant(max(best, 2.0), best_x, grid_max)


def additive_gel_bound(alpha: float, f0: MassSpectrum) -> GelBoundReport:
    """Test-function route: ``T_gel <= C / M1(f0)^2``."""
    if not alpha > 1:
        raise DomainError("the additive-log gel bound needs alpha > 1")
    m1 = _check_f0(f0)
    if not m1 > 0:
        raise HypothesisError("M1(f0) must be positive")
    w = f0.integrate(weight)
    if not math.isfinite(w):
        raise HypothesisError("∫ x |log x| f0(dx) over (0, 1) must be finite")
    kp = psi_constant(alpha).kappa_psi
    C = 2.0 * kp * w
    return GelBoundReport(kappa=kp, tgel_upper=C / m1**2, route="prop-3.4ii", M1=m1,
                          weight_integral=w)
