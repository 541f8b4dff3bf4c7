"""Invariant suite behind ``gelscope check``.

Every check returns a :class:`CheckResult`; the suite never raises on a
failed property, it reports it.  ``full=True`` adds the criticality scan.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .. import kernels as K
from ..bounds import BoundSpec, additive_gel_bound, cascade_bound_sequence, compute_kappa, gel_time_bound, moment_envelope
from ..cascade import exact_c0, integrate_cascade
from ..grid import constant_kernel_solution, estimate_blowup_time, integrate_grid
from ..mlsim import gel_time_estimate, replicate, simulate
from ..spectrum import MassSpectrum
from .config import RunConfig
from .experiment import run_experiment
from .scan import criticality_scan
from .weakform import monotone_mass_check, residual_table


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _catalog_kernels():
    return [K.constant(2.0), K.additive(), K.multiplicative(), K.product_power(1.5), K.min_power(1.5, 1.0),
            K.min_power_gap(1.2, 1.0), K.k0_log(2.0), K.k1_log(1.5), K.diagonal(1.0, 2.0)]


def check_kernel_symmetry(seed: int = 0):
    rng = np.random.default_rng(seed)
    x = np.exp(rng.uniform(-7, 7, 10_000))
    y = np.exp(rng.uniform(-7, 7, 10_000))
    bad = []
    for k in _catalog_kernels():
        a, b = k.evaluate(x, y), k.evaluate(y, x)
        if not np.array_equal(a, b) or np.any(a < 0):
            bad.append(k.render())
    return not bad, "all catalog kernels symmetric and nonnegative" if not bad else f"failed: {bad}"


def check_homogeneity():
    ok = all(K.check_homogeneity(k, 500).passed for k in (K.multiplicative(), K.min_power(1.5, 1.0), K.product_power(1.5)))
    fails = not K.check_homogeneity(K.k1_log(1.0), 500, gamma=1.0).passed
    return ok and fails, f"homogeneous pass={ok}, log-modified rejected={fails}"


def check_constant_oracle():
    t_out = [0.5, 1.0, 2.0]
    run = integrate_grid(K.constant(2.0), MassSpectrum.dirac(1.0), 256, 2.0, 1e-10, t_out=t_out)
    worst = 0.0
    n = np.arange(1, 21)
    for t in t_out:
        i = int(np.nonzero(run.trajectory.times == t)[0][0])
        exact = constant_kernel_solution(t, n)
        worst = max(worst, float(np.max(np.abs(run.trajectory.conc[i, :20] - exact) / exact)))
    return worst < 1e-6, f"max relative error {worst:.3g}"


def check_multiplicative():
    run = integrate_grid(K.multiplicative(), MassSpectrum.dirac(1.0), 2**12, 0.9, 1e-8, snapshots="ends")
    mom = run.moments
    err = float(np.max(np.abs(mom[:, 3] * (1 - mom[:, 0]) - 1)))
    est = estimate_blowup_time(mom[:, 0], mom[:, 3])
    ok = err < 2e-2 and est.blowup and 0.95 <= est.time <= 1.05
    return ok, f"M2 error {err:.3g}, blow-up estimate {est.time}"


def check_bounds():
    k = compute_kappa(K.multiplicative(), BoundSpec(0.5, 2.0))
    b = gel_time_bound(K.multiplicative(), MassSpectrum.dirac(1.0), BoundSpec(0.5, 2.0)).tgel_upper
    seq = cascade_bound_sequence(2.0, 60)
    n = np.arange(61)
    inv = seq.bn * np.ldexp(1.0, n) * np.log(math.e + np.ldexp(1.0, n))
    c = additive_gel_bound(2.0, MassSpectrum.dirac(1.0))
    xs = np.geomspace(1e-6, 1e6, 2000)
    from ..bounds import psi_limit, weight
    sound = all(psi_limit(x, 2.0) <= c.kappa * float(weight(x)) * (1 + 1e-12) for x in xs[::20])
    ok = (abs(k / (2 * math.sqrt(2)) - 1) < 1e-8 and abs(b / 256 - 1) < 1e-8
          and np.allclose(inv, math.log(math.e + 1), rtol=1e-12, atol=0) and sound)
    return ok, f"kappa={k!r}, bound={b!r}, kappa_psi={c.kappa:.6g}"


def check_cascade():
    tol = 1e-8
    run = integrate_cascade(2.0, 50.0, 40, tol)
    bn = cascade_bound_sequence(2.0, 40).bn
    step3 = bool(np.all(run.sup_c <= bn * (1 + 10 * tol)))
    c0 = run.trajectory.conc[:, 0]
    c0_err = float(np.max(np.abs(c0 - exact_c0(2.0, run.times))))
    env_ok = True
    for a in (1.0, 1.5, 2.0):
        r = integrate_cascade(a, 20.0, 40, 1e-8)
        env = moment_envelope(cascade_bound_sequence(a, 40), r.times)
        env_ok &= bool(np.all(r.trajectory.column("xlogx_moment") <= env))
    mass = integrate_cascade(1.5, 10.0, 40, 1e-10)
    cons = abs(mass.M1[-1] - 1) < 1e-6
    return step3 and env_ok and cons and c0_err < 1e-6, (
        f"step-3 bound {step3}, envelope {env_ok}, |M1-1|<1e-6 {cons}, c0 error {c0_err:.2g}")


def check_weak_form():
    tol = 1e-6
    rows = residual_table(tol)
    worst = max(rows, key=lambda r: r[2])
    return worst[2] < 10 * tol, f"max |residual| {worst[2]:.3g} ({worst[0]}, {worst[1]}; tol {tol})"


def check_mass_monotone():
    runs = [integrate_grid(K.multiplicative(), MassSpectrum.dirac(1.0), 512, 2.0, 1e-8, snapshots="ends").trajectory,
            integrate_grid(K.additive(), MassSpectrum.dirac(1.0), 512, 2.0, 1e-8, snapshots="ends").trajectory,
            integrate_cascade(3.0, 30.0, 40, 1e-8).trajectory]
    res = [monotone_mass_check(t) for t in runs]
    worst = max(r.max_violation for r in res)
    return all(r.passed for r in res), f"max violation {worst:.3g}"


def check_dyadic_closure():
    run = simulate(K.k0_log(2.0), 2**21, MassSpectrum.dirac(1.0), 0, 1e9, max_events=10**6)
    ok = run.dyadic_checked == 10**6 and run.dyadic_violations == 0
    return ok, f"{run.dyadic_checked} events, {run.dyadic_violations} violations"


def check_mlsim_multiplicative():
    runs = replicate(K.multiplicative(), 10**5, MassSpectrum.dirac(1.0), 0, 10, 3.0,
                     stop_largest=(10**5) ** (2 / 3))
    est = gel_time_estimate(runs, "n23")
    ok = est.median is not None and 0.85 <= est.median <= 1.15
    return ok, f"median {est.median}, IQR {est.iqr}"


def check_determinism():
    with tempfile.TemporaryDirectory() as d:
        outs = []
        for sub in ("a", "b"):
            base = Path(d) / sub
            cfgs = [RunConfig("cascade", "k0log(alpha=2)", t_end=5.0, out=str(base / "c.csv"), plots=False),
                    RunConfig("grid", "additive", t_end=1.0, N_max=256, out=str(base / "g.csv"), plots=False),
                    RunConfig("mlsim", "multiplicative", t_end=2.0, n=2000, seeds=3, out=str(base / "m.csv"), plots=False)]
            for c in cfgs:
                run_experiment(c)
            outs.append({p.name: p.read_bytes() for p in sorted(base.glob("*.csv"))})
        same = outs[0] == outs[1] and len(outs[0]) == 6
    return same, "byte-identical CSVs" if same else "outputs differ"


def check_scan():
    rows = criticality_scan("k0log") + criticality_scan("k1log")
    bad = [f"{r.family}:{r.alpha}->{r.verdict}" for r in rows if not r.agrees]
    return not bad, "all verdicts match predictions" if not bad else f"mismatch {bad}"


SUITE = [
    ("kernel symmetry and nonnegativity", check_kernel_symmetry),
    ("homogeneity (directional)", check_homogeneity),
    ("constant-kernel closed form", check_constant_oracle),
    ("multiplicative M2 and blow-up", check_multiplicative),
    ("explicit bounds", check_bounds),
    ("cascade bounds and conservation", check_cascade),
    ("weak-form residual", check_weak_form),
    ("mass monotonicity", check_mass_monotone),
    ("dyadic closure of particle runs", check_dyadic_closure),
    ("particle gel time (multiplicative)", check_mlsim_multiplicative),
    ("determinism", check_determinism),
]


def run_suite(full: bool = False, report=print) -> list[CheckResult]:
    suite = SUITE + ([("criticality scan", check_scan)] if full else [])
    out = []
    for name, fn in suite:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        r = CheckResult(name, bool(ok), detail, time.perf_counter() - t0)
        out.append(r)
        if report:
            report(f"{'PASS' if r.passed else 'FAIL'}  {name}: {detail} [{r.seconds:.1f}s]")
    return out
