import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gelscope import kernels as K
from gelscope.errors import ConfigError, DomainError, GelscopeError
from gelscope.grid import integrate_grid
from gelscope.harness import checks
from gelscope.harness.config import RunConfig, load_config, parse_config
from gelscope.harness.csvio import fmt, read_csv, render_csv, write_csv
from gelscope.harness.experiment import ExperimentError, run_experiment
from gelscope.harness.scan import ScanBudget, criticality_scan
from gelscope.harness.testfunctions import TestFunction, catalog
from gelscope.harness.weakform import (
    golden_cases, jensen_gap, monotone_mass_check, residual_table, weak_form_residual)
from gelscope.spectrum import MassSpectrum, Trajectory

pos = st.floats(1e-6, 1e6)


@settings(max_examples=200, deadline=None)
@given(x=pos, y=pos, a=st.floats(1e-3, 1e3))
def test_truncated_identity_increment(x, y, a):
    psi = TestFunction("trunc_id", a)
    d = float(psi.delta(x, y))
    generic = float(psi(x + y) - psi(x) - psi(y))
    assert d == pytest.approx(generic, abs=1e-12 * (x + y))
    assert -a - 1e-12 * a <= d <= 1e-12 * (x + y)


@settings(max_examples=100, deadline=None)
@given(x=pos, y=pos, a=st.floats(1e-3, 1e3))
def test_increments_bounded(x, y, a):
    for psi in catalog(a)[:4]:
        d = float(psi.delta(x, y))
        sup = 1.0 if psi.kind == "indicator" else float(psi(a))  # each is nondecreasing up to a, constant after
        assert math.isfinite(d)
        assert abs(d) <= 3 * sup * (1 + 1e-12)


def test_psi_log_is_supported_below_a():
    psi = TestFunction("psi_log", 2.0)
    assert psi(3.0) == 0.0
    assert psi(np.array([1.0, 2.0])).shape == (2,)
    assert psi(1.0) > 0


@pytest.mark.parametrize("kw", [dict(kind="sine", a=1.0), dict(kind="trunc_id", a=0.0),
                                dict(kind="indicator", a=1.0, lo=2.0), dict(kind="psi_log", a=1.0, alpha=1.0)])
def test_test_function_validation(kw):
    with pytest.raises(DomainError):
        TestFunction(**kw)


@pytest.fixture(scope="module")
def golden():
    return golden_cases(1e-6)


def test_residuals_below_ten_tol():
    for case, psi, r in residual_table(1e-6):
        assert r < 1e-5, (case, psi, r)


def test_residual_is_second_order_in_sample_spacing():
    coarse = residual_table(1e-4)
    fine = residual_table(1e-6)  # spacing 10x smaller
    for (case, psi, r1), (_, _, r2) in zip(coarse, fine):
        if r1 > 1e-12:
            order = math.log10(r1 / max(r2, 1e-300))
            assert order >= 1.9, (case, psi, order)


def test_residual_detects_corrupted_trajectory(golden):
    case = golden[0]
    tr = case.trajectory
    conc = tr.conc.copy()
    conc[-1] *= 1.01
    bad = Trajectory(tr.times, tr.masses, conc, tr.lost)
    psi = TestFunction("trunc_id", 4.0)
    good = abs(weak_form_residual(tr, case.kernel, psi, case.t).value)
    broken = abs(weak_form_residual(bad, case.kernel, psi, case.t).value)
    assert good < 1e-5 < broken


def test_residual_interpolates_and_checks_horizon(golden):
    case = golden[0]
    psi = TestFunction("trunc_id", 4.0)
    mid = weak_form_residual(case.trajectory, case.kernel, psi, 0.5 * case.t + 1e-4)
    assert abs(mid.value) < 1e-4 and mid.collision_magnitude > 0
    with pytest.raises(DomainError):
        weak_form_residual(case.trajectory, case.kernel, psi, 2 * case.t)


def test_mass_check(golden):
    for case in golden:
        assert monotone_mass_check(case.trajectory).passed
    tr = golden[0].trajectory
    conc = tr.conc.copy()
    conc[-1] *= 1 + 1e-6
    chk = monotone_mass_check(Trajectory(tr.times, tr.masses, conc, tr.lost))
    assert not chk.passed and chk.max_violation == pytest.approx(1e-6, rel=1e-3)


def test_jensen_inequality_along_runs(dirac):
    a_grid = np.geomspace(1, 512, 40)
    for k in (K.multiplicative(), K.k1_log(2.0)):
        run = integrate_grid(k, dirac, 512, 3.0, 1e-8, t_out=[0.5, 1.0, 2.0])
        for _, spec in run.trajectory.snapshots:
            assert jensen_gap(spec, 1.0, a_grid) <= 1e-12


# ---------------------------------------------------------------- config

CFG = """# sample
solver = grid   # integer grid
kernel = multiplicative
t_end = 0.5
N_max = 64
plots = false
"""


def test_config_parse_and_round_trip():
    cfg = parse_config(CFG)
    assert cfg.solver == "grid" and cfg.N_max == 64 and cfg.plots is False and cfg.t_end == 0.5
    assert parse_config(cfg.render()) == cfg


def test_config_load(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text(CFG)
    assert load_config(p) == parse_config(CFG)


@pytest.mark.parametrize("text", [
    "kernel = additive\n",
    "solver = grid\ncolour = red\n",
    "solver = grid\nsolver = grid\n",
    "solver = grid\nt_end\n",
    "solver = grid\nN_max = many\n",
    "solver = grid\nplots = maybe\n",
    "solver = fluid\n",
    "solver = cascade\nkernel = additive\n",
    "solver = grid\ntol = 0\n",
    "solver = grid\nkernel = k0log(alpha=-1)\n",
    "solver = mlsim\nrule = mean\n",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_seed_env_override():
    cfg = RunConfig("mlsim", seed=3)
    assert cfg.with_env({"GELSCOPE_SEED": "17"}).seed == 17
    assert cfg.with_env({}).seed == 3
    assert cfg.with_env({"GELSCOPE_SEED": ""}).seed == 3
    with pytest.raises(ConfigError):
        cfg.with_env({"GELSCOPE_SEED": "x"})


def test_digest_ignores_output_location():
    a = RunConfig("grid", out="a.csv")
    assert a.digest() == RunConfig("grid", out="b/c.csv", plots=False).digest()
    assert a.digest() != RunConfig("grid", seed=1).digest()


# ---------------------------------------------------------------- csv


def test_csv_number_format():
    assert fmt(0.1) == "1.0000000000000001e-01"
    assert float(fmt(math.pi)) == math.pi
    assert fmt(3) == "3" and fmt(True) == "true" and fmt(None) == ""
    assert fmt(math.inf) == "inf" and fmt(-math.inf) == "-inf" and fmt(math.nan) == "nan"
    assert fmt(np.float64(2.5)) == "2.5000000000000000e+00" and fmt(np.int64(4)) == "4"


@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_csv_reals_round_trip(v):
    assert float(fmt(v)) == v


def test_csv_write_read(tmp_path):
    p = write_csv(tmp_path / "sub" / "x.csv", ("a", "b"), [(1, 0.5), ("t,x", None)])
    header, rows = read_csv(p)
    assert header == ["a", "b"] and rows == [["1", "5.0000000000000000e-01"], ["t,x", ""]]
    assert render_csv(("a",), []) == "a\n"
    assert not [q for q in p.parent.iterdir() if q.name.startswith(".")]


# ---------------------------------------------------------------- experiments


def _cfgs(base):
    return [
        RunConfig("cascade", "k0log(alpha=3)", t_end=5.0, n_max=12, out=str(base / "c.csv")),
        RunConfig("grid", "k1log(alpha=2)", t_end=1.0, N_max=128, out=str(base / "g.csv"), spectrum=True),
        RunConfig("mlsim", "multiplicative", t_end=2.0, n=1000, seeds=3, out=str(base / "m.csv")),
    ]


def test_experiments_write_artifacts_and_are_deterministic(tmp_path, monkeypatch):
    monkeypatch.delenv("GELSCOPE_SEED", raising=False)
    snaps = []
    for sub in ("a", "b"):
        base = tmp_path / sub
        for cfg in _cfgs(base):
            res = run_experiment(cfg)
            names = {p.name for p in res.files}
            stem = cfg.out.rsplit("/", 1)[1][:-4]
            assert {f"{stem}.csv", f"{stem}.summary.csv", f"{stem}.png", f"{stem}.timing.json"} <= names
        snaps.append({p.name: p.read_bytes() for p in sorted(base.glob("*.csv"))})
    assert snaps[0] == snaps[1]
    assert "g.spectrum.csv" in snaps[0]
    header, rows = read_csv(tmp_path / "a" / "c.csv")
    assert header == ["t", "n", "c_n", "M1", "xlogx_moment", "overflow_cum"]
    assert len(rows) % 13 == 0
    header, rows = read_csv(tmp_path / "a" / "m.summary.csv")
    assert rows[0][header.index("n_runs")] == "3"


def test_seed_env_changes_particle_output(tmp_path, monkeypatch):
    cfg = RunConfig("mlsim", "multiplicative", t_end=2.0, n=500, seeds=2, out=str(tmp_path / "m.csv"), plots=False)
    monkeypatch.delenv("GELSCOPE_SEED", raising=False)
    run_experiment(cfg)
    a = (tmp_path / "m.csv").read_bytes()
    monkeypatch.setenv("GELSCOPE_SEED", "99")
    res = run_experiment(cfg)
    assert res.config.seed == 99
    assert (tmp_path / "m.csv").read_bytes() != a


def test_solver_failure_echoes_config(tmp_path):
    cfg = RunConfig("grid", "additive", f0="delta(1.5)", out=str(tmp_path / "x.csv"), plots=False)
    with pytest.raises(ExperimentError) as info:
        run_experiment(cfg)
    assert "f0 = delta(1.5)" in str(info.value)
    assert not (tmp_path / "x.csv").exists()


def test_invalid_config_is_rejected_before_running(tmp_path):
    with pytest.raises(GelscopeError):
        run_experiment(RunConfig("grid", tol=0.0, out=str(tmp_path / "x.csv")))


# ---------------------------------------------------------------- scan and checks


def test_small_scan_k0log():
    budget = ScanBudget(levels=(40, 80, 160), t_end=60.0)
    rows = criticality_scan("k0log", (1.0, 3.0), budget)
    assert [r.alpha for r in rows] == [1.0, 3.0]
    low, high = rows
    assert low.verdict == "conserve" and low.bound == math.inf
    assert high.verdict == "gel" and high.within_bound
    assert high.gel_time_estimate <= high.bound


def test_small_scan_k1log():
    budget = ScanBudget(levels=(64, 256, 1024), t_end=12.0)
    rows = criticality_scan("k1log", (0.5, 2.0), budget)
    assert [r.verdict for r in rows] == ["conserve", "gel"]
    assert rows[1].bound_route == "prop-3.4ii" and rows[1].within_bound


def test_undecided_range_is_labelled_paper_open():
    budget = ScanBudget(levels=(64, 256, 1024), t_end=12.0)
    rows = criticality_scan("sqrtlog", (0.5, 1.5, 2.0, 3.0), budget)
    assert [r.predicted for r in rows] == ["conserve", "paper-open", "paper-open", "gel"]
    for r in rows[1:3]:
        assert r.verdict == "paper-open" and r.tendency in ("gel", "conserve")
        assert "not an established regime" in r.reason
    assert rows[0].verdict == "conserve" and rows[3].verdict == "gel"
    assert rows[3].bound_route == "theorem-2.3" and rows[3].within_bound
    assert math.isinf(rows[2].bound)


def test_scan_failure_is_inconclusive():
    rows = criticality_scan("k1log", (2.0,), ScanBudget(levels=(64, 128, 256), t_end=12.0, max_steps=3))
    assert rows[0].verdict == "inconclusive" and "Error" in rows[0].reason


def test_scan_validation():
    with pytest.raises(DomainError):
        criticality_scan("k2log", (1.0,))
    with pytest.raises(DomainError):
        criticality_scan("k0log", (0.0,))


@pytest.mark.parametrize("name", ["check_kernel_symmetry", "check_homogeneity", "check_bounds", "check_weak_form"])
def test_individual_checks_pass(name):
    ok, detail = getattr(checks, name)()
    assert ok, detail


def test_suite_reports_crashing_check(monkeypatch):
    def boom():
        raise RuntimeError("bad")

    monkeypatch.setattr(checks, "SUITE", [("boom", boom)])
    lines = []
    res = checks.run_suite(report=lines.append)
    assert not res[0].passed and lines[0].startswith("FAIL  boom")


@settings(max_examples=200, deadline=None)
@given(x=pos, y=pos, a=st.floats(1e-3, 1e3))
def test_truncated_identity_increment_is_minus_a_above_a(x, y, a):
    d = float(TestFunction("trunc_id", a).delta(x, y))
    if x >= a and y >= a:
        assert d == pytest.approx(-a, rel=1e-15)
    assert d <= 0.0


@settings(max_examples=200, deadline=None)
@given(x=pos, y=pos)
def test_sup_over_a_of_truncated_increment_is_min(x, y):
    # |Δ| is maximal once a reaches x+y; scan a across all the kinks
    grid = np.concatenate([np.geomspace(1e-7, 1e7, 400), [x, y, x + y, max(x, y)]])
    d = np.array([abs(float(TestFunction("trunc_id", float(a)).delta(x, y))) for a in grid])
    m = min(x, y)
    ulp = 4e-16 * (x + y)
    assert d.max() <= m + ulp
    assert d.max() == pytest.approx(m, rel=1e-12, abs=ulp)


@pytest.mark.parametrize("alpha", [1.5, 2.0, 3.0])
def test_psi_log_increment_dominates_log_weight(alpha, rng):
    a = 50.0
    psi = TestFunction("psi_log", a, alpha=alpha)
    x = np.exp(rng.uniform(np.log(1e-3), np.log(200.0), 300))
    y = np.exp(rng.uniform(np.log(1e-3), np.log(200.0), 300))
    d = psi.delta(x, y)
    m = np.minimum(x, y)
    inside = (x <= a) & (y <= a)
    bound = -np.where(inside, m / np.log(math.e + m) ** alpha, 0.0)
    assert np.all(d <= bound + 1e-12 * (1 + np.abs(bound)))


def test_indicator_below_one_stays_empty_on_cascade():
    from gelscope.cascade import integrate_cascade
    tr = integrate_cascade(2.0, 2.0, n_max=30, tol=1e-9, t_out=[0.5, 1.0, 1.5]).trajectory
    psi = TestFunction("indicator", 1.0)
    k = K.k0_log(2.0)
    for t in (0.5, 1.0, 1.5, 2.0):
        r = weak_form_residual(tr, k, psi, t)
        assert r.lhs == 0.0
        assert abs(r.value) == 0.0


def test_truncated_identity_above_support_sees_only_the_mass_defect(dirac):
    N = 256
    run = integrate_grid(K.additive(), dirac, N, 1.0, 1e-10, t_out=np.linspace(0.05, 1.0, 20))
    tr = run.trajectory
    psi = TestFunction("trunc_id", 2.0 * N)  # every pair that stays on the grid has x+y <= a
    r = weak_form_residual(tr, K.additive(), psi, 1.0)
    assert r.collision_magnitude == 0.0
    assert r.value == pytest.approx(-tr.lost[-1], abs=1e-12)
    assert abs(r.value) < 1e-10
