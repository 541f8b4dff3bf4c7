import math

import numpy as np
import pytest

from gelscope import grid as G
from gelscope import kernels as K
from gelscope.errors import DomainError
from gelscope.spectrum import MassSpectrum


def test_rhs_constant_kernel_from_dirac(dirac):
    rate, flux = G.smoluchowski_rhs(dirac, K.constant(2.0), 8)
    assert rate[1] == pytest.approx(-2.0, rel=1e-15)
    assert rate[2] == pytest.approx(1.0, rel=1e-15)
    assert set(rate.as_dict()) == {1.0, 2.0}
    assert flux == 0.0


def test_rhs_multiplicative_second_moment(dirac):
    rate, _ = G.smoluchowski_rhs(dirac, K.multiplicative(), 8)
    dM2 = sum(m * m * v for m, v in rate.as_dict().items())
    assert dM2 == pytest.approx(1.0, rel=1e-14)


def test_rhs_boundary_flux():
    # two clusters of mass 3 on a grid of 4 leave the grid as one cluster of 6
    rate, flux = G.smoluchowski_rhs(MassSpectrum.dirac(3.0, 1.0), K.constant(1.0), 4)
    assert rate[3] == -1.0
    assert flux == pytest.approx(3.0, rel=1e-15)


@pytest.mark.parametrize("k", [K.constant(1.0), K.additive(), K.multiplicative(), K.k0_log(2.0), K.k1_log(1.5),
                               K.product_power(1.5), K.min_power(1.2, 0.5), K.sqrt_log(1.5),
                               K.custom("x + y + 1")],
                         ids=lambda k: k.render())
def test_rhs_strategies_agree_with_dense_sum(k, rng):
    N = 37
    c = rng.uniform(0, 1, N)
    spec = MassSpectrum.dense(c)
    rate, flux = G.smoluchowski_rhs(spec, k, N)
    n = np.arange(1, N + 1, dtype=float)
    Kmat = k.evaluate(n[:, None], n[None, :])
    gain = np.zeros(N)
    for i in range(N):
        for j in range(N):
            s = i + j + 2
            if s <= N:
                gain[s - 1] += 0.5 * Kmat[i, j] * c[i] * c[j]
    loss = c * (Kmat @ c)
    np.testing.assert_allclose(rate.values, gain - loss, rtol=1e-10, atol=1e-12)
    out = sum(0.5 * Kmat[i, j] * c[i] * c[j] * (i + j + 2) for i in range(N) for j in range(N) if i + j + 2 > N)
    assert flux == pytest.approx(out, rel=1e-10)


def test_constant_kernel_oracle(dirac):
    run = G.integrate_grid(K.constant(2.0), dirac, 256, 10.0, 1e-10, t_out=[1.0, 5.0])
    tr = run.trajectory
    for i, t in enumerate(tr.times):
        exact = G.constant_kernel_solution(t, tr.masses)
        np.testing.assert_allclose(tr.conc[i], exact, rtol=1e-6, atol=1e-14)
    m = tr.moments
    np.testing.assert_allclose(m[:, 1], 1.0 / (1.0 + m[:, 0]), rtol=1e-7)


def test_additive_kernel_number_density(dirac):
    run = G.integrate_grid(K.additive(), dirac, 8192, 3.0, 1e-7, snapshots="ends")
    m = run.moments
    assert np.max(np.abs(m[:, 1] - np.exp(-m[:, 0]))) < 1e-4


def test_multiplicative_second_moment(dirac):
    run = G.integrate_grid(K.multiplicative(), dirac, 2**12, 0.9, 1e-9, snapshots="ends")
    m = run.moments
    np.testing.assert_allclose(m[:, 3], 1.0 / (1.0 - m[:, 0]), rtol=1e-6)
    np.testing.assert_allclose(m[:, 1], 1.0 - m[:, 0] / 2, rtol=1e-6)


@pytest.mark.parametrize("k", [K.multiplicative(), K.k1_log(2.0), K.k0_log(3.0)], ids=lambda k: k.render())
def test_mass_ledger_and_monotone_tracked_mass(k, dirac):
    run = G.integrate_grid(k, dirac, 256, 4.0, 1e-9, snapshots="ends")
    m = run.moments
    np.testing.assert_allclose(m[:, 2] + m[:, 5], 1.0, atol=1e-9)
    assert np.all(np.diff(m[:, 2]) <= 1e-12)
    assert np.all(run.trajectory.conc >= 0)


def test_loss_threshold_stops_run(dirac):
    run = G.integrate_grid(K.multiplicative(), dirac, 512, 5.0, 1e-8, loss_threshold=1e-3)
    assert run.stopped_early and 0.8 < run.loss_time < 1.0
    assert run.loss_time == pytest.approx(G.loss_time_from_moments(run.moments, 1e-3), rel=1e-12)


def test_loss_time_interpolation():
    m = np.array([[0, 1, 1.0, 1, 1, 0], [1, 1, 1.0, 1, 1, 0], [2, 1, 0.998, 1, 1, 0]])
    assert G.loss_time_from_moments(m, 1e-3) == pytest.approx(1.5)
    assert G.loss_time_from_moments(m, 1e-2) is None


def test_blowup_estimator_exact_series():
    t = np.linspace(0, 0.95, 200)
    est = G.estimate_blowup_time(t, 1 / (1 - t))
    assert est.blowup and est.time == pytest.approx(1.0, rel=1e-12)
    lo, hi = est.interval
    assert hi - lo < 1e-9


def test_blowup_estimator_bounded_series():
    t = np.linspace(0, 5, 100)
    assert not G.estimate_blowup_time(t, np.ones_like(t)).blowup
    assert not G.estimate_blowup_time(t, 2 - np.exp(-t)).blowup
    assert not G.estimate_blowup_time(t[:5], 1 / (1 - t[:5] / 10)).blowup


def test_blowup_estimator_on_multiplicative_run(dirac):
    run = G.integrate_grid(K.multiplicative(), dirac, 2**12, 0.9, 1e-9)
    m = run.moments
    est = G.estimate_blowup_time(m[:, 0], m[:, 3])
    assert est.blowup and abs(est.time - 1.0) < 1e-3


@pytest.fixture(scope="module")
def refinement_runs():
    d = MassSpectrum.dirac()
    out = {}
    for name, k, t_end in [("mult", K.multiplicative(), 3.0), ("add", K.additive(), 3.0), ("k1", K.k1_log(2.0), 12.0)]:
        out[name] = [G.integrate_grid(k, d, N, t_end, 1e-6, snapshots="ends") for N in (128, 512, 2048)]
    return out


def test_gel_time_estimate_multiplicative(refinement_runs):
    v = G.estimate_gel_time(refinement_runs["mult"])
    assert v.verdict == "gel"
    assert 0.9 < v.estimate < 1.2
    assert v.estimate <= 256.0


def test_additive_kernel_is_classified_conserving(refinement_runs):
    v = G.estimate_gel_time(refinement_runs["add"])
    assert v.verdict == "conserve" and v.exponent < 0


def test_k1log_alpha2_estimate_within_bound(refinement_runs):
    from gelscope.bounds import additive_gel_bound

    v = G.estimate_gel_time(refinement_runs["k1"])
    bound = additive_gel_bound(2.0, MassSpectrum.dirac()).tgel_upper
    assert v.verdict == "gel"
    assert v.estimate <= bound


def test_estimate_gel_time_validation(refinement_runs):
    runs = refinement_runs["mult"]
    with pytest.raises(DomainError):
        G.estimate_gel_time(runs[:2])
    with pytest.raises(DomainError):
        G.estimate_gel_time(runs[:2] + refinement_runs["add"][:1])


def test_exponent_recovered_from_synthetic_sequence():
    L = np.array([2.0, 4.0, 8.0])
    for beta in (0.5, 1.0, 2.0):
        T = 5.0 - 3.0 * L ** (-beta)
        assert G.convergence_exponent(L, T) == pytest.approx(beta, abs=1e-8)
        v = G.classify_refinement(L, list(T))
        assert v.verdict == "gel" and v.estimate == pytest.approx(5.0, rel=1e-8)


def test_logarithmic_growth_is_conserve():
    L = np.array([2.0, 4.0, 8.0])
    v = G.classify_refinement(L, list(np.log(L)))
    assert v.verdict == "conserve" and abs(v.exponent) < 1e-6


def test_censoring_rules():
    L = [1.0, 2.0, 3.0]
    assert G.classify_refinement(L, [None, None, None]).verdict == "conserve"
    assert G.classify_refinement(L, [1.0, None, None]).verdict == "conserve"
    assert G.classify_refinement(L, [None, 1.0, 1.1]).verdict == "inconclusive"
    assert G.classify_refinement(L, [1.0, 1.5, 1.2]).verdict == "inconclusive"
    assert G.classify_refinement(L, [1.0, 1.0, 1.0]).verdict == "gel"


def test_drift_rule():
    L = [1.0, 2.0, 3.0]
    assert G.classify_refinement(L, [1.0, 1.5, 1.52], rule="drift").verdict == "gel"
    assert G.classify_refinement(L, [1.0, 1.5, 2.0], rule="drift").verdict == "conserve"
    assert G.classify_refinement(L, [1.0, 1.5, 1.6], rule="drift", margin=0.1).verdict == "gel"


@pytest.mark.parametrize("args", [
    dict(levels=[1, 2], loss_times=[1, 2]),
    dict(levels=[1, 2, 2], loss_times=[1, 2, 3]),
    dict(levels=[1, 2, 3], loss_times=[1, 2]),
    dict(levels=[1, 2, 3], loss_times=[1, 2, 3], rule="vote"),
])
def test_classify_validation(args):
    with pytest.raises(DomainError):
        G.classify_refinement(**args)


@pytest.mark.parametrize("kw", [dict(N_max=0), dict(t_end=0.0), dict(t_end=math.inf), dict(tol=0.0)])
def test_integrate_validation(kw, dirac):
    args = dict(N_max=16, t_end=1.0, tol=1e-8)
    args.update(kw)
    with pytest.raises(DomainError):
        G.integrate_grid(K.constant(1.0), dirac, **args)



@pytest.mark.parametrize("alpha", [0.5, 1.0])
def test_k1log_second_moment_stable_under_doubling(alpha, dirac):
    # kernels below (x+y) log(e + x∧y) keep M2 finite; at t=1 doubling the
    # grid changes M2 less and less and the finest grid loses no mass
    m2 = []
    for N in (1024, 2048, 4096):
        run = G.integrate_grid(K.k1_log(alpha), dirac, N, 1.0, 1e-9, snapshots="ends")
        m2.append(run.moments[-1, 3])
    assert run.moments[-1, 5] < 1e-9
    assert abs(m2[2] - m2[1]) < 0.01 * abs(m2[1] - m2[0]) + 1e-9 * m2[2]
    assert m2[2] == pytest.approx(m2[1], rel=1e-4)
