import math

import numpy as np
import pytest

from cfkalman import cfverify, kf_cc, kf_cd, sdesim
from cfkalman.errors import GridMismatch, Overflow, TooFewSamples
from cfkalman.models import ContinuousMeasurementModel, DiscreteMeasurementModel, GaussianBelief, LinearStateModel

from conftest import random_psd, random_spd

OU = LinearStateModel(A=[[-1.0]], G=[[1.0]])
CM = ContinuousMeasurementModel(C=[[1.0]], phi_eta=[[1.0]])


def _belief(m, P, t=0.0):
    return GaussianBelief(t, m, P)


def test_mgf_examples():
    assert abs(cfverify.gaussian_mgf(_belief([0.0], [[1.0]]), [1.0]) - 1.6487213) <= 1e-7
    assert cfverify.gaussian_mgf(_belief([3.0, 1.0], np.eye(2)), [0.0, 0.0]) == 1.0
    assert abs(cfverify.gaussian_mgf(_belief([1.0], [[0.0]]), [2.0]) - 7.389056) <= 1e-6


def test_mgf_overflow():
    with pytest.raises(Overflow):
        cfverify.gaussian_mgf(_belief([0.0], [[1.0]]), [40.0])


def test_cf_examples():
    z = cfverify.gaussian_cf(_belief([0.0], [[1.0]]), [1.0])
    assert abs(abs(z) - 0.6065307) <= 1e-7 and abs(z.imag) <= 1e-16
    assert cfverify.gaussian_cf(_belief([1.0, 2.0], np.eye(2)), [0.0, 0.0]) == 1 + 0j
    z = cfverify.gaussian_cf(_belief([1.0], [[0.0]]), [math.pi])
    assert abs(z - (-1 + 0j)) <= 1e-12


def test_cf_modulus_bounded(rng):
    for _ in range(100):
        n = rng.integers(1, 4)
        b = _belief(rng.standard_normal(n) * 3, random_psd(rng, n))
        assert abs(cfverify.gaussian_cf(b, rng.standard_normal(n) * 2)) <= 1.0 + 1e-15


def test_empirical_cf_degenerate_samples():
    x0 = np.array([0.3, -1.2])
    est = cfverify.empirical_cf(np.tile(x0, (10, 1)), [0.5, 2.0])
    assert abs(est.value - np.exp(1j * (0.5 * 0.3 - 2.0 * 1.2))) <= 1e-15
    assert est.se_re <= 1e-15 and est.se_im <= 1e-15
    est = cfverify.empirical_cf(np.random.default_rng(0).standard_normal((50, 2)), [0.0, 0.0])
    assert est.value == 1 + 0j


def test_empirical_cf_needs_two_samples():
    with pytest.raises(TooFewSamples):
        cfverify.empirical_cf(np.zeros((1, 1)), [1.0])


def test_empirical_cf_standard_normal():
    x = np.random.default_rng(1).standard_normal(100_000)
    est = cfverify.empirical_cf(x, [1.0])
    assert est.within(cfverify.gaussian_cf(_belief([0.0], [[1.0]]), [1.0]))


def test_weighted_empirical_cf_reduces_to_plain():
    x = np.random.default_rng(2).standard_normal((500, 1))
    a = cfverify.empirical_cf(x, [0.7])
    b = cfverify.empirical_cf(x, [0.7], weights=np.full(500, 3.0))
    assert abs(a.value - b.value) <= 1e-14
    assert abs(a.se_re - b.se_re) / a.se_re < 0.01


def test_theorem1_identity_random(rng):
    worst = 0.0
    for _ in range(100):
        n = 3
        model = LinearStateModel(A=rng.standard_normal((n, n)), G=rng.standard_normal((n, 2)))
        b = _belief(rng.standard_normal(n), random_spd(rng, n))
        s = rng.uniform(-1, 1, n)
        worst = max(worst, cfverify.theorem1_residual(model, b, s))
    assert worst <= 1e-10


def test_theorem1_at_zero_probe():
    b = _belief([1.0, -1.0], np.eye(2))
    model = LinearStateModel(A=[[-1.0, 2.0], [0.0, -3.0]], G=np.eye(2))
    lhs, rhs = cfverify.theorem1_sides(model, b, [0.0, 0.0])
    assert lhs == 0.0 and rhs == 0.0
    assert cfverify.theorem1_residual(model, b, [0.0, 0.0]) == 0.0


def test_theorem1_rhs_against_monte_carlo(rng):
    """The generator expectation computed in closed form agrees with sampling."""
    A = np.array([[-1.0, 0.4], [0.2, -0.5]])
    G = np.array([[0.5, 0.0], [0.3, 0.8]])
    b = _belief([0.3, -0.2], [[0.5, 0.1], [0.1, 0.3]])
    s = np.array([0.5, -1.0])
    x = rng.multivariate_normal(b.m, b.P, size=200_000)
    e = np.exp(x @ s)
    f = (x @ A.T @ s) * e + 0.5 * (s @ G @ G.T @ s) * e
    _, rhs = cfverify.theorem1_sides(LinearStateModel(A=A, G=G), b, s)
    assert abs(f.mean() - rhs) <= 3 * f.std(ddof=1) / np.sqrt(f.size)


def test_gain_cf_examples():
    b = _belief([0.0], [[1.0]])
    np.testing.assert_array_equal(cfverify.theorem2_gain_cf(b, CM, [0.0]), [[0.0]])
    np.testing.assert_allclose(cfverify.theorem2_gain_cf(b, CM, [1.0]), [[np.exp(0.5)]], rtol=1e-14)


def test_gain_cf_against_monte_carlo():
    rng = np.random.default_rng(7)
    m = np.array([0.2, -0.4])
    P = np.array([[0.6, 0.2], [0.2, 0.4]])
    C = np.array([[1.0, 0.5]])
    phi = np.array([[0.8]])
    s = np.array([0.5, -0.5])
    x = rng.multivariate_normal(m, P, size=100_000)
    e = np.exp(x @ s)
    y = x @ C.T
    # covariance of e and C x, divided by phi
    prod = (e - e.mean())[:, None] * (y - y.mean(axis=0))
    est = prod.mean(axis=0) / phi[0, 0]
    se = prod.std(axis=0, ddof=1) / np.sqrt(len(x)) / phi[0, 0]
    row = cfverify.theorem2_gain_cf(_belief(m, P), ContinuousMeasurementModel(C=C, phi_eta=phi), s)
    assert np.all(np.abs(row[0] - est) <= 3 * se)


def _ou_run(dt, seed, T=1.0):
    path = sdesim.simulate_ito(OU, [0.5], dt, T, seed=seed)
    rec = sdesim.gen_continuous_measurements(path, CM, seed=seed)
    return kf_cc.run(OU, CM, rec, _belief([0.0], [[1.0]]), kf_cc.CcFilterConfig(dt=dt)), rec


def test_cf_sde_residual_small_on_ou_run():
    dt = 1e-3
    traj, rec = _ou_run(dt, seed=0)
    assert cfverify.theorem2_cf_sde_residual(OU, CM, traj, rec, [1.0]) <= 5 * dt


def test_cf_sde_residual_first_order():
    res = []
    for dt in (2e-3, 1e-3):
        res.append(np.mean([cfverify.theorem2_cf_sde_residual(OU, CM, *_ou_run(dt, s), [1.0]) for s in range(3)]))
    assert 1.5 <= res[0] / res[1] <= 3.0


def test_cf_sde_residual_degenerate_runs():
    blind = ContinuousMeasurementModel(C=[[0.0]], phi_eta=[[1.0]])
    still = LinearStateModel(A=[[0.0]], G=[[0.0]])
    b0 = _belief([0.7], [[0.3]])

    def run(model, dt):
        n = int(round(1.0 / dt))
        rec = sdesim.MeasurementRecord("continuous", dt * np.arange(n), np.zeros((n, 1)), dt=dt)
        return kf_cc.run(model, blind, rec, b0, kf_cc.CcFilterConfig(dt=dt)), rec

    assert cfverify.theorem2_cf_sde_residual(still, blind, *run(still, 1e-2), [1.0]) <= 1e-10
    # noise-free decay: only the Euler truncation of the exponential remains, O(dt^2) per step
    decay = LinearStateModel(A=[[-1.0]], G=[[0.0]])
    r1 = cfverify.theorem2_cf_sde_residual(decay, blind, *run(decay, 2e-3), [1.0])
    r2 = cfverify.theorem2_cf_sde_residual(decay, blind, *run(decay, 1e-3), [1.0])
    assert 3.5 <= r1 / r2 <= 4.5


def test_cf_sde_residual_grid_mismatch():
    traj, rec = _ou_run(1e-2, seed=0)
    short = sdesim.MeasurementRecord("continuous", rec.times[:-1], rec.values[:-1], dt=rec.dt)
    with pytest.raises(GridMismatch):
        cfverify.theorem2_cf_sde_residual(OU, CM, traj, short, [1.0])


def test_third_moment_examples():
    lhs, rhs = cfverify.third_moment_identity(_belief([1.0, 2.0], np.eye(2)), 0, 0, 0)
    assert lhs == pytest.approx(2.0, abs=1e-12) and rhs == pytest.approx(2.0, abs=1e-12)
    rng = np.random.default_rng(3)
    b = _belief([0.0, 0.0, 0.0], random_spd(rng, 3))
    for idx in [(0, 1, 2), (2, 2, 1), (1, 1, 1)]:
        assert cfverify.third_moment_identity(b, *idx) == (0.0, 0.0)


def test_third_moment_identity_random(rng):
    for _ in range(300):
        n = rng.integers(1, 4)
        b = _belief(rng.standard_normal(n) * 2, random_psd(rng, n))
        i, j, g = rng.integers(0, n, size=3)
        lhs, rhs = cfverify.third_moment_identity(b, i, j, g)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))


def test_third_moment_monte_carlo():
    m = np.array([1.0, 2.0])
    P = np.array([[2.0, 0.5], [0.5, 1.0]])
    x = np.random.default_rng(11).multivariate_normal(m, P, size=100_000)
    est, se = cfverify.sample_third_moment_gap(x, 0, 1, 1)
    _, rhs = cfverify.third_moment_identity(_belief(m, P), 0, 1, 1)
    assert abs(est - rhs) <= 3 * se


def test_probe_grid():
    grid = cfverify.probe_grid(2)
    assert len(grid) == 16
    assert all(np.max(np.abs(p)) <= 1.0 for p in grid)


def test_reports():
    b = _belief([0.5, -0.5], [[1.0, 0.2], [0.2, 0.5]])
    model = LinearStateModel(A=[[-1.0, 0.3], [0.0, -0.5]], G=np.eye(2))
    recs = cfverify.theorem1_report(model, [b])
    assert len(recs) == 16 and all(r.passed for r in recs)
    d = recs[0].to_dict()
    assert set(d) == {"check", "probe", "lhs", "rhs", "residual", "tolerance", "passed"}
    recs = cfverify.appendix_report([b])
    assert len(recs) == 8 and all(r.passed for r in recs)
    traj, rec = _ou_run(1e-3, seed=1)
    recs = cfverify.theorem2_report(OU, CM, traj, rec)
    assert len(recs) == 4 and all(r.passed for r in recs)


@pytest.mark.slow
def test_posterior_cf_matches_importance_weighted_truth():
    """Kalman posterior CF against self-normalised importance sampling of the true process."""
    A = np.array([[-0.8, 0.5], [-0.5, -0.3]])
    G = np.array([[0.4, 0.0], [0.0, 0.6]])
    model = LinearStateModel(A=A, G=G)
    b0 = _belief([1.0, -0.5], [[0.3, 0.05], [0.05, 0.2]])
    t1, dt = 0.5, 1e-3
    C = np.array([[1.0, 1.0]])
    R = np.array([[0.25]])
    y = np.array([0.9])
    dm = DiscreteMeasurementModel(C=C, R=R, schedule=[t1])

    rng = np.random.default_rng(5)
    N = 100_000
    x0 = rng.multivariate_normal(b0.m, b0.P, size=N)
    xt = sdesim.simulate_ensemble(model, x0, dt, t1, N, seed=21)
    resid = y[0] - xt @ C[0]
    w = np.exp(-0.5 * resid**2 / R[0, 0])

    post = kf_cd.update(kf_cd.predict(b0, model, t1), dm, y, t1)
    for w1 in (-1.0, -0.5, 0.0, 0.5, 1.0):
        for w2 in (-1.0, -0.5, 0.0, 0.5, 1.0):
            omega = np.array([w1, w2])
            est = cfverify.empirical_cf(xt, omega, weights=w)
            assert est.within(cfverify.gaussian_cf(post, omega)), (omega, est)
