import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import check_grad
from scipy.stats import norm

from inslicing.gbo import (ConditioningError, GboParams, _neg_ei_and_grad, expected_improvement, gbo_optimize, gp_fit,
                           se_kernel)


def quad_objective(x):
    v = float((x[0] - 0.37) ** 2)
    return v, v, True


def test_params_validation():
    with pytest.raises(ValueError):
        GboParams(n_init=20, budget=10)
    with pytest.raises(ValueError):
        GboParams(n_init=0)


def test_single_observation_interpolates():
    gp = gp_fit([[0.3, 0.7]], [2.5], signal_var=4.0, noise_var=1e-12)
    mean, _ = gp.predict([[0.3, 0.7]])
    assert mean[0] == pytest.approx(2.5, abs=1e-9)


def test_variance_at_data_below_noise(rng):
    X = rng.random((30, 3))
    gp = gp_fit(X, np.sin(X.sum(1)), noise_var=1e-4)
    _, var = gp.predict(X)
    assert np.all(var <= 1e-4 + 1e-8)


def test_posterior_matches_dense_oracle(rng):
    X, Xs = rng.random((25, 2)), rng.random((50, 2))
    y = np.cos(3 * X[:, 0]) + X[:, 1]
    ell, s2, n2 = 0.3, 1.5, 1e-3
    gp = gp_fit(X, y, ell, s2, n2)
    mean, var = gp.predict(Xs)

    def k(a, b):
        return s2 * np.exp(-0.5 * np.sum((a - b) ** 2) / ell ** 2)

    K = np.array([[k(a, b) for b in X] for a in X]) + n2 * np.eye(len(X))
    Ks = np.array([[k(a, b) for b in X] for a in Xs])
    Kinv = np.linalg.inv(K)
    assert np.max(np.abs(mean - Ks @ Kinv @ y)) < 1e-8
    assert np.max(np.abs(var - (s2 - np.einsum("ij,jk,ik->i", Ks, Kinv, Ks)))) < 1e-8


def test_prior_far_from_data(rng):
    X = rng.random((10, 2))
    gp = gp_fit(X, rng.normal(size=10), lengthscale=0.2, signal_var=2.0)
    mean, var = gp.predict([[50.0, -50.0]])
    assert mean[0] == pytest.approx(0.0, abs=1e-12) and var[0] == pytest.approx(2.0)


def test_kernel_symmetric_psd(rng):
    X = rng.random((20, 4))
    K = se_kernel(X, X, 0.5, 1.0)
    assert np.allclose(K, K.T) and np.linalg.eigvalsh(K).min() > -1e-10


def test_duplicates_survive_via_noise():
    X = np.zeros((5, 2))
    gp = gp_fit(X, np.ones(5), noise_var=0.0)
    assert gp.jitter > 0


def test_conditioning_error():
    with pytest.raises(ConditioningError):
        gp_fit(np.zeros((5, 2)), np.ones(5), noise_var=0.0, max_jitter=1e-30)


def test_ei_zero_without_information():
    assert expected_improvement(1.0, 0.0, 1.0) == 0.0
    assert expected_improvement(2.0, 0.0, 1.0) == 0.0
    assert expected_improvement(0.5, 0.0, 1.0) == pytest.approx(0.5)


def test_ei_at_z_equals_one():
    sigma = 0.7
    ei = expected_improvement(1.0 - sigma, sigma, 1.0)
    assert ei == pytest.approx(sigma * (norm.cdf(1.0) + norm.pdf(1.0)))
    assert ei == pytest.approx(sigma * 1.0833, rel=1e-4)


def test_ei_nonnegative(rng):
    mu, best = rng.normal(0, 10, 10_000), rng.normal(0, 10, 10_000)
    sd = rng.exponential(3.0, 10_000)
    assert np.all(expected_improvement(mu, sd, best) >= 0)


@given(st.integers(0, 1000))
def test_ei_gradient_matches_fd(seed):
    rng = np.random.default_rng(seed)
    X = rng.random((8, 2))
    gp = gp_fit(X, rng.normal(size=8), lengthscale=0.4)
    x = rng.random(2)
    f = lambda z: _neg_ei_and_grad(z, gp, 0.0)[0]
    g = lambda z: _neg_ei_and_grad(z, gp, 0.0)[1]
    assert check_grad(f, g, x, epsilon=1e-7) < 1e-4 * max(1.0, np.linalg.norm(g(x)))


def test_quadratic_1d_budget_30():
    res = gbo_optimize(quad_objective, ([0.0], [1.0]), GboParams(n_init=5, budget=30))
    assert abs(res.x[0] - 0.37) < 0.05 and res.n_evals == 30


def test_deterministic_under_seed():
    p = GboParams(n_init=4, budget=15, seed=3)
    a = gbo_optimize(quad_objective, ([0.0], [1.0]), p)
    b = gbo_optimize(quad_objective, ([0.0], [1.0]), p)
    assert a.rows == b.rows and np.array_equal(a.X, b.X)


def test_trace_monotone_and_points_in_box():
    lo, hi = np.array([0.1, -1.0, 0.0]), np.array([0.4, 1.0, 2.0])

    def objective(x):
        v = float(np.sum(np.sin(4 * x)) + x @ x)
        return v, v, bool(x[0] > 0.2)

    res = gbo_optimize(objective, (lo, hi), GboParams(n_init=5, budget=25, local_sigma=0.5))
    best = [r[1] for r in res.rows]
    assert np.all(np.diff(best) <= 0)
    assert np.all((res.X >= lo) & (res.X <= hi))
    assert res.feasible and res.x[0] > 0.2


def test_no_feasible_point_flagged():
    res = gbo_optimize(lambda x: (float(x[0]), float(x[0]), False), ([0.0], [1.0]),
                       GboParams(n_init=3, budget=8))
    assert not res.feasible and res.value == pytest.approx(res.values.min())
