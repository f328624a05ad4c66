import numpy as np
import pytest
from hypothesis import given, strategies as st

from inslicing.problem import PenalizedProblem, flat_bounds, make_spec
from inslicing.trustregion import (DegenerateSubproblem, ModelBuildError, TrmParams, bfgs_update, build_model,
                                   fd_gradient, model_value, reduction_ratio, refine, solve_subproblem,
                                   update_radius, write_trace)


def rosenbrock(x):
    return (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2


def rosenbrock_grad(x):
    return np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return Q @ np.diag(np.linspace(1.0, cond, n)) @ Q.T


def test_params_validation():
    with pytest.raises(ValueError):
        TrmParams(shrink=1.5)
    with pytest.raises(ValueError):
        TrmParams(initial_radius=2.0, max_radius=1.0)


def test_newton_step_inside_ball():
    s = solve_subproblem(np.array([1.0, 0.0]), np.eye(2), 10.0)
    assert np.allclose(s, [-1.0, 0.0])


def test_step_clamped_to_boundary():
    s = solve_subproblem(np.array([1.0, 0.0]), np.eye(2), 0.5)
    assert np.allclose(s, [-0.5, 0.0])


@given(st.integers(0, 10_000), st.floats(0.01, 5.0))
def test_step_within_radius_and_decreases_model(seed, delta):
    rng = np.random.default_rng(seed)
    n = 4
    B, g = random_spd(rng, n, 50.0), rng.normal(size=n)
    s = solve_subproblem(g, B, delta)
    assert np.linalg.norm(s) <= delta * (1 + 1e-12)
    assert model_value(0.0, g, B, s) <= 0.0


def test_indefinite_model_uses_cauchy_point(rng):
    B = np.diag([1.0, -2.0])
    g = np.array([0.3, 0.4])
    s = solve_subproblem(g, B, 0.7)
    assert np.linalg.norm(s) <= 0.7 + 1e-12
    assert model_value(0.0, g, B, s) < 0.0


def test_dogleg_beats_ball_sample(rng):
    n = 3
    B, g = random_spd(rng, n, 20.0), rng.normal(size=n)
    delta = 0.3
    s = solve_subproblem(g, B, delta)
    d = rng.normal(size=(10_000, n))
    d *= (delta * rng.random(10_000) ** (1 / n) / np.linalg.norm(d, axis=1))[:, None]
    sampled = np.einsum("ki,i->k", d, g) + 0.5 * np.einsum("ki,ij,kj->k", d, B, d)
    assert model_value(0.0, g, B, s) <= sampled.min() + 1e-12


def test_bfgs_converges_to_quadratic_hessian(rng):
    n = 4
    A = random_spd(rng, n, 8.0)
    B = np.eye(n)
    dists = [np.linalg.norm(B - A)]
    for _ in range(40):
        s = 0.1 * rng.normal(size=n)
        B = bfgs_update(B, s, A @ s)
        dists.append(np.linalg.norm(B - A))
    # single updates can overshoot, the trend over blocks of steps cannot
    blocks = np.array(dists[1:]).reshape(4, 10).mean(axis=1)
    assert np.all(np.diff(blocks) < 0)
    assert dists[-1] < 1e-2 * dists[0]
    assert np.allclose(B, B.T)


def test_bfgs_skips_zero_curvature(rng):
    B = np.eye(3)
    s = rng.normal(size=3)
    assert np.array_equal(bfgs_update(B, s, np.zeros(3)), B)


def test_fd_gradient_matches_analytic(rng):
    for _ in range(5):
        x = rng.uniform(-2, 2, 2)
        g, fd = rosenbrock_grad(x), fd_gradient(rosenbrock, x)
        assert np.linalg.norm(g - fd) <= 1e-4 * np.linalg.norm(g)


def test_build_model_rejects_nonfinite():
    with pytest.raises(ModelBuildError):
        build_model(lambda x: np.nan, np.zeros(2))


def test_ratio_one_on_exact_quadratic(rng):
    A = random_spd(rng, 3)
    f = lambda x: 0.5 * x @ A @ x
    x = rng.normal(size=3)
    g = A @ x
    s = solve_subproblem(g, A, 0.1)
    pred = -(g @ s + 0.5 * s @ A @ s)
    rho = reduction_ratio(f(x), f(x + s), pred)
    assert rho == pytest.approx(1.0)
    new, ok = update_radius(rho, 0.1, np.linalg.norm(s), TrmParams())
    assert ok and new >= 0.1


def test_ascent_step_rejected():
    rho = reduction_ratio(1.0, 1.5, 0.2)
    assert rho < 0
    new, ok = update_radius(rho, 0.4, 0.4, TrmParams())
    assert not ok and new == pytest.approx(0.1)


def test_ratio_requires_positive_prediction():
    with pytest.raises(DegenerateSubproblem):
        reduction_ratio(1.0, 0.5, 0.0)


def test_rosenbrock_converges():
    res = refine(rosenbrock, [-1.2, 1.0], TrmParams(max_iterations=500, gtol=1e-12), grad=rosenbrock_grad)
    assert np.linalg.norm(res.x - 1.0) < 1e-6


def test_rosenbrock_with_fd_gradients():
    res = refine(rosenbrock, [-1.2, 1.0], TrmParams(max_iterations=500, gtol=1e-10))
    assert np.linalg.norm(res.x - 1.0) < 1e-5


def test_minimum_start_returns_start():
    res = refine(rosenbrock, [1.0, 1.0], grad=rosenbrock_grad)
    assert np.array_equal(res.x, [1.0, 1.0]) and res.accepted == 0


def test_box_quadratic_analytic(rng):
    A = random_spd(rng, 3, 5.0)
    xstar = np.array([0.3, 0.6, 0.4])
    f = lambda x: 0.5 * (x - xstar) @ A @ (x - xstar)
    g = lambda x: A @ (x - xstar)
    res = refine(f, np.zeros(3), TrmParams(max_iterations=100), box=(np.zeros(3), np.ones(3)), grad=g)
    assert np.linalg.norm(res.x - xstar) < 1e-6


def test_iterates_monotone_in_box_and_radius_bounded(rng):
    A = random_spd(rng, 2, 30.0)
    xstar = np.array([1.4, -0.2])  # outside the box
    f = lambda x: 0.5 * (x - xstar) @ A @ (x - xstar) + np.sin(3 * x[0])
    p = TrmParams(max_iterations=40)
    res = refine(f, [0.5, 0.5], p, box=(np.zeros(2), np.ones(2)), trace=True)
    fs = [r[1] for r in res.rows]
    assert np.all(np.diff(fs) <= 1e-15)
    assert all(0 < r[2] <= p.max_radius for r in res.rows)
    assert np.all((res.x >= 0) & (res.x <= 1))


def test_eval_budget_respected():
    res = refine(rosenbrock, [-1.2, 1.0], TrmParams(max_iterations=500), grad=rosenbrock_grad, max_evals=30)
    assert res.n_evals <= 30


def test_warm_start_reuses_model():
    first = refine(rosenbrock, [-1.2, 1.0], TrmParams(max_iterations=10), grad=rosenbrock_grad)
    again = refine(rosenbrock, first.x, TrmParams(max_iterations=10), grad=rosenbrock_grad, warm=first.state)
    assert again.f <= first.f


def test_never_worse_on_penalized_surrogate(rng):
    spec = make_spec(2, 3, [100, 60], upper=[1.0, 1.0, 1.0], weights=[1.0, 0.7, 1.3])
    coef = rng.uniform(50, 200, (2, 3))

    class Perf:
        def __call__(self, x):
            x = np.asarray(x)
            return np.array([150.0, 110.0]) - np.sum(coef * x + 8 * np.sin(5 * x), axis=-1)

        def jacobian(self, x):
            return -(coef + 40 * np.cos(5 * np.asarray(x)))

    prob = PenalizedProblem(spec, Perf())
    box = flat_bounds(spec)
    for _ in range(100):
        x0 = rng.uniform(0, 1, spec.dim)
        res = refine(prob.objective, x0, TrmParams(max_iterations=10), box, prob.gradient)
        assert res.f <= prob.objective(x0)


def test_trace_csv(tmp_path):
    res = refine(rosenbrock, [-1.2, 1.0], TrmParams(max_iterations=5), grad=rosenbrock_grad, trace=True)
    write_trace(tmp_path / "trm.csv", res.rows)
    lines = (tmp_path / "trm.csv").read_text().splitlines()
    assert lines[0] == "k,f_k,delta_k,rho_k,accepted" and len(lines) == len(res.rows) + 1
