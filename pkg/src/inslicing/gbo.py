"""Bayesian-optimization baseline: GP surrogate with expected improvement.

The GP has a fixed squared-exponential kernel and a zero prior mean;
:func:`gbo_optimize` standardizes the observed values before fitting.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.stats import norm


class ConditioningError(RuntimeError):
    """Kernel matrix could not be factorized even with added jitter."""


def se_kernel(A, B, lengthscale, signal_var):
    """Squared-exponential kernel matrix between the rows of ``A`` and ``B``."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return signal_var * np.exp(-0.5 * np.maximum(d2, 0.0) / lengthscale ** 2)


@dataclass
class GpModel:
    X: np.ndarray
    y: np.ndarray
    lengthscale: float
    signal_var: float
    noise_var: float
    jitter: float
    factor: tuple = field(repr=False)
    alpha: np.ndarray = field(repr=False)

    def predict(self, Xs):
        """Posterior mean and variance at the rows of ``Xs``."""
        Ks = se_kernel(Xs, self.X, self.lengthscale, self.signal_var)
        mean = Ks @ self.alpha
        w = solve_triangular(self.factor[0], Ks.T, lower=True, check_finite=False)
        var = self.signal_var - np.sum(w * w, axis=0)
        return mean, np.maximum(var, 0.0)

    def predict_with_grad(self, x):
        """Mean, variance and their gradients at a single point."""
        x = np.asarray(x, dtype=float)
        k = se_kernel(x[None], self.X, self.lengthscale, self.signal_var)[0]
        dk = -(x[None, :] - self.X) / self.lengthscale ** 2 * k[:, None]
        v = cho_solve(self.factor, k)
        mean = float(k @ self.alpha)
        var = max(float(self.signal_var - k @ v), 0.0)
        return mean, var, dk.T @ self.alpha, -2.0 * dk.T @ v


def gp_fit(X, y, lengthscale=0.2, signal_var=1.0, noise_var=1e-4, max_jitter=1e-2) -> GpModel:
    """Condition a zero-mean GP on ``(X, y)``.

    Jitter is added in decades from 1e-10 when the Cholesky factorization
    fails; beyond ``max_jitter`` a :class:`ConditioningError` is raised.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(X) == 0 or len(X) != len(y):
        raise ValueError("need at least one observation with matching X and y")
    K = se_kernel(X, X, lengthscale, signal_var)
    jitter = 0.0
    while True:
        try:
            factor = cho_factor(K + (noise_var + jitter) * np.eye(len(X)), lower=True)
            break
        except LinAlgError:
            jitter = 1e-10 if jitter == 0 else jitter * 10
            if jitter > max_jitter:
                raise ConditioningError("kernel matrix is numerically singular")
    return GpModel(X, y, lengthscale, signal_var, noise_var, jitter, factor, cho_solve(factor, y))


def expected_improvement(mean, std, best):
    """EI for minimization; zero where ``std`` is zero and ``mean >= best``."""
    mean, std = np.asarray(mean, dtype=float), np.asarray(std, dtype=float)
    gap = best - mean
    safe = np.where(std > 0, std, 1.0)
    z = gap / safe
    ei = np.where(std > 0, gap * norm.cdf(z) + std * norm.pdf(z), np.maximum(gap, 0.0))
    return np.maximum(ei, 0.0)


def ei_at(model: GpModel, x, best):
    mean, var = model.predict(np.atleast_2d(x))
    return expected_improvement(mean, np.sqrt(var), best)


def _neg_ei_and_grad(x, model, best):
    mean, var, dm, dv = model.predict_with_grad(x)
    if var <= 1e-18:
        return -max(best - mean, 0.0), np.zeros_like(x)
    std = np.sqrt(var)
    z = (best - mean) / std
    ei = (best - mean) * norm.cdf(z) + std * norm.pdf(z)
    # dEI/dmean = -cdf(z), dEI/dstd = pdf(z)
    grad = -norm.cdf(z) * dm + norm.pdf(z) * dv / (2 * std)
    return -ei, -grad


@dataclass
class GboParams:
    n_init: int = 10
    budget: int = 100
    n_candidates: int = 2048
    lengthscale: float = 0.2
    signal_var: float = 1.0
    noise_var: float = 1e-4
    local_fraction: float = 0.5  # share of candidates drawn around the incumbent
    local_sigma: float = 0.05
    polish_iters: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.budget >= self.n_init >= 1:
            raise ValueError("need budget >= n_init >= 1")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")


@dataclass
class GboResult:
    x: np.ndarray
    value: float
    feasible: bool
    best_cost: float
    n_evals: int
    rows: list = field(default_factory=list)  # (evaluation, best_cost, feasible, best_value)
    X: np.ndarray = field(default=None, repr=False)
    values: np.ndarray = field(default=None, repr=False)


def gbo_optimize(objective, box, params: GboParams = GboParams(), region=None) -> GboResult:
    """Minimize a blackbox ``objective`` over ``box = (lo, hi)``.

    ``objective(x)`` returns ``(value, cost, feasible)``: the penalized
    value the GP models, the cost to report, and whether the measured
    point met every constraint.  ``region`` (default ``box``) is where the
    initial design and the global candidates are drawn.  The result is the
    best feasible point, or the best penalized point flagged infeasible.
    """
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    rlo, rhi = region if region is not None else (lo, hi)
    rlo, rhi = np.asarray(rlo, float), np.asarray(rhi, float)
    rng = np.random.default_rng(params.seed)
    d = len(lo)
    X, vals, costs, feas = [], [], [], []
    rows = []
    best_cost, best_feas_idx = np.inf, None

    def observe(x):
        nonlocal best_cost, best_feas_idx
        value, cost, ok = objective(x)
        X.append(np.asarray(x, dtype=float))
        vals.append(float(value))
        costs.append(float(cost))
        feas.append(bool(ok))
        if ok and cost < best_cost:
            best_cost, best_feas_idx = float(cost), len(X) - 1
        rows.append((len(X), best_cost, best_feas_idx is not None, float(np.min(vals))))

    for x in rlo + (rhi - rlo) * rng.random((params.n_init, d)):
        observe(x)
    n_global = params.n_candidates - int(params.local_fraction * params.n_candidates)
    while len(X) < params.budget:
        Xa = np.array(X)
        v = np.array(vals)
        # clip huge penalties so a few bad points do not flatten the GP
        v = np.minimum(v, np.quantile(v, 0.9) if len(v) > 5 else v.max())
        mu, sd = v.mean(), v.std() or 1.0
        model = gp_fit(Xa, (v - mu) / sd, params.lengthscale, params.signal_var, params.noise_var)
        incumbent = Xa[int(np.argmin(v))]
        best = float(((v - mu) / sd).min())
        cand = [rlo + (rhi - rlo) * rng.random((n_global, d))]
        n_local = params.n_candidates - n_global
        if n_local:
            cand.append(np.clip(incumbent + params.local_sigma * rng.normal(size=(n_local, d)), lo, hi))
        cand = np.vstack(cand)
        ei = ei_at(model, cand, best)
        x0 = cand[int(np.argmax(ei))]
        if params.polish_iters:
            res = minimize(_neg_ei_and_grad, x0, args=(model, best), jac=True, method="L-BFGS-B",
                           bounds=list(zip(lo, hi)), options={"maxiter": params.polish_iters})
            if np.all(np.isfinite(res.x)) and -res.fun >= ei.max():
                x0 = np.clip(res.x, lo, hi)
        observe(x0)
    k = best_feas_idx if best_feas_idx is not None else int(np.argmin(vals))
    return GboResult(X[k], vals[k], best_feas_idx is not None, best_cost, len(X), rows,
                     np.array(X), np.array(vals))
