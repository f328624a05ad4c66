"""Trust-region refinement with a secant Hessian model and dogleg steps.

Each iteration minimizes the quadratic model

    m_k(s) = f_k + g_k^T s + 0.5 s^T B_k s,   ||s|| <= delta_k

and accepts the step when the ratio of actual to predicted reduction is
large enough.  Iterates are kept inside a box by clipping; coordinates
pinned at a bound with the gradient pushing outward are frozen for the
step so the model is solved over the free variables only.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh
from scipy.optimize import brentq


class ModelBuildError(RuntimeError):
    """The objective is not finite at the expansion point."""


class DegenerateSubproblem(RuntimeError):
    """The subproblem step predicts no decrease."""


@dataclass
class TrmParams:
    initial_radius: float = 0.2
    max_iterations: int = 25  # K
    shrink: float = 0.25
    expand: float = 2.0
    max_radius: float = 1.0
    eta: float = 0.05
    fd_step: float = 1e-6
    gtol: float = 1e-8
    min_curvature: float = 1e-12

    def __post_init__(self):
        if not 0 < self.shrink < 1 < self.expand:
            raise ValueError("need 0 < shrink < 1 < expand")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if not 0 < self.initial_radius <= self.max_radius:
            raise ValueError("need 0 < initial_radius <= max_radius")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass
class TrustRegionState:
    x: np.ndarray
    radius: float
    B: np.ndarray
    f: float
    grad: np.ndarray


@dataclass
class RefineResult:
    x: np.ndarray
    f: float
    iterations: int
    n_evals: int
    accepted: int
    rows: list = field(default_factory=list)  # (k, f_k, delta_k, rho_k, accepted)
    state: TrustRegionState = None  # final model, reusable as a warm start


def fd_gradient(f, x, h=1e-6):
    """Central-difference gradient."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def build_model(f, x, grad=None, B=None, h=1e-6):
    """Value, gradient and Hessian approximation at ``x``.

    ``grad`` is an analytic gradient callable; without it central
    differences with step ``h`` are used.  ``B`` defaults to the identity.
    """
    x = np.asarray(x, dtype=float)
    fx = float(f(x))
    if not np.isfinite(fx):
        raise ModelBuildError("objective is not finite at the expansion point")
    g = np.asarray(grad(x), dtype=float) if grad is not None else fd_gradient(f, x, h)
    if B is None:
        B = np.eye(len(x))
    return fx, g, B


def bfgs_update(B, s, y, min_curvature=1e-12):
    """Secant update of ``B`` from a step ``s`` and gradient change ``y``.

    Skipped (``B`` returned unchanged) when ``s^T y`` is below
    ``min_curvature`` so the approximation stays positive definite.
    """
    sy = float(s @ y)
    Bs = B @ s
    sBs = float(s @ Bs)
    if sy <= min_curvature or sBs <= 0:
        return B
    B = B - np.outer(Bs, Bs) / sBs + np.outer(y, y) / sy
    return 0.5 * (B + B.T)


def model_value(f, g, B, s):
    return f + g @ s + 0.5 * s @ B @ s


def cauchy_point(g, B, delta):
    """Minimizer of the model along ``-g`` inside the ball."""
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0:
        return np.zeros_like(g)
    gBg = float(g @ B @ g)
    tau = 1.0 if gBg <= 0 else min(1.0, gnorm ** 3 / (delta * gBg))
    return -tau * delta / gnorm * g


def solve_subproblem(g, B, delta):
    """Dogleg step when ``B`` is positive definite, otherwise the Cauchy point.

    Boundary steps of a positive definite model are replaced by the exact
    boundary minimizer when that gives a lower model value.
    """
    g = np.asarray(g, dtype=float)
    if delta <= 0:
        raise ValueError("radius must be positive")
    if not np.any(g):
        return np.zeros_like(g)
    try:
        pB = -cho_solve(cho_factor(B), g)
    except (LinAlgError, ValueError):
        return cauchy_point(g, B, delta)
    if np.linalg.norm(pB) <= delta:
        return pB
    gBg = float(g @ B @ g)
    pU = -(g @ g) / gBg * g
    nU = np.linalg.norm(pU)
    if nU >= delta:
        s = -delta / np.linalg.norm(g) * g
    else:
        d = pB - pU
        a, b, c = d @ d, 2 * pU @ d, pU @ pU - delta ** 2
        tau = (-b + np.sqrt(max(b * b - 4 * a * c, 0.0))) / (2 * a)
        s = pU + tau * d
        # guard against round-off pushing the step past the boundary
        s = s * min(1.0, delta / np.linalg.norm(s))
    exact = _boundary_step(g, B, delta)
    if exact is not None and model_value(0.0, g, B, exact) < model_value(0.0, g, B, s):
        return exact
    return s


def _boundary_step(g, B, delta):
    """Exact minimizer on ||s|| = delta for positive definite ``B``.

    Solves ||(B + lam I)^-1 g|| = delta for lam > 0 in the eigenbasis.  The
    dogleg path can cut well inside the boundary optimum when ``B`` is
    ill-conditioned; this closes that gap at the cost of one eigh.
    """
    try:
        w, V = eigh(B)
    except LinAlgError:
        return None
    gt = V.T @ g
    norm = lambda lam: np.linalg.norm(gt / (w + lam))
    hi = np.linalg.norm(g) / delta
    if w[0] <= 0 or not norm(0.0) > delta:
        return None
    lam = brentq(lambda lam: 1.0 / norm(lam) - 1.0 / delta, 0.0, hi, xtol=1e-14, rtol=1e-12)
    s = -V @ (gt / (w + lam))
    return s * min(1.0, delta / np.linalg.norm(s))


def reduction_ratio(f_k, f_trial, predicted):
    """rho = actual reduction / predicted reduction."""
    if not predicted > 0:
        raise DegenerateSubproblem(f"predicted reduction {predicted!r} is not positive")
    if not np.isfinite(f_trial):
        return -np.inf
    return (f_k - f_trial) / predicted


def update_radius(rho, delta, step_norm, params: TrmParams):
    """New radius and whether the step is accepted."""
    if rho < 0.25:
        new = params.shrink * delta
    elif rho > 0.75 and step_norm >= (1 - 1e-9) * delta:
        new = min(params.expand * delta, params.max_radius)
    else:
        new = delta
    return new, bool(rho >= params.eta)


def _free_mask(x, g, lo, hi, tol=1e-12):
    at_lo = (x <= lo + tol) & (g > 0)
    at_hi = (x >= hi - tol) & (g < 0)
    return ~(at_lo | at_hi)


def refine(f, x_start, params: TrmParams = TrmParams(), box=None, grad=None, max_evals=None,
           trace=False, warm: TrustRegionState = None) -> RefineResult:
    """Run up to ``params.max_iterations`` trust-region iterations from ``x_start``.

    ``box`` is ``(lo, hi)``.  Every call of ``f`` or ``grad`` counts one
    evaluation against ``max_evals``.  ``warm`` carries the Hessian
    approximation and radius of an earlier run on the same objective.  The
    returned point never has a larger objective than the start.
    """
    x = np.asarray(x_start, dtype=float).copy()
    n = len(x)
    lo, hi = box if box is not None else (np.full(n, -np.inf), np.full(n, np.inf))
    lo, hi = np.broadcast_to(lo, x.shape), np.broadcast_to(hi, x.shape)
    x = np.clip(x, lo, hi)
    budget = np.inf if max_evals is None else max_evals
    evals = 0

    def cost_of_grad():
        return 1 if grad is not None else 2 * n

    fx, g, B = build_model(f, x, grad, None if warm is None else warm.B.copy(), h=params.fd_step)
    evals += 1 + cost_of_grad()
    delta = params.initial_radius if warm is None else min(max(warm.radius, params.initial_radius),
                                                            params.max_radius)
    rows = []
    accepted_count = 0
    k = 0
    for k in range(params.max_iterations):
        if evals + 1 > budget:
            break
        free = _free_mask(x, g, lo, hi)
        if np.linalg.norm(g[free]) <= params.gtol:
            break
        s = np.zeros(n)
        s[free] = solve_subproblem(g[free], B[np.ix_(free, free)], delta)
        x_trial = np.clip(x + s, lo, hi)
        s = x_trial - x
        predicted = -(g @ s + 0.5 * s @ B @ s)
        if not predicted > 0:
            if np.linalg.norm(s) > 0 and delta > 1e-12:
                # clipping spoiled the step; retry in a smaller region
                delta *= params.shrink
                continue
            break
        f_trial = float(f(x_trial))
        evals += 1
        rho = reduction_ratio(fx, f_trial, predicted)
        delta, ok = update_radius(rho, delta, np.linalg.norm(s), params)
        if ok and f_trial <= fx:
            accepted_count += 1
            if evals + cost_of_grad() > budget:
                x, fx = x_trial, f_trial
                if trace:
                    rows.append((k, fx, delta, float(rho), True))
                break
            g_new = np.asarray(grad(x_trial), dtype=float) if grad is not None else fd_gradient(f, x_trial, params.fd_step)
            evals += cost_of_grad()
            B = bfgs_update(B, s, g_new - g, params.min_curvature)
            x, fx, g = x_trial, f_trial, g_new
        else:
            ok = False
        if trace:
            rows.append((k, fx, delta, float(rho), ok))
    return RefineResult(x, fx, k + 1 if params.max_iterations else 0, evals, accepted_count, rows,
                        TrustRegionState(x, delta, B, fx, g))


def write_trace(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "f_k", "delta_k", "rho_k", "accepted"])
        for k, fk, dk, rk, acc in rows:
            w.writerow([k, repr(float(fk)), repr(float(dk)), repr(float(rk)), int(acc)])
