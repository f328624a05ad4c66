"""Vectorized B-spline basis on uniform extended knot vectors."""
import numpy as np


def uniform_knots(grid_size=5, degree=3, lo=-1.0, hi=1.0):
    """Knot vector with ``grid_size`` uniform intervals on ``[lo, hi]``.

    The vector is extended by ``degree`` knots on each side so that the
    ``grid_size + degree`` basis functions form a partition of unity on the
    whole of ``[lo, hi]``.  Length is ``grid_size + 2 * degree + 1``.
    """
    h = (hi - lo) / grid_size
    return lo + h * np.arange(-degree, grid_size + degree + 1, dtype=float)


def domain(knots, degree):
    return knots[degree], knots[-degree - 1]


def basis(x, knots, degree):
    """All degree-``degree`` basis functions at ``x``.

    Cox-de Boor recursion, vectorized over an arbitrary-shaped ``x``.
    Returns an array of shape ``x.shape + (len(knots) - degree - 1,)``.
    Points must lie inside the domain (callers clamp first); the extended
    knots make the right end of the domain an interior point.
    """
    x = np.asarray(x, dtype=float)[..., None]
    t = knots
    B = ((x >= t[:-1]) & (x < t[1:])).astype(float)
    for d in range(1, degree + 1):
        left = (x - t[: -d - 1]) / (t[d:-1] - t[: -d - 1])
        right = (t[d + 1 :] - x) / (t[d + 1 :] - t[1:-d])
        B = left * B[..., :-1] + right * B[..., 1:]
    return B


def basis_and_derivative(x, knots, degree):
    """Basis values and their first derivatives in ``x``."""
    x = np.asarray(x, dtype=float)
    lower = basis(x, knots, degree - 1)
    t = knots
    d = degree
    a = d / (t[d:-1] - t[: -d - 1])
    b = d / (t[d + 1 :] - t[1:-d])
    dB = a * lower[..., :-1] - b * lower[..., 1:]
    xe = x[..., None]
    left = (xe - t[: -d - 1]) / (t[d:-1] - t[: -d - 1])
    right = (t[d + 1 :] - xe) / (t[d + 1 :] - t[1:-d])
    B = left * lower[..., :-1] + right * lower[..., 1:]
    return B, dB


def is_uniform(knots):
    h = np.diff(knots)
    return bool(np.allclose(h, h[0], rtol=0, atol=1e-12 * max(1.0, abs(h[0]))))


def uniform_cubic(x, knots, derivative=False):
    """Closed-form cubic basis on a uniform knot vector.

    Same values as :func:`basis` with ``degree=3``; only the four non-zero
    cardinal pieces are computed per point and scattered into place.
    Points must already be clamped to the domain.
    """
    x = np.asarray(x, dtype=float)
    h = knots[1] - knots[0]
    nb = len(knots) - 4
    s = (x - knots[0]) / h
    m = np.clip(s.astype(np.int64), 3, nb - 1)
    u = (s - m).ravel()
    u2 = u * u
    u3 = u2 * u
    w = 1.0 - u
    flat = np.arange(x.size) * nb + (m.ravel() - 3)
    out = np.zeros(x.size * nb)
    out[flat] = w * w * w / 6.0
    out[flat + 1] = (3 * u3 - 6 * u2 + 4) / 6.0
    out[flat + 2] = (-3 * u3 + 3 * u2 + 3 * u + 1) / 6.0
    out[flat + 3] = u3 / 6.0
    out = out.reshape(x.shape + (nb,))
    if not derivative:
        return out
    ih = 0.5 / h
    d = np.zeros(x.size * nb)
    d[flat] = -w * w * ih
    d[flat + 1] = (3 * u2 - 4 * u) * ih
    d[flat + 2] = (-3 * u2 + 2 * u + 1) * ih
    d[flat + 3] = u2 * ih
    return out, d.reshape(out.shape)


def evaluate(x, knots, degree, derivative=False, uniform=None):
    """Basis (and optionally derivative), using the cubic fast path when possible."""
    if uniform is None:
        uniform = is_uniform(knots)
    if degree == 3 and uniform:
        return uniform_cubic(x, knots, derivative)
    if derivative:
        return basis_and_derivative(x, knots, degree)
    return basis(x, knots, degree)
