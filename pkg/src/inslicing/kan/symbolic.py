"""Closed-form surrogates from trained networks.

A :class:`SymbolicExpression` is a flat sum of per-input terms

    a * x_p,  a * sin(b * x_p + c),  and a constant,

written in the raw input units of the model.  Extraction fits each
one-dimensional component of the network against this library by least
squares and keeps the simplest candidate whose error is within tolerance
of the best one.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .network import KanModel

KINDS = ("linear", "sine", "constant")
TWO_PI = 2.0 * np.pi


@dataclass
class Term:
    kind: str
    coefficients: tuple
    input: int = -1  # zero-based input index; -1 for the constant

    def __call__(self, X):
        X = np.atleast_2d(X)
        if self.kind == "constant":
            return np.full(len(X), self.coefficients[0])
        x = X[:, self.input]
        if self.kind == "linear":
            return self.coefficients[0] * x
        a, b, c = self.coefficients
        return a * np.sin(b * x + c)


def _num(v):
    return format(float(v), ".10g")


@dataclass
class SymbolicExpression:
    terms: list = field(default_factory=list)
    fit_rmse: float = float("nan")
    output_range: float = float("nan")
    low_fidelity: bool = False

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(len(X))
        for t in self.terms:
            out = out + t(X)
        return out

    def kinds(self, p):
        """Sorted term kinds involving input ``p``."""
        return sorted(t.kind for t in self.terms if t.input == p)

    def constant(self):
        return sum(t.coefficients[0] for t in self.terms if t.kind == "constant")

    def formula(self, names=None):
        parts = []
        for t in self.terms:
            name = names[t.input] if names and t.input >= 0 else f"x{t.input + 1}"
            if t.kind == "constant":
                coef, body = t.coefficients[0], ""
            elif t.kind == "linear":
                coef, body = t.coefficients[0], f"*{name}"
            else:
                a, b, c = t.coefficients
                sign = "+" if c >= 0 else "-"
                coef, body = a, f"*sin({_num(b)}*{name} {sign} {_num(abs(c))})"
            parts.append((coef, body))
        if not parts:
            return "0"
        text = ""
        for k, (coef, body) in enumerate(parts):
            if k == 0:
                text = f"{_num(coef)}{body}"
            else:
                text += f" {'-' if coef < 0 else '+'} {_num(abs(coef))}{body}"
        return text

    def __str__(self):
        return self.formula()


_NUM = r"[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?"
_TERM = re.compile(
    rf"^(?P<coef>{_NUM})(?:\*(?:sin\((?P<b>{_NUM})\*x(?P<sp>\d+) (?P<cs>[-+]) (?P<c>{_NUM})\)|x(?P<lp>\d+)))?$"
)


def parse_formula(text) -> SymbolicExpression:
    """Inverse of :meth:`SymbolicExpression.formula` for ``x<k>`` names."""
    tokens = text.strip().split(" ")
    # re-join the " +/- c)" pieces that belong inside sin(...)
    chunks, sign, buf = [], 1.0, []
    for tok in tokens:
        if buf:
            buf.append(tok)
            if tok.endswith(")"):
                chunks.append((sign, " ".join(buf)))
                buf = []
            continue
        if tok in "+-":
            sign = -1.0 if tok == "-" else 1.0
            continue
        if tok.startswith("-") and not chunks:
            sign, tok = -1.0, tok[1:]
        if "sin(" in tok and not tok.endswith(")"):
            buf = [tok]
            continue
        chunks.append((sign, tok))
    terms = []
    for sign, chunk in chunks:
        m = _TERM.match(chunk)
        if m is None:
            raise ValueError(f"cannot parse term {chunk!r}")
        a = sign * float(m["coef"])
        if m["b"] is not None:
            c = float(m["c"]) * (-1.0 if m["cs"] == "-" else 1.0)
            terms.append(Term("sine", (a, float(m["b"]), c), int(m["sp"]) - 1))
        elif m["lp"] is not None:
            terms.append(Term("linear", (a,), int(m["lp"]) - 1))
        else:
            terms.append(Term("constant", (a,)))
    return SymbolicExpression(terms)


# -- one-dimensional fitting ---------------------------------------------


def _design(x, freqs_phases=(), linear=True):
    cols = [np.ones_like(x)]
    if linear:
        cols.append(x)
    for b, c in freqs_phases:
        cols.append(np.sin(b * x + c))
    return np.stack(cols, axis=1)


def _sine_model(params, x, n_sines, linear):
    d = params[0]
    k = 1
    y = np.full_like(x, d)
    if linear:
        y = y + params[1] * x
        k = 2
    for s in range(n_sines):
        a, b, c = params[k + 3 * s: k + 3 * s + 3]
        y = y + a * np.sin(b * x + c)
    return y


def _fit_sines(x, y, n_sines, linear, freq_grid):
    """Greedy frequency scan then joint nonlinear least squares."""
    found = []
    base = _design(x, (), linear)
    for _ in range(n_sines):
        best = None
        for b in freq_grid:
            A = np.column_stack([base, *[np.sin(bb * x + cc) for bb, cc in found],
                                 np.sin(b * x), np.cos(b * x)])
            coef, *_ = np.linalg.lstsq(A, y, rcond=None)
            r = float(np.sum((A @ coef - y) ** 2))
            if best is None or r < best[0]:
                best = (r, b, coef[-2], coef[-1])
        _, b, s_coef, c_coef = best
        # s*sin(bx) + c*cos(bx) = amp * sin(bx + phase)
        found.append((b, float(np.arctan2(c_coef, s_coef))))
    A = _design(x, found, linear)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    n_lin = 2 if linear else 1
    p0 = list(coef[:n_lin])
    for s, (b, c) in enumerate(found):
        p0 += [coef[n_lin + s], b, c]
    res = least_squares(lambda p: _sine_model(p, x, n_sines, linear) - y, np.asarray(p0, float),
                        method="lm", xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=4000)
    return res.x


def _canonical_sine(a, b, c):
    if b < 0:
        a, b, c = -a, -b, -c
    if a < 0:
        a, c = -a, c + np.pi
    return float(a), float(b), float(np.mod(c, TWO_PI))


def fit_component(x, y, tol, max_sines=2, freq_grid=None):
    """Fit ``y(x)`` with the simplest adequate library candidate.

    Returns ``(constant, terms, rmse)``; ``terms`` use input index ``-1``
    (callers assign the real index).  A candidate is adequate when its RMSE
    is within ``tol`` of the best candidate's RMSE.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    width = float(x.max() - x.min()) or 1.0
    if freq_grid is None:
        # from a third of a period to about six periods over the interval
        freq_grid = np.linspace(0.3, 12.0 * np.pi, 400) / width
    candidates = []

    def rmse(pred):
        return float(np.sqrt(np.mean((pred - y) ** 2)))

    candidates.append((0, rmse(np.full_like(y, y.mean())), float(y.mean()), []))
    A = _design(x)
    (d, k), *_ = np.linalg.lstsq(A, y, rcond=None)
    candidates.append((1, rmse(A @ np.array([d, k])), float(d), [("linear", (float(k),))]))
    for n in range(1, max_sines + 1):
        for linear in (False, True):
            p = _fit_sines(x, y, n, linear, freq_grid)
            terms = []
            off = 1
            if linear:
                terms.append(("linear", (float(p[1]),)))
                off = 2
            for s in range(n):
                terms.append(("sine", _canonical_sine(*p[off + 3 * s: off + 3 * s + 3])))
            complexity = 1 + 3 * n + (1 if linear else 0)
            candidates.append((complexity, rmse(_sine_model(p, x, n, linear)), float(p[0]), terms))
    best = min(c[1] for c in candidates)
    for complexity, err, const, terms in sorted(candidates, key=lambda c: (c[0], c[1])):
        if err <= best + tol:
            return const, terms, err
    raise AssertionError("unreachable")


def fit_activation(act, lo=-1.0, hi=1.0, tol=None, n_points=201, max_sines=2):
    """Fit one edge activation on ``[lo, hi]``; returns a SymbolicExpression in ``x1``."""
    x = np.linspace(lo, hi, n_points)
    y = act(x)
    if tol is None:
        tol = 1e-3 * (float(np.ptp(y)) or 1.0)
    const, terms, err = fit_component(x, y, tol, max_sines)
    expr = SymbolicExpression([Term(k, c, 0) for k, c in terms] + [Term("constant", (const,))])
    expr.fit_rmse = err
    expr.output_range = float(np.ptp(y))
    return expr


# -- whole-model extraction ----------------------------------------------


def components(model: KanModel, n_points=201, n_background=64, seed=0):
    """One-dimensional components of ``model`` in raw input units.

    For a single-layer network these are exactly the scaled edge
    activations.  Deeper networks are reduced to first-order additive
    components by averaging over a background sample of the input box.
    Returns ``(grids, values, constant)``.
    """
    lo, hi = model.input_lo, model.input_hi
    grids = [np.linspace(lo[p], hi[p], n_points) for p in range(model.input_dim)]
    if len(model.layers) == 1:
        layer = model.layers[0]
        values = [model.out_scale * layer.activation(0, p)(model.normalize_axis(g, p))
                  for p, g in enumerate(grids)]
        return grids, values, model.out_shift
    rng = np.random.default_rng(seed)
    bg = lo + (hi - lo) * rng.random((n_background, model.input_dim))
    mean = float(np.mean(model(bg)))
    values = []
    for p, g in enumerate(grids):
        X = np.repeat(bg[None], len(g), axis=0)
        X[:, :, p] = g[:, None]
        pd = model(X.reshape(-1, model.input_dim)).reshape(len(g), -1).mean(axis=1)
        values.append(pd - mean)
    return grids, values, mean


def extract_symbolic(model: KanModel, rel_tol=0.005, max_sines=2, fidelity=0.05,
                     n_check=1000, seed=0) -> SymbolicExpression:
    """Closed-form additive approximation of a trained model.

    ``rel_tol`` (fraction of the output range) is the model-selection
    tolerance; the expression is flagged ``low_fidelity`` when its RMSE
    against the network exceeds ``fidelity`` times the output range.
    """
    rng = np.random.default_rng(seed)
    lo, hi = model.input_lo, model.input_hi
    X = lo + (hi - lo) * rng.random((n_check, model.input_dim))
    y_net = model(X)
    out_range = float(np.ptp(y_net)) or 1.0
    grids, values, constant = components(model, seed=seed)
    terms = []
    for p, (g, v) in enumerate(zip(grids, values)):
        if np.ptp(g) == 0:
            constant += float(np.mean(v))
            continue
        const, found, _ = fit_component(g, v, rel_tol * out_range, max_sines)
        constant += const
        terms += [Term(kind, coef, p) for kind, coef in found]
    terms.append(Term("constant", (float(constant),)))
    expr = SymbolicExpression(terms)
    expr.fit_rmse = float(np.sqrt(np.mean((expr(X) - y_net) ** 2)))
    expr.output_range = out_range
    expr.low_fidelity = expr.fit_rmse > fidelity * out_range
    return expr
