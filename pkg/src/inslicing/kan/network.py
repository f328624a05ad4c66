"""Kolmogorov-Arnold network with B-spline edge activations.

Every edge ``(o, p)`` of a layer carries an activation

    phi(x) = w * (b(x) + sum_j c_j B_j(x))

with ``b(x) = x * sigmoid(x)`` and ``B_j`` the cubic B-spline basis on a
uniform grid over ``[-1, 1]``.  Node ``o`` of the next layer sums its
incoming edges.  Inputs are mapped affinely from the resource box onto
``[-1, 1]`` and clamped; hidden pre-activations only clamp the spline
argument so the residual branch keeps gradient outside the grid.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import bspline

GRID_SIZE = 5
DEGREE = 3
GRID_RANGE = (-1.0, 1.0)
BASE_KIND = "silu"


def silu(x):
    return x * expit(x)


def silu_prime(x):
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


BASES = {
    "silu": (silu, silu_prime),
    "zero": (np.zeros_like, np.zeros_like),
    "identity": (lambda x: np.array(x, dtype=float), np.ones_like),
}


@dataclass
class SplineActivation:
    """A single edge function, detached from its layer."""

    grid: np.ndarray
    coefficients: np.ndarray
    weight: float = 1.0
    base_kind: str = BASE_KIND
    degree: int = DEGREE
    clamp_input: bool = True

    def __call__(self, x):
        return spline_eval(self, x)


def spline_eval(act: SplineActivation, x):
    """``w * (b(x) + spline(x))``; the spline argument is clamped to the grid."""
    x = np.asarray(x, dtype=float)
    lo, hi = bspline.domain(act.grid, act.degree)
    xc = np.clip(x, lo, hi)
    base = BASES[act.base_kind][0](xc if act.clamp_input else x)
    spl = bspline.evaluate(xc, act.grid, act.degree) @ act.coefficients
    return act.weight * (base + spl)


class KanLayer:
    def __init__(self, n_in, n_out, coef, weight, knots=None, degree=DEGREE,
                 base_kind=BASE_KIND, clamp_input=False):
        self.n_in = n_in
        self.n_out = n_out
        self.degree = degree
        self.knots = bspline.uniform_knots(GRID_SIZE, degree, *GRID_RANGE) if knots is None else np.asarray(knots, float)
        self.coef = np.asarray(coef, dtype=float).reshape(n_out, n_in, -1)
        self.weight = np.asarray(weight, dtype=float).reshape(n_out, n_in)
        self.base_kind = base_kind
        # the input layer clamps its whole argument, hidden layers only the spline part
        self.clamp_input = clamp_input
        if self.coef.shape[-1] != len(self.knots) - degree - 1:
            raise ValueError("coefficient count does not match knot vector")
        self._uniform = bspline.is_uniform(self.knots)

    @classmethod
    def random(cls, n_in, n_out, rng, noise=0.1, **kwargs):
        nb = GRID_SIZE + DEGREE
        coef = rng.normal(0.0, noise, size=(n_out, n_in, nb))
        weight = rng.uniform(-1.0, 1.0, size=(n_out, n_in)) / np.sqrt(n_in)
        return cls(n_in, n_out, coef, weight, **kwargs)

    @property
    def grid_range(self):
        return bspline.domain(self.knots, self.degree)

    def activation(self, o, p) -> SplineActivation:
        return SplineActivation(self.knots.copy(), self.coef[o, p].copy(), float(self.weight[o, p]),
                                self.base_kind, self.degree, self.clamp_input)

    def forward(self, a, keep=False):
        """``a``: ``(B, n_in)`` -> ``(B, n_out)``; optionally keep a backward cache."""
        lo, hi = self.grid_range
        ac = np.clip(a, lo, hi)
        base_fn, base_d = BASES[self.base_kind]
        arg = ac if self.clamp_input else a
        base = base_fn(arg)
        # work in (input, batch, ...) layout so the edge sums are batched matmuls
        act = ac.T
        if keep:
            B, dB = bspline.evaluate(act, self.knots, self.degree, True, self._uniform)
        else:
            B, dB = bspline.evaluate(act, self.knots, self.degree, False, self._uniform), None
        coef_t = self.coef.transpose(1, 2, 0)  # (i, n, o)
        pre = base.T[:, :, None] + B @ coef_t  # (i, b, o)
        out = np.einsum("ibo,io->bo", pre, self.weight.T)
        cache = None
        if keep:
            inside = ((a >= lo) & (a <= hi)).astype(float)
            cache = (arg, B, dB, pre, inside, base_d)
        return out, cache

    def backward(self, cache, g, need_params=True):
        """Backpropagate ``g = dL/d(out)``; returns ``(dL/da, dcoef, dweight)``."""
        arg, B, dB, pre, inside, base_d = cache
        gw = g[None, :, :] * self.weight.T[:, None, :]  # (i, b, o)
        dcoef = dweight = None
        if need_params:
            dweight = np.einsum("bo,ibo->oi", g, pre)
            dcoef = (gw.transpose(0, 2, 1) @ B).transpose(1, 0, 2)
        dspl = dB @ self.coef.transpose(1, 2, 0)  # (i, b, o)
        dbase = base_d(arg)
        if self.clamp_input:
            dbase = dbase * inside
        da = np.einsum("ibo,ibo->bi", gw, dspl) * inside + gw.sum(axis=2).T * dbase
        return da, dcoef, dweight


class KanModel:
    """Stack of KAN layers with input normalization and output scaling."""

    def __init__(self, layers, input_lo, input_hi, out_shift=0.0, out_scale=1.0):
        self.layers = list(layers)
        self.input_lo = np.asarray(input_lo, dtype=float)
        self.input_hi = np.asarray(input_hi, dtype=float)
        self.out_shift = float(out_shift)
        self.out_scale = float(out_scale)
        self.meta = {}  # free-form annotations, e.g. held-out error
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.n_out != nxt.n_in:
                raise ValueError("layer dimensions do not chain")
        if self.layers[-1].n_out != 1:
            raise ValueError("model must have a single output")
        if self.input_lo.shape != (self.input_dim,) or self.input_hi.shape != (self.input_dim,):
            raise ValueError("normalization bounds must match the input dimension")

    @classmethod
    def create(cls, input_lo, input_hi, hidden=(4, 4, 4), seed=0):
        input_lo = np.atleast_1d(np.asarray(input_lo, dtype=float))
        widths = [len(input_lo), *hidden, 1]
        rng = np.random.default_rng(seed)
        layers = [KanLayer.random(n_in, n_out, rng, clamp_input=(k == 0))
                  for k, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:]))]
        return cls(layers, input_lo, input_hi)

    @property
    def input_dim(self):
        return self.layers[0].n_in

    @property
    def widths(self):
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    # -- normalization ---------------------------------------------------

    def _span(self):
        span = self.input_hi - self.input_lo
        return np.where(span > 0, span, 1.0)

    def normalize(self, x):
        lo, hi = GRID_RANGE
        return lo + (hi - lo) * (x - self.input_lo) / self._span()

    def normalize_axis(self, values, p):
        lo, hi = GRID_RANGE
        return lo + (hi - lo) * (np.asarray(values, float) - self.input_lo[p]) / self._span()[p]

    def denormalize(self, z):
        lo, hi = GRID_RANGE
        return self.input_lo + (z - lo) / (hi - lo) * self._span()

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} inputs, got {x.shape[-1]}")
        return x, single

    # -- evaluation ------------------------------------------------------

    def network(self, z, keep=False):
        caches = []
        a = z
        for layer in self.layers:
            a, c = layer.forward(a, keep)
            caches.append(c)
        return a[:, 0], caches

    def forward(self, x):
        """Predicted performance for one input vector or a batch of rows."""
        x, single = self._check(x)
        out, _ = self.network(self.normalize(x))
        y = self.out_shift + self.out_scale * out
        return float(y[0]) if single else y

    __call__ = forward

    def value_and_grad(self, x):
        """Prediction and its gradient w.r.t. the raw inputs."""
        x, single = self._check(x)
        out, caches = self.network(self.normalize(x), keep=True)
        g = np.full((x.shape[0], 1), self.out_scale)
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            g, _, _ = layer.backward(cache, g, need_params=False)
        lo, hi = GRID_RANGE
        g = g * (hi - lo) / self._span()
        y = self.out_shift + self.out_scale * out
        if single:
            return float(y[0]), g[0]
        return y, g

    def grad(self, x):
        return self.value_and_grad(x)[1]

    # -- parameters ------------------------------------------------------

    def get_params(self):
        return np.concatenate([np.concatenate([l.coef.ravel(), l.weight.ravel()]) for l in self.layers])

    def set_params(self, theta):
        k = 0
        for layer in self.layers:
            n = layer.coef.size
            layer.coef = theta[k:k + n].reshape(layer.coef.shape).copy()
            k += n
            n = layer.weight.size
            layer.weight = theta[k:k + n].reshape(layer.weight.shape).copy()
            k += n

    def loss_and_param_grad(self, z, target):
        """Mean-squared error on the normalized scale and its gradient."""
        out, caches = self.network(z, keep=True)
        resid = out - target
        loss = float(np.mean(resid ** 2))
        g = (2.0 / len(target)) * resid[:, None]
        grads = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            g, dcoef, dweight = layer.backward(cache, g)
            grads.append(np.concatenate([dcoef.ravel(), dweight.ravel()]))
        return loss, np.concatenate(grads[::-1])

    # -- serialization ---------------------------------------------------

    def to_dict(self):
        return {
            "widths": self.widths,
            "degree": self.layers[0].degree,
            "input_lo": self.input_lo.tolist(),
            "input_hi": self.input_hi.tolist(),
            "out_shift": self.out_shift,
            "out_scale": self.out_scale,
            "meta": self.meta,
            "layers": [
                {
                    "n_in": l.n_in,
                    "n_out": l.n_out,
                    "knots": l.knots.tolist(),
                    "coef": l.coef.tolist(),
                    "weight": l.weight.tolist(),
                    "base": l.base_kind,
                    "clamp_input": l.clamp_input,
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        degree = int(doc.get("degree", DEGREE))
        layers = [
            KanLayer(d["n_in"], d["n_out"], d["coef"], d["weight"], d["knots"], degree,
                     d.get("base", BASE_KIND), bool(d.get("clamp_input", k == 0)))
            for k, d in enumerate(doc["layers"])
        ]
        model = cls(layers, doc["input_lo"], doc["input_hi"], doc["out_shift"], doc["out_scale"])
        model.meta = dict(doc.get("meta", {}))
        return model

    def save(self, path):
        # json writes floats with repr precision, so the round trip is exact
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def copy(self):
        return KanModel.from_dict(self.to_dict())


def identity_model(n_inputs=1, lo=-1.0, hi=1.0):
    """A single-layer network whose output is the sum of its inputs."""
    nb = GRID_SIZE + DEGREE
    layer = KanLayer(n_inputs, 1, np.zeros((1, n_inputs, nb)), np.ones((1, n_inputs)),
                     base_kind="identity", clamp_input=True)
    return KanModel([layer], np.full(n_inputs, lo), np.full(n_inputs, hi))
