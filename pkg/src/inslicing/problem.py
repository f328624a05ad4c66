"""Slice-configuration problem: cost, constraints, feasibility and penalties.

A configuration is a ``(num_slices, num_resources)`` array ``x`` whose entry
``x[i, r]`` is the normalized amount of resource ``r`` given to slice ``i``.

Performance evaluators are callables mapping a configuration to a vector of
raw per-slice performance values (latency in ms for latency slices).  The
:class:`ProblemSpec` knows, per slice, whether the raw value must stay
below (``"max"``, latency) or above (``"min"``) its threshold, and converts
raw values into a satisfaction score that is non-negative iff the slice
requirement holds.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

FEAS_TOL = 1e-6
DEFAULT_PENALTY = 1e3

RESOURCE_NAMES = (
    "bandwidth_ul",
    "bandwidth_dl",
    "mcs_offset_ul",
    "mcs_offset_dl",
    "backhaul_bw",
    "cpu_ratio",
)

# "max": raw value is a latency and must stay <= threshold.
# "min": raw value is a score and must stay >= threshold.
SENSES = ("max", "min")

PerfFn = Callable[[np.ndarray], np.ndarray]


class ShapeError(ValueError):
    """Raised when an array does not match the problem dimensions."""


@dataclass
class ProblemSpec:
    num_slices: int
    num_resources: int
    cost_weights: np.ndarray
    lower_bounds: np.ndarray
    upper_bounds: np.ndarray
    thresholds: np.ndarray
    threshold_sense: list = None
    slice_lower_bounds: Optional[np.ndarray] = None
    slice_upper_bounds: Optional[np.ndarray] = None
    slice_names: list = None
    resource_names: list = None

    def __post_init__(self):
        self.cost_weights = np.asarray(self.cost_weights, dtype=float)
        self.lower_bounds = np.asarray(self.lower_bounds, dtype=float)
        self.upper_bounds = np.asarray(self.upper_bounds, dtype=float)
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        if self.threshold_sense is None:
            self.threshold_sense = ["max"] * self.num_slices
        if self.slice_names is None:
            self.slice_names = [f"slice_{i}" for i in range(self.num_slices)]
        if self.resource_names is None:
            if self.num_resources == len(RESOURCE_NAMES):
                self.resource_names = list(RESOURCE_NAMES)
            else:
                self.resource_names = [f"r{r}" for r in range(self.num_resources)]
        if self.slice_lower_bounds is not None:
            self.slice_lower_bounds = np.asarray(self.slice_lower_bounds, dtype=float)
        if self.slice_upper_bounds is not None:
            self.slice_upper_bounds = np.asarray(self.slice_upper_bounds, dtype=float)
        self.validate()

    def validate(self):
        if self.num_slices < 1 or self.num_resources < 1:
            raise ValueError("num_slices and num_resources must be >= 1")
        R, I = self.num_resources, self.num_slices
        for name in ("cost_weights", "lower_bounds", "upper_bounds"):
            if getattr(self, name).shape != (R,):
                raise ShapeError(f"{name} must have length {R}")
        if self.thresholds.shape != (I,):
            raise ShapeError(f"thresholds must have length {I}")
        if len(self.threshold_sense) != I:
            raise ShapeError(f"threshold_sense must have length {I}")
        if any(s not in SENSES for s in self.threshold_sense):
            raise ValueError(f"threshold_sense entries must be one of {SENSES}")
        if np.any(self.lower_bounds < 0) or np.any(self.lower_bounds > self.upper_bounds):
            raise ValueError("bounds must satisfy 0 <= L_r <= H_r")
        if np.any(self.cost_weights < 0):
            raise ValueError("cost weights must be non-negative")
        if self.slice_lower_bounds is not None:
            if self.slice_lower_bounds.shape != (I, R):
                raise ShapeError(f"slice_lower_bounds must have shape {(I, R)}")
            if np.any(self.slice_lower_bounds > self.upper_bounds):
                raise ValueError("slice lower bound exceeds upper bound")
        if self.slice_upper_bounds is not None:
            if self.slice_upper_bounds.shape != (I, R):
                raise ShapeError(f"slice_upper_bounds must have shape {(I, R)}")
            if np.any(self.slice_upper_bounds < self.lower_matrix()):
                raise ValueError("slice upper bound below lower bound")

    @property
    def shape(self):
        return (self.num_slices, self.num_resources)

    @property
    def dim(self):
        return self.num_slices * self.num_resources

    def lower_matrix(self):
        """Effective per-(slice, resource) lower bounds."""
        lo = np.broadcast_to(self.lower_bounds, self.shape).copy()
        if self.slice_lower_bounds is not None:
            lo = np.maximum(lo, self.slice_lower_bounds)
        return lo

    def upper_matrix(self):
        """Effective per-(slice, resource) upper bounds."""
        hi = np.broadcast_to(self.upper_bounds, self.shape).copy()
        if self.slice_upper_bounds is not None:
            hi = np.minimum(hi, self.slice_upper_bounds)
        return hi

    def max_cost(self):
        """Cost of giving every slice the upper bound of every resource."""
        return float(np.sum(self.upper_matrix() @ self.cost_weights))

    def sense_sign(self):
        # score = sign * (Q - raw) is >= 0 iff the requirement holds
        return np.array([1.0 if s == "max" else -1.0 for s in self.threshold_sense])

    def satisfaction(self, perf_values):
        """Convert raw per-slice performance into satisfaction scores."""
        perf_values = np.asarray(perf_values, dtype=float)
        return self.sense_sign() * (self.thresholds - perf_values)

    # -- serialization ---------------------------------------------------

    def to_dict(self):
        doc = {
            "slices": list(self.slice_names),
            "resources": list(self.resource_names),
            "weights": self.cost_weights.tolist(),
            "bounds": {
                "lower": self.lower_bounds.tolist(),
                "upper": self.upper_bounds.tolist(),
            },
            "thresholds": self.thresholds.tolist(),
            "sense": list(self.threshold_sense),
        }
        if self.slice_lower_bounds is not None:
            doc["bounds"]["slice_lower"] = self.slice_lower_bounds.tolist()
        if self.slice_upper_bounds is not None:
            doc["bounds"]["slice_upper"] = self.slice_upper_bounds.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc):
        bounds = doc["bounds"]
        return cls(
            num_slices=len(doc["slices"]),
            num_resources=len(doc["resources"]),
            cost_weights=doc["weights"],
            lower_bounds=bounds["lower"],
            upper_bounds=bounds["upper"],
            thresholds=doc["thresholds"],
            threshold_sense=list(doc.get("sense", ["max"] * len(doc["slices"]))),
            slice_lower_bounds=bounds.get("slice_lower"),
            slice_upper_bounds=bounds.get("slice_upper"),
            slice_names=list(doc["slices"]),
            resource_names=list(doc["resources"]),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class FeasibilityReport:
    c1_violations: np.ndarray
    c2_violations: float
    c3_violations: np.ndarray
    feasible: bool
    satisfaction: np.ndarray = field(default=None, repr=False)

    def max_violation(self):
        return max(
            float(np.max(self.c1_violations, initial=0.0)),
            float(self.c2_violations),
            float(np.max(self.c3_violations, initial=0.0)),
        )


def as_config(spec: ProblemSpec, x) -> np.ndarray:
    """Return ``x`` as a float configuration matrix, checking its shape."""
    x = np.asarray(x, dtype=float)
    if x.shape != spec.shape:
        if x.size == spec.dim and x.ndim == 1:
            return x.reshape(spec.shape)
        raise ShapeError(f"expected configuration of shape {spec.shape}, got {x.shape}")
    return x


def total_cost(spec: ProblemSpec, x) -> float:
    """Operator cost: sum over slices and resources of ``w_r * x[i, r]``."""
    x = as_config(spec, x)
    return float(np.sum(x @ spec.cost_weights))


def clip(spec: ProblemSpec, x) -> np.ndarray:
    """Project a configuration onto the box of per-slice resource bounds."""
    x = as_config(spec, x)
    return np.clip(x, spec.lower_matrix(), spec.upper_matrix())


def box_excess(spec: ProblemSpec, x) -> np.ndarray:
    """Elementwise distance outside ``[L, H]`` (zero inside the box)."""
    x = as_config(spec, x)
    lo, hi = spec.lower_matrix(), spec.upper_matrix()
    return np.maximum(lo - x, 0.0) + np.maximum(x - hi, 0.0)


def capacity_excess(spec: ProblemSpec, x) -> np.ndarray:
    x = as_config(spec, x)
    return np.maximum(x.sum(axis=0) - spec.upper_bounds, 0.0)


def check_feasibility(spec: ProblemSpec, x, perf: PerfFn, tol=FEAS_TOL) -> FeasibilityReport:
    """Evaluate the three constraint classes at ``x``.

    ``perf(x)`` must return the raw per-slice performance at ``x``.
    """
    x = as_config(spec, x)
    score = spec.satisfaction(perf(x))
    c1 = np.maximum(-score, 0.0)
    c2 = float(box_excess(spec, x).sum())
    c3 = capacity_excess(spec, x)
    feasible = bool(np.all(c1 <= tol) and c2 <= tol and np.all(c3 <= tol))
    return FeasibilityReport(c1, c2, c3, feasible, score)


@dataclass(frozen=True)
class PenaltyWeights:
    """Per-class weights of the squared-violation penalty.

    The C1 shortfall enters the penalty divided by ``|Q_i|`` so the term is
    dimensionless like the resource-unit C2/C3 terms.
    """

    c1: float = DEFAULT_PENALTY
    c2: float = DEFAULT_PENALTY
    c3: float = DEFAULT_PENALTY

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3) < 0:
            raise ValueError("penalty weights must be non-negative")


def _c1_scale(spec):
    return 1.0 / np.maximum(np.abs(spec.thresholds), 1.0)


def penalty_terms(spec: ProblemSpec, x, perf_values, weights: PenaltyWeights = PenaltyWeights()):
    x = as_config(spec, x)
    score = spec.satisfaction(perf_values)
    short = np.maximum(-score, 0.0) * _c1_scale(spec)
    return (
        weights.c1 * float(short @ short)
        + weights.c2 * float(np.sum(box_excess(spec, x) ** 2))
        + weights.c3 * float(np.sum(capacity_excess(spec, x) ** 2))
    )


def penalized_objective(spec: ProblemSpec, x, perf: PerfFn, weights: PenaltyWeights = PenaltyWeights()) -> float:
    """Cost plus squared-violation penalties; equals the cost when feasible."""
    x = as_config(spec, x)
    return total_cost(spec, x) + penalty_terms(spec, x, perf(x), weights)


def penalized_gradient(spec: ProblemSpec, x, perf_values, perf_jac, weights: PenaltyWeights = PenaltyWeights()):
    """Gradient of :func:`penalized_objective` w.r.t. the configuration.

    ``perf_jac[i]`` is the gradient of slice ``i``'s raw performance with
    respect to its own row ``x[i]`` (slices do not interact).
    """
    x = as_config(spec, x)
    grad = np.broadcast_to(spec.cost_weights, spec.shape).astype(float)
    score = spec.satisfaction(perf_values)
    scale = _c1_scale(spec)
    short = np.maximum(-score, 0.0) * scale
    # d(short_i)/dx_i = sense_i * scale_i * dperf_i/dx_i where short_i > 0
    coef = 2.0 * weights.c1 * short * scale * spec.sense_sign()
    grad = grad + coef[:, None] * np.asarray(perf_jac, dtype=float)
    lo, hi = spec.lower_matrix(), spec.upper_matrix()
    grad = grad + 2.0 * weights.c2 * (np.maximum(x - hi, 0.0) - np.maximum(lo - x, 0.0))
    grad = grad + 2.0 * weights.c3 * capacity_excess(spec, x)[None, :]
    return grad


class PenalizedProblem:
    """Bundle of spec, performance model and penalty weights.

    Exposes the flattened objective and gradient used by the trust-region
    refinement and the Bayesian-optimization baseline.  ``model`` must
    provide ``__call__(x)`` and, for gradients, ``jacobian(x)``.
    """

    def __init__(self, spec: ProblemSpec, model, weights: PenaltyWeights = PenaltyWeights()):
        self.spec = spec
        self.model = model
        self.weights = weights
        self.n_evals = 0

    def objective(self, z):
        self.n_evals += 1
        return penalized_objective(self.spec, as_config(self.spec, z), self.model, self.weights)

    def gradient(self, z):
        self.n_evals += 1
        x = as_config(self.spec, z)
        g = penalized_gradient(self.spec, x, self.model(x), self.model.jacobian(x), self.weights)
        return g.ravel()

    def feasibility(self, z):
        return check_feasibility(self.spec, as_config(self.spec, z), self.model)

    def is_feasible(self, z):
        return self.feasibility(z).feasible


def make_spec(num_slices, num_resources, thresholds, weights=None, lower=0.0, upper=1.0,
              sense="max", **kwargs) -> ProblemSpec:
    """Convenience constructor with scalar broadcasting."""
    R = num_resources
    w = np.ones(R) if weights is None else np.asarray(weights, dtype=float)
    lo = np.full(R, lower, dtype=float) if np.isscalar(lower) else np.asarray(lower, float)
    hi = np.full(R, upper, dtype=float) if np.isscalar(upper) else np.asarray(upper, float)
    senses = [sense] * num_slices if isinstance(sense, str) else list(sense)
    return ProblemSpec(num_slices, num_resources, w, lo, hi, np.asarray(thresholds, float),
                       senses, **kwargs)


def flat_bounds(spec: ProblemSpec):
    return spec.lower_matrix().ravel(), spec.upper_matrix().ravel()


def config_rows(spec: ProblemSpec, population: Sequence) -> np.ndarray:
    """Stack flattened genomes into a ``(P, I, R)`` array."""
    return np.asarray(population, dtype=float).reshape(-1, *spec.shape)


def evaluate_batch(spec: ProblemSpec, xs, perf_values, weights: PenaltyWeights = PenaltyWeights(), tol=FEAS_TOL):
    """Vectorized cost, penalized objective and feasibility for ``(P, I, R)`` configurations.

    ``perf_values`` is the ``(P, I)`` array of raw performance.  Returns
    ``(cost, penalized, feasible)`` arrays of length ``P``.
    """
    xs = np.asarray(xs, dtype=float).reshape(-1, *spec.shape)
    cost = xs @ spec.cost_weights
    cost = cost.sum(axis=1)
    score = spec.satisfaction(perf_values)
    short = np.maximum(-score, 0.0)
    lo, hi = spec.lower_matrix(), spec.upper_matrix()
    box = np.maximum(lo - xs, 0.0) + np.maximum(xs - hi, 0.0)
    cap = np.maximum(xs.sum(axis=1) - spec.upper_bounds, 0.0)
    scaled = short * _c1_scale(spec)
    penalized = (cost + weights.c1 * np.sum(scaled ** 2, axis=1)
                 + weights.c2 * np.sum(box ** 2, axis=(1, 2)) + weights.c3 * np.sum(cap ** 2, axis=1))
    feasible = (np.all(short <= tol, axis=1) & (box.sum(axis=(1, 2)) <= tol) & np.all(cap <= tol, axis=1))
    bad = ~np.all(np.isfinite(perf_values), axis=1)
    penalized = np.where(bad, np.inf, penalized)
    feasible = feasible & ~bad
    return cost, penalized, feasible


def tightened(spec: ProblemSpec, threshold_margin=0.0, capacity_margin=0.0) -> ProblemSpec:
    """Copy of ``spec`` with every constraint pulled inward.

    Thresholds move by ``threshold_margin`` performance units in the strict
    direction and capacities shrink by ``capacity_margin``.  Minimizers of
    the penalized objective of the tightened problem, which sit just
    outside its feasible set, then lie inside the original one.
    """
    doc = spec.to_dict()
    sign = spec.sense_sign()
    doc["thresholds"] = (spec.thresholds - sign * threshold_margin).tolist()
    upper = np.maximum(spec.upper_bounds - capacity_margin, spec.lower_matrix().max(axis=0))
    doc["bounds"]["upper"] = upper.tolist()
    return ProblemSpec.from_dict(doc)
