"""Synthetic ground-truth slices standing in for a physical testbed.

Each slice's round-trip latency is a sum of per-resource linear and
sinusoidal terms plus an offset, floored at 1 ms, with Gaussian
measurement noise.  Slices do not interact: slice ``i``'s latency only
depends on its own configuration row.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .problem import RESOURCE_NAMES, ProblemSpec, check_feasibility

LATENCY_FLOOR = 1.0
NOISE_STD = 5.0
DEFAULT_THRESHOLDS = (400.0, 500.0, 60.0)
SLICE_CLASSES = ("MAR", "HVS", "RDC")
# resources that MAR/HVS slices keep at >= 0.1
MIN_SHARE_RESOURCES = ("bandwidth_ul", "cpu_ratio", "bandwidth_dl", "backhaul_bw")
MIN_SHARE = 0.1
REFERENCE_SLICES = 9

# parameter ranges of the generating family
SLOPE_RANGE = (20.0, 900.0)  # ms per unit, applied with a negative sign
MAX_AMPLITUDE = 160.0
FREQ_RANGE = (0.5, 2.5)
MAX_OFFSET = 900.0


class ScenarioError(RuntimeError):
    pass


@dataclass
class SliceGroundTruth:
    offset: float
    linear: np.ndarray
    amplitude: np.ndarray
    frequency: np.ndarray
    phase: np.ndarray
    noise_std: float = NOISE_STD
    slice_class: str = "other"

    def __post_init__(self):
        for name in ("linear", "amplitude", "frequency", "phase"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def num_resources(self):
        return len(self.linear)

    def raw(self, X):
        """Unfloored noiseless latency."""
        X = np.asarray(X, dtype=float)
        terms = self.linear * X + self.amplitude * np.sin(self.frequency * X + self.phase)
        return self.offset + terms.sum(axis=-1)

    def latency(self, X):
        """Noiseless latency (ms) for one row or a batch of rows."""
        return np.maximum(LATENCY_FLOOR, self.raw(X))

    def gradient(self, X):
        X = np.asarray(X, dtype=float)
        g = self.linear + self.amplitude * self.frequency * np.cos(self.frequency * X + self.phase)
        return np.where((self.raw(X) > LATENCY_FLOOR)[..., None], g, 0.0)

    def to_dict(self):
        return {
            "offset": self.offset,
            "linear": self.linear.tolist(),
            "amplitude": self.amplitude.tolist(),
            "frequency": self.frequency.tolist(),
            "phase": self.phase.tolist(),
            "noise_std": self.noise_std,
            "class": self.slice_class,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["offset"], d["linear"], d["amplitude"], d["frequency"], d["phase"],
                   d.get("noise_std", NOISE_STD), d.get("class", "other"))


def query(truth: SliceGroundTruth, x, noise_seed=None, rng=None):
    """Measured latency at ``x`` (one row or a batch) with Gaussian noise."""
    x = np.asarray(x, dtype=float)
    base = truth.raw(x)
    if truth.noise_std > 0:
        rng = np.random.default_rng(noise_seed) if rng is None else rng
        base = base + rng.normal(0.0, truth.noise_std, size=np.shape(base))
    out = np.maximum(LATENCY_FLOOR, base)
    return float(out) if np.ndim(out) == 0 else out


class GroundTruth:
    """Noiseless per-slice performance evaluator over full configurations."""

    def __init__(self, truths):
        self.truths = list(truths)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.array([t.latency(x[i]) for i, t in enumerate(self.truths)])

    def batch(self, xs):
        xs = np.asarray(xs, dtype=float)
        return np.stack([t.latency(xs[:, i]) for i, t in enumerate(self.truths)], axis=1)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([t.gradient(x[i]) for i, t in enumerate(self.truths)])


class Environment:
    """Noisy ground truth with a query counter; what a blackbox method sees."""

    def __init__(self, truths, seed=0):
        self.truths = list(truths)
        self.rng = np.random.default_rng(seed)
        self.n_queries = 0

    def __call__(self, x):
        self.n_queries += 1
        x = np.asarray(x, dtype=float)
        return np.array([query(t, x[i], rng=self.rng) for i, t in enumerate(self.truths)])


@dataclass
class Scenario:
    spec: ProblemSpec
    truths: list
    seed: int = 0
    name: str = ""
    explore_hi: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.truths) != self.spec.num_slices:
            raise ValueError("one ground truth per slice required")
        if self.explore_hi is None:
            self.explore_hi = self.spec.upper_matrix()
        self.explore_hi = np.asarray(self.explore_hi, dtype=float)

    @property
    def ground_truth(self):
        return GroundTruth(self.truths)

    def environment(self, seed=0):
        return Environment(self.truths, seed)

    def explore_region(self, i):
        """Input region sampled when learning slice ``i``'s performance."""
        return self.spec.lower_matrix()[i], self.explore_hi[i]

    def feasible_fraction(self, n=10 ** 6, seed=0, chunk=50_000):
        """Monte Carlo fraction of the equal-share probe that is feasible."""
        lo, hi = probe_box(self.spec)
        rng = np.random.default_rng(seed)
        gt = self.ground_truth
        hits = 0
        done = 0
        while done < n:
            m = min(chunk, n - done)
            xs = lo + (hi - lo) * rng.random((m, *self.spec.shape))
            score = self.spec.satisfaction(gt.batch(xs))
            ok = np.all(score >= 0, axis=1) & np.all(xs.sum(axis=1) <= self.spec.upper_bounds + 1e-12, axis=1)
            hits += int(ok.sum())
            done += m
        return hits / n

    def check(self, x):
        return check_feasibility(self.spec, x, self.ground_truth)

    def to_dict(self):
        return {
            "name": self.name,
            "seed": self.seed,
            "problem": self.spec.to_dict(),
            "truths": [t.to_dict() for t in self.truths],
            "explore_hi": self.explore_hi.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(ProblemSpec.from_dict(d["problem"]), [SliceGroundTruth.from_dict(t) for t in d["truths"]],
                   d.get("seed", 0), d.get("name", ""), d.get("explore_hi"))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def probe_box(spec: ProblemSpec, n_slices=None):
    """Per-slice box ``[L, L + slack / n]``; every point in it satisfies C3."""
    lo = spec.lower_matrix()
    n = spec.num_slices if n_slices is None else n_slices
    slack = np.maximum(spec.upper_bounds - lo.sum(axis=0), 0.0)
    return lo, np.minimum(lo + slack / n, spec.upper_matrix())


def _reference_width(spec):
    """Equal-share probe width of the reference nine-slice layout."""
    lo_row = {c: _slice_lower(spec.resource_names, c, spec.lower_bounds) for c in SLICE_CLASSES}
    total = sum(lo_row[SLICE_CLASSES[i % 3]] for i in range(REFERENCE_SLICES))
    slack = np.maximum(spec.upper_bounds - total, 0.0)
    return np.maximum(slack / REFERENCE_SLICES, 1e-3)


def _slice_lower(resource_names, cls, base_lower):
    lo = np.array(base_lower, dtype=float)
    if cls in ("MAR", "HVS"):
        for r, name in enumerate(resource_names):
            if name in MIN_SHARE_RESOURCES:
                lo[r] = max(lo[r], MIN_SHARE)
    return lo


def draw_slice(rng, num_resources, monotone=True, noise_std=NOISE_STD, slice_class="other"):
    """Draw linear/sine parameters (offset is calibrated afterwards)."""
    a = -rng.uniform(*SLOPE_RANGE, size=num_resources)
    b = rng.uniform(*FREQ_RANGE, size=num_resources)
    cap = np.minimum(MAX_AMPLITUDE, 0.9 * np.abs(a) / b) if monotone else np.full(num_resources, MAX_AMPLITUDE)
    amp = rng.uniform(0.0, 1.0, size=num_resources) * cap
    phase = rng.uniform(0.0, 2 * np.pi, size=num_resources)
    return SliceGroundTruth(0.0, a, amp, b, phase, noise_std, slice_class)


def _calibrated_slice(spec, i, width, quantile, key, monotone, noise_std, slice_class, max_tries):
    lo = spec.lower_matrix()[i]
    Q = spec.thresholds[i]
    for k in range(max_tries):
        rng = np.random.default_rng([*key, k])
        t = draw_slice(rng, spec.num_resources, monotone, noise_std, slice_class)
        probe = lo + width * rng.random((20_000, spec.num_resources))
        t.offset = float(Q - np.quantile(t.raw(probe), quantile))
        # the slice must need more than its minimum allocation
        if 0 < t.offset <= MAX_OFFSET and t.latency(lo) > Q:
            return t
    raise ScenarioError(f"could not calibrate slice {i}")


def generate_scenario(num_slices=9, num_resources=6, seed=0, thresholds=DEFAULT_THRESHOLDS,
                      noise_std=NOISE_STD, monotone=True, min_share=True, quantile=None,
                      probe_points=10 ** 6, min_feasible=0.1, weights=None, max_tries=20,
                      explore=2.0, reference_width=None, slice_caps=True, name=None) -> Scenario:
    """Random but reproducible scenario with a verified feasible region.

    Slice ``i`` cycles through the MAR / HVS / RDC classes with thresholds
    ``thresholds[i % 3]``.  Its parameters come from a random stream keyed
    by ``(seed, i)`` so a scenario with fewer slices is a prefix of one
    with more.  The offset is set so that a fraction ``quantile`` of the
    reference equal-share box meets the threshold.  With ``slice_caps``
    each slice's upper bounds are capped at its exploration region, the
    part of the box where measurements (and hence surrogates) exist.
    """
    if num_slices < 1 or num_resources < 1:
        raise ValueError("counts must be >= 1")
    names = list(RESOURCE_NAMES) if num_resources == len(RESOURCE_NAMES) else [f"r{r}" for r in range(num_resources)]
    if weights is None:
        weights = np.random.default_rng([seed, 10 ** 6]).uniform(0.5, 1.5, size=num_resources)
    base_lo = np.zeros(num_resources)
    classes = [SLICE_CLASSES[i % 3] for i in range(num_slices)]
    slice_lo = np.array([_slice_lower(names, c, base_lo) if min_share else base_lo for c in classes])
    spec = ProblemSpec(num_slices, num_resources, weights, base_lo, np.ones(num_resources),
                       [thresholds[i % len(thresholds)] for i in range(num_slices)], ["max"] * num_slices,
                       slice_lower_bounds=slice_lo if min_share else None,
                       slice_names=[f"{c}_{i}" for i, c in enumerate(classes)], resource_names=names)
    if np.any(spec.lower_matrix().sum(axis=0) > spec.upper_bounds):
        raise ScenarioError("minimum shares exceed capacity")
    if reference_width is not None:
        width = np.full(num_resources, float(reference_width))
    elif min_share:
        width = _reference_width(spec)
    else:
        width = np.full(num_resources, 1.0 / REFERENCE_SLICES)
    if quantile is None:
        quantile = 0.3 ** (1.0 / REFERENCE_SLICES)
    explore_hi = np.minimum(spec.lower_matrix() + explore * width, spec.upper_matrix())
    if slice_caps:
        # each slice may take at most its exploration share of a resource
        spec.slice_upper_bounds = explore_hi.copy()
        spec.validate()
    for attempt in range(max_tries):
        truths = [_calibrated_slice(spec, i, width, quantile, [seed, i, attempt], monotone, noise_std,
                                    classes[i], max_tries) for i in range(num_slices)]
        scen = Scenario(spec, truths, seed, name or f"s{num_slices}r{num_resources}-{seed}", explore_hi)
        if probe_points and scen.feasible_fraction(probe_points, seed=seed) < min_feasible:
            continue
        return scen
    raise ScenarioError(f"no feasible scenario after {max_tries} attempts")


def toy_scenario(seed=0, noise_std=1.0, probe_points=10 ** 5):
    """Two slices, two resources, no minimum shares: small enough for grid search."""
    return generate_scenario(2, 2, seed, thresholds=(400.0, 300.0), noise_std=noise_std, min_share=False,
                             probe_points=probe_points, name=f"toy-{seed}", reference_width=0.5,
                             explore=2.0)


def collect_training_set(truth: SliceGroundTruth, n_samples, region=None, sampling="lhs", seed=0):
    """Sample configurations of one slice and measure them.

    ``region`` is ``(lo, hi)``; it defaults to the unit box.  Returns
    ``(X, latency)``.  ``sampling`` is ``lhs``, ``lhs+corners`` (region
    vertices plus LHS) or ``uniform``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    d = truth.num_resources
    lo, hi = region if region is not None else (np.zeros(d), np.ones(d))
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    rng = np.random.default_rng(seed)
    if sampling == "lhs":
        U = qmc.LatinHypercube(d=d, seed=rng).random(n_samples)
    elif sampling == "lhs+corners":
        # measure every vertex (if affordable): space-filling designs leave
        # the extreme allocations, where optima sit, to extrapolation
        V = np.array(list(itertools.product((0.0, 1.0), repeat=d))) if 4 * 2 ** d <= n_samples else np.empty((0, d))
        U = np.vstack([V, qmc.LatinHypercube(d=d, seed=rng).random(n_samples - len(V))])
    elif sampling == "uniform":
        U = rng.random((n_samples, d))
    else:
        raise ValueError(f"unknown sampling {sampling!r}")
    X = lo + (hi - lo) * U
    return X, query(truth, X, rng=rng)


def collect_joint(scenario: Scenario, n_samples, sampling="lhs", seed=0):
    """One measurement campaign: ``n_samples`` full configurations, every slice measured.

    Returns a list of per-slice ``(X, y)`` datasets.
    """
    return [collect_training_set(t, n_samples, scenario.explore_region(i), sampling, seed=[seed, i])
            for i, t in enumerate(scenario.truths)]


def grid_optimum(scenario: Scenario, points=21):
    """Brute-force the noiseless problem on a regular grid.

    Every slice row is enumerated on ``points`` levels per resource; slices
    are combined through the capacity constraint.  Returns
    ``(best_cost, best_x)``; cost is ``inf`` if no grid point is feasible.
    """
    spec = scenario.spec
    lo, hi = spec.lower_matrix(), spec.upper_matrix()
    R = spec.num_resources
    rows = []
    for i, t in enumerate(scenario.truths):
        axes = [np.linspace(lo[i, r], hi[i, r], points) for r in range(R)]
        G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, R)
        score = spec.sense_sign()[i] * (spec.thresholds[i] - t.latency(G))
        rows.append(G[score >= 0])
    best = (np.inf, None)
    if spec.num_slices == 1:
        (A,) = rows
        A = A[np.all(A <= spec.upper_bounds + 1e-12, axis=1)]
        if len(A):
            k = int(np.argmin(A @ spec.cost_weights))
            best = (float(A[k] @ spec.cost_weights), A[k][None, :])
        return best
    if spec.num_slices == 2:
        A, B = rows
        if len(A) == 0 or len(B) == 0:
            return best
        ca, cb = A @ spec.cost_weights, B @ spec.cost_weights
        oa, ob = np.argsort(ca), np.argsort(cb)
        A, B, ca, cb = A[oa], B[ob], ca[oa], cb[ob]
        for j in range(len(A)):
            if ca[j] + cb[0] >= best[0]:
                break
            fits = np.all(A[j] + B <= spec.upper_bounds + 1e-12, axis=1)
            k = np.argmax(fits)
            if fits[k] and ca[j] + cb[k] < best[0]:
                best = (float(ca[j] + cb[k]), np.stack([A[j], B[k]]))
        return best
    raise NotImplementedError("grid oracle supports one or two slices")
