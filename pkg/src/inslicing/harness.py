"""Hybrid GA + trust-region pipeline, baselines, metrics and result files.

Budget accounting uses two counters:

* ground-truth queries: the measurement campaign that trains the slice
  surrogates (one query = one full configuration, every slice measured);
  the blackbox baseline gets the same number of environment queries.
* surrogate evaluations: GA fitness evaluations plus trust-region function
  and gradient calls (one each); the hybrid and GA-only get the same total.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ga
from .gbo import GboParams, gbo_optimize
from .kan import KanModel, SurrogateSet, train
from .kan.training import split
from .problem import (PenaltyWeights, PenalizedProblem, check_feasibility, evaluate_batch, flat_bounds,
                      tightened, total_cost)
from .simulator import Scenario, collect_joint
from .trustregion import TrmParams, refine

METHODS = ("inslicing", "ga-only", "gbo")
BISECTION_STEPS = 8
BAND_WIDTH = 0.3  # relative half-width of the near-threshold validation band


@dataclass
class TrainingParams:
    samples: int = 500  # ground-truth queries in the measurement campaign
    steps: int = 1000
    hidden: tuple = (4, 4, 4)
    sampling: str = "lhs+corners"
    seed: int = 0
    l2: float = 1.0


@dataclass
class HybridParams:
    ga: ga.GaParams = field(default_factory=ga.GaParams)
    trm: TrmParams = field(default_factory=TrmParams)
    trm_interval: int = 5  # n
    budget_evals: int = None  # surrogate evaluations; None -> (G + 1) * population
    budget_secs: float = None  # optional wall-clock cap (not reproducible)
    penalty: PenaltyWeights = field(default_factory=PenaltyWeights)
    # per-slice threshold margin, in multiples of the surrogate's held-out RMSE
    surrogate_margin: float = 2.0
    # extra margins of the problem the trust region refines: a fraction of
    # each threshold, and resource units off every capacity
    threshold_margin: float = 0.01
    capacity_margin: float = 2e-3

    def __post_init__(self):
        if self.trm_interval < 1:
            raise ValueError("trm_interval must be >= 1")

    @property
    def seed(self):
        return self.ga.seed

    def with_seed(self, seed):
        return replace(self, ga=replace(self.ga, seed=int(seed)))

    def eval_budget(self):
        if self.budget_evals is not None:
            return int(self.budget_evals)
        return (self.ga.generations + 1) * self.ga.population_size


@dataclass
class RunTrace:
    method: str
    seed: int
    slices: int = 0
    rows: list = field(default_factory=list)  # (iteration, evals, best_cost, feasible, phase)
    x_best: np.ndarray = None
    f_best: float = np.inf
    feasible: bool = False
    pre_feasible_cost: float = np.inf
    surrogate_evals: int = 0
    truth_queries: int = 0
    truth_perf: np.ndarray = None
    truth_report: object = None
    predicted_perf: np.ndarray = None

    def add(self, evals, best_cost, phase):
        self.rows.append((len(self.rows), int(evals), float(best_cost), bool(np.isfinite(best_cost)), phase))

    def best_costs(self):
        return np.array([r[2] for r in self.rows])


# -- surrogates --------------------------------------------------------------


def train_surrogates(scenario: Scenario, params: TrainingParams = TrainingParams()):
    """Run the measurement campaign and fit one model per slice.

    Returns ``(SurrogateSet, traces, datasets)``.
    """
    data = collect_joint(scenario, params.samples, params.sampling, seed=params.seed)
    models, traces = [], []
    for i, (X, y) in enumerate(data):
        model, tt = fit_slice_model(scenario, i, X, y, params)
        traces.append(tt)
        models.append(model)
    return SurrogateSet(models), traces, data


def fit_slice_model(scenario: Scenario, i, X, y, params: TrainingParams = TrainingParams()):
    """Train slice ``i``'s model on its exploration region; records held-out errors in ``meta``."""
    lo, hi = scenario.explore_region(i)
    model = KanModel.create(lo, hi, hidden=tuple(params.hidden), seed=params.seed * 1000 + i)
    tt = train(model, X, y, steps=params.steps, seed=params.seed, l2=params.l2)
    model.meta = {"train_rmse": tt.train_rmse[-1], "test_rmse": tt.test_rmse[-1]}
    band = _band_rmse(model, X, y, scenario.spec.thresholds[i], params.seed)
    if band is not None:
        model.meta["band_rmse"] = band
    return model, tt


def _band_rmse(model, X, y, threshold, seed, band=BAND_WIDTH, min_points=5):
    """Held-out RMSE over measurements within ``band * |Q|`` of the threshold.

    The overall test RMSE is dominated by points far from the constraint
    boundary; this is the error that decides feasibility.
    """
    _, te = split(len(y), 0.2, seed)
    near = te[np.abs(y[te] - threshold) <= band * max(abs(threshold), 1.0)]
    if len(near) < min_points:
        return None
    return float(np.sqrt(np.mean((model(X[near]) - y[near]) ** 2)))


# -- optimizers ----------------------------------------------------------------


def working_spec(spec, surrogates, multiplier):
    """Thresholds tightened by ``multiplier`` times each surrogate's held-out RMSE."""
    if not multiplier:
        return spec
    err = np.nan_to_num(surrogates.validation_rmse(), nan=0.0)
    return tightened(spec, multiplier * err)


def _push_toward_feasible(problem: PenalizedProblem, anchor, target):
    """Furthest surrogate-feasible point on the segment from ``anchor`` to ``target``.

    ``anchor`` must be feasible.  Returns ``(x, evaluations used)``.
    """
    if problem.is_feasible(target):
        return target, 1
    lo_t, hi_t, used = 0.0, 1.0, 1
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo_t + hi_t)
        used += 1
        if problem.is_feasible(anchor + mid * (target - anchor)):
            lo_t = mid
        else:
            hi_t = mid
    return anchor + lo_t * (target - anchor), used


def run_inslicing(scenario: Scenario, params: HybridParams = HybridParams(), surrogates=None,
                  training: TrainingParams = TrainingParams(), method="inslicing") -> RunTrace:
    """GA generations with trust-region refinement of the best genome every ``n`` generations.

    Refinement is triggered after generation ``g`` when ``(g + 1) % n == 0``
    and a feasible genome exists, so ``n > G`` reproduces the plain GA.
    The refined point replaces the best genome only if it is cheaper and
    still feasible under the surrogates; it then re-enters the population
    through elitism.
    """
    trace = RunTrace(method, params.seed, scenario.spec.num_slices)
    if surrogates is None:
        surrogates, _, _ = train_surrogates(scenario, training)
    trace.truth_queries = training.samples
    spec = working_spec(scenario.spec, surrogates, params.surrogate_margin)
    problem = PenalizedProblem(spec, surrogates, params.penalty)
    inner = PenalizedProblem(tightened(spec, params.threshold_margin * np.abs(spec.thresholds),
                                       params.capacity_margin),
                             surrogates, params.penalty)
    box = flat_bounds(spec)
    gp = params.ga
    budget = params.eval_budget()
    deadline = None if params.budget_secs is None else time.monotonic() + params.budget_secs
    state = ga.evaluate(ga.init_population(gp, spec), spec, surrogates, params.penalty)
    trace.pre_feasible_cost = min(float(np.min(state.penalized)), spec.max_cost())
    trace.add(state.n_evals, state.best_fitness, "ga")
    extra = 0  # evaluations spent outside the GA
    warm = None  # trust-region model carried between refinements

    def spent():
        return state.n_evals + extra

    while state.generation < gp.generations and spent() + gp.population_size <= budget:
        if deadline is not None and time.monotonic() > deadline:
            break
        state = ga.step_generation(state, gp, spec, surrogates, params.penalty)
        trace.add(spent(), state.best_fitness, "ga")
        due = state.generation % params.trm_interval == 0  # generation g = state.generation - 1
        if method == "inslicing" and due and state.best_genome is not None:
            room = budget - spent()
            if room <= 2:
                continue
            res = refine(inner.objective, state.best_genome, params.trm, box, inner.gradient,
                         max_evals=room - 1 - BISECTION_STEPS, warm=warm)
            warm = res.state
            extra += res.n_evals
            x_new, used = _push_toward_feasible(problem, state.best_genome, res.x)
            extra += used
            cost = total_cost(spec, x_new)
            if cost < state.best_fitness and problem.is_feasible(x_new):
                state.best_fitness = float(cost)
                state.best_genome = np.asarray(x_new, dtype=float).ravel().copy()
            trace.add(spent(), state.best_fitness, "trm")
    trace.surrogate_evals = spent()
    if state.best_genome is not None:
        trace.x_best = state.best_genome.reshape(spec.shape)
        trace.f_best = state.best_fitness
        trace.feasible = True
    else:
        tier, value = state.rank_keys()
        trace.x_best = state.genomes[np.lexsort((value, tier))[0]].reshape(spec.shape)
        trace.f_best = total_cost(spec, trace.x_best)
    trace.predicted_perf = surrogates(trace.x_best)
    validate(scenario, trace)
    return trace


def run_gbo(scenario: Scenario, params: GboParams, seed=0, penalty: PenaltyWeights = PenaltyWeights()) -> RunTrace:
    """Blackbox baseline on the noisy environment."""
    spec = scenario.spec
    env = scenario.environment(seed=[int(seed), 7919])
    box = flat_bounds(spec)
    region = (spec.lower_matrix().ravel(), scenario.explore_hi.ravel())

    def objective(z):
        x = z.reshape(1, *spec.shape)
        perf = env(x[0])[None, :]
        cost, pen, ok = evaluate_batch(spec, x, perf, penalty)
        return float(pen[0]), float(cost[0]), bool(ok[0])

    res = gbo_optimize(objective, box, replace(params, seed=int(seed)), region)
    trace = RunTrace("gbo", int(seed), spec.num_slices)
    trace.pre_feasible_cost = min(float(np.min(res.values[: params.n_init])), spec.max_cost())
    for evals, best_cost, _, _ in res.rows:
        trace.add(evals, best_cost, "gbo")
    trace.truth_queries = env.n_queries
    trace.surrogate_evals = 0
    trace.x_best = res.x.reshape(spec.shape)
    trace.feasible = res.feasible
    trace.f_best = res.best_cost if res.feasible else total_cost(spec, trace.x_best)
    validate(scenario, trace)
    return trace


def run_baseline(scenario: Scenario, method, params=None, seed=0, surrogates=None,
                 training: TrainingParams = TrainingParams()) -> RunTrace:
    """``ga-only`` (hybrid loop without refinement) or ``gbo``."""
    if method == "ga-only":
        params = (params or HybridParams()).with_seed(seed)
        return run_inslicing(scenario, params, surrogates, training, method="ga-only")
    if method == "gbo":
        return run_gbo(scenario, params or GboParams(), seed)
    raise ValueError(f"unknown baseline {method!r}")


def validate(scenario: Scenario, trace: RunTrace):
    """Re-check the final configuration on the noiseless ground truth."""
    truth = scenario.ground_truth
    trace.truth_perf = truth(trace.x_best)
    trace.truth_report = check_feasibility(scenario.spec, trace.x_best, truth)
    return trace.truth_report


# -- metrics -----------------------------------------------------------------


def regret_series(trace: RunTrace):
    """Per-row best cost with the pre-feasibility convention applied."""
    c = trace.best_costs()
    return np.where(np.isfinite(c), c, trace.pre_feasible_cost)


def compute_regret(trace, final_optimum, pre_feasible_cost=None):
    """Mean gap between the best cost after each iteration and ``final_optimum``.

    ``trace`` is a :class:`RunTrace` or a plain sequence of best costs;
    non-finite entries (before the first feasible point) count as
    ``pre_feasible_cost``.
    """
    if isinstance(trace, RunTrace):
        c = regret_series(trace)
    else:
        c = np.asarray(trace, dtype=float)
        if pre_feasible_cost is not None:
            c = np.where(np.isfinite(c), c, pre_feasible_cost)
    if len(c) == 0:
        raise ValueError("empty trace")
    return float(np.mean(np.maximum(c - final_optimum, 0.0)))


def normalized_performance(spec, perf):
    """Achieved performance over required, in the larger-is-better convention.

    For latency slices this is ``Q / latency``; exactly 1 at the threshold.
    """
    perf = np.asarray(perf, dtype=float)
    ratio = np.where(np.array(spec.threshold_sense) == "max", spec.thresholds / perf, perf / spec.thresholds)
    return ratio


def normalized_performance_cdf(spec, traces):
    """Empirical CDF per method of the final ground-truth normalized performance.

    Returns ``{method: (sorted_values, cdf)}``.
    """
    pooled = {}
    for t in traces:
        pooled.setdefault(t.method, []).extend(normalized_performance(spec, t.truth_perf).tolist())
    out = {}
    for method, vals in pooled.items():
        v = np.sort(np.asarray(vals))
        out[method] = (v, np.arange(1, len(v) + 1) / len(v))
    return out


# -- experiments ---------------------------------------------------------------


@dataclass
class ExperimentConfig:
    num_slices: int = 9
    num_resources: int = 6
    scenario_seed: int = 0
    scenario_path: str = None
    toy: bool = False
    methods: tuple = METHODS
    seeds: tuple = tuple(range(5))
    slice_counts: tuple = None
    training: TrainingParams = field(default_factory=TrainingParams)
    hybrid: HybridParams = field(default_factory=HybridParams)
    gbo: GboParams = None
    models_dir: str = None

    def gbo_params(self):
        if self.gbo is not None:
            return replace(self.gbo, budget=self.training.samples) if self.gbo.budget is None else self.gbo
        return GboParams(budget=self.training.samples, n_init=min(10, self.training.samples))


def make_scenario(cfg: ExperimentConfig, num_slices=None):
    from .simulator import generate_scenario, toy_scenario

    if cfg.scenario_path:
        return Scenario.load(cfg.scenario_path)
    if cfg.toy:
        return toy_scenario(cfg.scenario_seed)
    return generate_scenario(num_slices or cfg.num_slices, cfg.num_resources, cfg.scenario_seed)


def run_cell(scenario, method, seed, cfg: ExperimentConfig, surrogates):
    if method == "inslicing":
        return run_inslicing(scenario, cfg.hybrid.with_seed(seed), surrogates, cfg.training)
    if method == "ga-only":
        return run_baseline(scenario, "ga-only", cfg.hybrid, seed, surrogates, cfg.training)
    if method == "gbo":
        return run_gbo(scenario, cfg.gbo_params(), seed, cfg.hybrid.penalty)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class ExperimentResult:
    traces: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (slices, method, seed, message)
    scenarios: dict = field(default_factory=dict)
    surrogates: dict = field(default_factory=dict)
    training_traces: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)  # slices -> reference optimum

    def by(self, slices, method):
        return [t for t in self.traces if t.slices == slices and t.method == method]


def reference_optimum(scenario, traces):
    """Best feasible cost over all methods; grid optimum for small scenarios."""
    from .simulator import grid_optimum

    if scenario.spec.num_slices <= 2 and scenario.spec.num_resources <= 2:
        best, _ = grid_optimum(scenario)
        if np.isfinite(best):
            return best
    finite = [t.f_best for t in traces if t.feasible and np.isfinite(t.f_best)]
    return float(min(finite)) if finite else float("nan")


def run_experiment(cfg: ExperimentConfig, log=None) -> ExperimentResult:
    """Every (slice count, method, seed) cell; one failed cell does not stop the rest."""
    result = ExperimentResult()
    counts = list(cfg.slice_counts) if cfg.slice_counts else [None]
    for n in counts:
        scenario = make_scenario(cfg, n)
        key = scenario.spec.num_slices
        result.scenarios[key] = scenario
        surrogates = None
        if any(m in ("inslicing", "ga-only") for m in cfg.methods):
            if cfg.models_dir and n is None:
                surrogates = SurrogateSet.load(cfg.models_dir, key)
            else:
                surrogates, ttraces, _ = train_surrogates(scenario, cfg.training)
                result.training_traces[key] = ttraces
            result.surrogates[key] = surrogates
        cell_traces = []
        for method in cfg.methods:
            for seed in cfg.seeds:
                if log:
                    log(f"slices={key} method={method} seed={seed}")
                try:
                    t = run_cell(scenario, method, seed, cfg, surrogates)
                except Exception as exc:  # recorded, run continues
                    result.failures.append((key, method, seed, f"{type(exc).__name__}: {exc}"))
                    continue
                t.slices = key
                cell_traces.append(t)
        result.traces.extend(cell_traces)
        result.reference[key] = reference_optimum(scenario, cell_traces)
    return result


def median_cost(traces):
    vals = [t.f_best if t.feasible else np.inf for t in traces]
    return float(np.median(vals)) if vals else float("nan")


def scalability_sweep(slice_counts, seeds, cfg: ExperimentConfig = None, log=None):
    """Median final cost per (method, slice count).  Returns ``(table, result)``."""
    cfg = replace(cfg or ExperimentConfig(), slice_counts=tuple(slice_counts), seeds=tuple(seeds))
    result = run_experiment(cfg, log)
    table = {(m, n): median_cost(result.by(n, m)) for n in result.scenarios for m in cfg.methods}
    return table, result


# -- output files ----------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def summary_rows(result: ExperimentResult):
    rows = []
    for t in result.traces:
        rep = t.truth_report
        violated = int(np.sum(rep.c1_violations > 1e-6))
        err = np.nan if t.predicted_perf is None else float(np.max(np.abs(t.predicted_perf - t.truth_perf)))
        rows.append((t.slices, t.method, t.seed, "ok", t.f_best, t.feasible, rep.feasible, violated,
                     float(np.max(rep.c1_violations, initial=0.0)), err, t.surrogate_evals, t.truth_queries))
    for slices, method, seed, msg in result.failures:
        rows.append((slices, method, seed, "error: " + msg, np.nan, False, False, "", "", "", "", ""))
    return rows


SUMMARY_HEADER = ["slices", "method", "seed", "status", "cost", "feasible_model", "feasible_truth",
                  "c1_violated_slices", "max_c1_violation", "surrogate_error", "surrogate_evals", "truth_queries"]


def write_results(result: ExperimentResult, out, cfg: ExperimentConfig = None):
    """Write traces/summary/cdf/regret CSVs plus scenario and model JSON."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "traces.csv", ["slices", "method", "seed", "iteration", "evals", "best_cost", "feasible", "phase"],
           [(t.slices, t.method, t.seed, *r) for t in result.traces for r in t.rows])
    _write(out / "summary.csv", SUMMARY_HEADER, summary_rows(result))
    cdf_rows = []
    for n, scen in result.scenarios.items():
        traces = [t for t in result.traces if t.slices == n]
        for method, (v, p) in normalized_performance_cdf(scen.spec, traces).items():
            cdf_rows += [(n, method, a, b) for a, b in zip(v, p)]
    _write(out / "cdf.csv", ["slices", "method", "normalized_performance", "cdf"], cdf_rows)
    _write(out / "regret.csv", ["slices", "method", "seed", "regret", "reference_optimum"],
           [(t.slices, t.method, t.seed, compute_regret(t, result.reference[t.slices]), result.reference[t.slices])
            for t in result.traces])
    single = len(result.scenarios) == 1
    for n, scen in result.scenarios.items():
        scen.save(out / ("scenario.json" if single else f"scenario_{n}.json"))
        if n in result.surrogates:
            result.surrogates[n].save(out / "models" if single else out / "models" / f"slices_{n}")
    for n, traces in result.training_traces.items():
        for i, tt in enumerate(traces):
            d = out / "models" if single else out / "models" / f"slices_{n}"
            tt.write_csv(d / f"slice_{i}_training.csv")
    return out
