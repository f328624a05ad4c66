"""Genetic search over flattened slice configurations.

Fitness is the operator cost.  Tournaments prefer feasible entrants (by
cost) over infeasible ones (by penalized objective).  Offspring come from
arithmetic crossover and Gaussian mutation with a linearly decaying rate,
and the best feasible genome found so far is carried over unchanged.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .problem import PenaltyWeights, ProblemSpec, evaluate_batch, flat_bounds


@dataclass
class GaParams:
    population_size: int = 50
    crossover_prob: float = 0.9
    mutation_rate: float = 0.2  # m0
    generations: int = 100  # G
    tournament_size: int = 3
    mutation_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("crossover_prob", "mutation_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("population_size", "generations", "tournament_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.tournament_size > self.population_size:
            raise ValueError("tournament_size cannot exceed population_size")
        if self.mutation_sigma < 0:
            raise ValueError("mutation_sigma must be >= 0")


@dataclass
class Individual:
    genome: np.ndarray
    fitness: float = np.inf
    feasible: bool = False
    evaluated: bool = False
    penalized: float = np.inf


@dataclass
class GaState:
    """Population stored column-wise; :attr:`population` gives Individual views."""

    genomes: np.ndarray
    generation: int = 0
    fitness: np.ndarray = None
    penalized: np.ndarray = None
    feasible: np.ndarray = None
    evaluated: bool = False
    best_genome: np.ndarray = None
    best_fitness: float = np.inf
    n_evals: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        P = len(self.genomes)
        if self.fitness is None:
            self.fitness = np.full(P, np.inf)
            self.penalized = np.full(P, np.inf)
            self.feasible = np.zeros(P, dtype=bool)

    @property
    def population(self):
        return [Individual(g.copy(), float(f), bool(ok), self.evaluated, float(p))
                for g, f, ok, p in zip(self.genomes, self.fitness, self.feasible, self.penalized)]

    def rank_keys(self):
        """Sort keys: feasible first (by cost), then infeasible (by penalized value)."""
        return np.where(self.feasible, 0, 1), np.where(self.feasible, self.fitness, self.penalized)


def mutation_rate(g, params: GaParams):
    """m(g) = m0 * (1 - g/G), floored at zero."""
    return params.mutation_rate * max(0.0, 1.0 - g / params.generations)


def generation_rng(params: GaParams, g):
    # one independent stream per generation keeps runs reproducible
    return np.random.default_rng([params.seed, g + 1])


def init_population(params: GaParams, spec: ProblemSpec) -> GaState:
    lo, hi = flat_bounds(spec)
    rng = np.random.default_rng([params.seed, 0])
    genomes = lo + (hi - lo) * rng.random((params.population_size, spec.dim))
    return GaState(genomes)


def _perf_values(surrogates, xs):
    try:
        vals = np.asarray(surrogates.batch(xs), dtype=float)
        if vals.shape == xs.shape[:2]:
            return vals
    except Exception:
        pass
    # fall back to one evaluation per individual so failures stay local
    out = np.full(xs.shape[:2], np.nan)
    for k, x in enumerate(xs):
        try:
            out[k] = surrogates(x)
        except Exception:
            pass
    return out


def evaluate(state: GaState, spec: ProblemSpec, surrogates, weights: PenaltyWeights = PenaltyWeights()) -> GaState:
    """Score every individual and update the best feasible genome.

    Individuals whose performance cannot be evaluated get infinite fitness
    and are marked infeasible.
    """
    xs = state.genomes.reshape(-1, *spec.shape)
    perf = _perf_values(surrogates, xs)
    cost, pen, ok = evaluate_batch(spec, xs, perf, weights)
    failed = ~np.all(np.isfinite(perf), axis=1)
    state.fitness = np.where(failed, np.inf, cost)
    state.penalized = pen
    state.feasible = ok
    state.evaluated = True
    state.n_evals += len(xs)
    if np.any(ok):
        k = int(np.argmin(np.where(ok, cost, np.inf)))
        if cost[k] < state.best_fitness:
            state.best_fitness = float(cost[k])
            state.best_genome = state.genomes[k].copy()
    return state


def tournament(state: GaState, size, rng):
    """Index of the winner of one tournament among ``size`` distinct entrants."""
    entrants = rng.choice(len(state.genomes), size=size, replace=False)
    tier, value = state.rank_keys()
    # entrants come in random order, so argmin breaks ties uniformly
    order = np.lexsort((value[entrants], tier[entrants]))
    return int(entrants[order[0]])


def select_parents(state: GaState, params: GaParams, rng=None):
    """``population_size // 2`` (rounded up) pairs of parent indices."""
    if rng is None:
        rng = generation_rng(params, state.generation)
    n_pairs = (params.population_size + 1) // 2
    return [(tournament(state, params.tournament_size, rng), tournament(state, params.tournament_size, rng))
            for _ in range(n_pairs)]


def crossover(p1, p2, alpha):
    """Arithmetic crossover: ``c1 = a*p1 + (1-a)*p2`` and the mirrored child."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    return alpha * p1 + (1 - alpha) * p2, alpha * p2 + (1 - alpha) * p1


def mutate(genome, g, params: GaParams, spec: ProblemSpec, rng):
    """Gaussian mutation of each coordinate with probability m(g), then box correction."""
    genome = np.asarray(genome, dtype=float)
    lo, hi = flat_bounds(spec)
    mask = rng.random(genome.shape) < mutation_rate(g, params)
    eps = rng.normal(0.0, params.mutation_sigma, size=genome.shape)
    cand = np.clip(genome + mask * eps, lo, hi)
    bad = ~np.isfinite(cand) | (cand < lo) | (cand > hi)
    return np.where(bad, genome, cand)


def breed(state: GaState, params: GaParams, spec: ProblemSpec, rng) -> np.ndarray:
    """Offspring genomes for the next generation (elitism applied)."""
    pairs = select_parents(state, params, rng)
    children = []
    for a, b in pairs:
        p1, p2 = state.genomes[a], state.genomes[b]
        if rng.random() < params.crossover_prob:
            c1, c2 = crossover(p1, p2, rng.random())
        else:
            c1, c2 = p1.copy(), p2.copy()
        children.append(mutate(c1, state.generation, params, spec, rng))
        children.append(mutate(c2, state.generation, params, spec, rng))
    children = np.array(children[: params.population_size])
    elite = state.best_genome
    if elite is None:
        # nothing feasible yet: carry the best-ranked individual instead
        tier, value = state.rank_keys()
        elite = state.genomes[np.lexsort((value, tier))[0]]
    children[0] = elite
    return children


def step_generation(state: GaState, params: GaParams, spec: ProblemSpec, surrogates,
                    weights: PenaltyWeights = PenaltyWeights()) -> GaState:
    if not state.evaluated:
        raise ValueError("state must be evaluated before stepping")
    rng = generation_rng(params, state.generation)
    genomes = breed(state, params, spec, rng)
    nxt = GaState(genomes, state.generation + 1, best_genome=state.best_genome,
                  best_fitness=state.best_fitness, n_evals=state.n_evals, history=state.history)
    return evaluate(nxt, spec, surrogates, weights)


def record(state: GaState):
    """Append one trace row (generation, best_cost, feasible_count, mean_cost)."""
    finite = state.fitness[np.isfinite(state.fitness)]
    row = (state.generation, state.best_fitness, int(state.feasible.sum()),
           float(finite.mean()) if len(finite) else np.inf)
    state.history.append(row)
    return row


def write_trace(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", "best_cost", "feasible_count", "mean_cost"])
        for g, best, count, mean in rows:
            w.writerow([g, repr(float(best)), count, repr(float(mean))])


def run(spec: ProblemSpec, surrogates, params: GaParams, weights: PenaltyWeights = PenaltyWeights()) -> GaState:
    """Plain GA for ``params.generations`` generations."""
    state = evaluate(init_population(params, spec), spec, surrogates, weights)
    record(state)
    while state.generation < params.generations:
        state = step_generation(state, params, spec, surrogates, weights)
        record(state)
    return state
