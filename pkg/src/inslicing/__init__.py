"""Surrogate-assisted configuration of network slices.

Per-slice performance models (Kolmogorov-Arnold networks) stand in for
the testbed while a genetic search, periodically refined by a
trust-region method, minimizes resource cost subject to latency,
per-slice bound and capacity constraints.
"""
from .ga import GaParams, GaState
from .gbo import GboParams, gbo_optimize
from .harness import (ExperimentConfig, HybridParams, RunTrace, TrainingParams, compute_regret, run_baseline,
                      run_experiment, run_inslicing, train_surrogates)
from .kan import KanModel, SurrogateSet, extract_symbolic
from .problem import FeasibilityReport, PenalizedProblem, PenaltyWeights, ProblemSpec, check_feasibility, total_cost
from .simulator import Scenario, SliceGroundTruth, generate_scenario, grid_optimum, query, toy_scenario
from .trustregion import TrmParams, refine

__all__ = [
    "GaParams", "GaState", "GboParams", "gbo_optimize", "ExperimentConfig", "HybridParams", "RunTrace",
    "TrainingParams", "compute_regret", "run_baseline", "run_experiment", "run_inslicing", "train_surrogates",
    "KanModel", "SurrogateSet", "extract_symbolic", "FeasibilityReport", "PenalizedProblem", "PenaltyWeights",
    "ProblemSpec", "check_feasibility", "total_cost", "Scenario", "SliceGroundTruth", "generate_scenario",
    "grid_optimum", "query", "toy_scenario", "TrmParams", "refine",
]
