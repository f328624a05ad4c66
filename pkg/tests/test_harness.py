import csv
from dataclasses import replace

import numpy as np
import pytest

from inslicing import ga
from inslicing.harness import (METHODS, ExperimentConfig, ExperimentResult, HybridParams, RunTrace,
                               TrainingParams, compute_regret, normalized_performance, normalized_performance_cdf,
                               run_baseline, run_cell, run_experiment, run_inslicing, summary_rows,
                               train_surrogates, write_results)
from inslicing.problem import make_spec
from inslicing.simulator import generate_scenario, grid_optimum, toy_scenario

SMALL_TRAINING = TrainingParams(samples=200, steps=300)
SMALL_HYBRID = HybridParams(ga=ga.GaParams(generations=30, population_size=20))


@pytest.fixture(scope="module")
def toy():
    scen = toy_scenario(0)
    surrogates, traces, data = train_surrogates(scen, SMALL_TRAINING)
    return scen, surrogates


def small_config(**kw):
    return ExperimentConfig(toy=True, training=SMALL_TRAINING, hybrid=SMALL_HYBRID, **kw)


def test_interval_beyond_generations_is_plain_ga(toy):
    scen, sur = toy
    p = replace(SMALL_HYBRID, trm_interval=SMALL_HYBRID.ga.generations + 1).with_seed(4)
    hybrid = run_inslicing(scen, p, sur, SMALL_TRAINING)
    plain = run_baseline(scen, "ga-only", SMALL_HYBRID, seed=4, surrogates=sur, training=SMALL_TRAINING)
    assert hybrid.rows == plain.rows
    assert np.array_equal(hybrid.x_best, plain.x_best)


def test_fixed_seed_identical(toy):
    scen, sur = toy
    a = run_inslicing(scen, SMALL_HYBRID.with_seed(2), sur, SMALL_TRAINING)
    b = run_inslicing(scen, SMALL_HYBRID.with_seed(2), sur, SMALL_TRAINING)
    assert a.rows == b.rows and np.array_equal(a.x_best, b.x_best)


def test_trace_monotone_with_both_phases(toy):
    scen, sur = toy
    t = run_inslicing(scen, SMALL_HYBRID.with_seed(1), sur, SMALL_TRAINING)
    assert np.all(np.diff(t.best_costs()) <= 0)
    assert {r[4] for r in t.rows} == {"ga", "trm"}


def test_budget_accounting(toy):
    scen, sur = toy
    budget = SMALL_HYBRID.eval_budget()
    cfg = small_config()
    traces = {m: run_cell(scen, m, 0, cfg, sur) for m in METHODS}
    # surrogate methods share the evaluation budget; the GA cannot start a
    # generation that would overrun it
    for m in ("inslicing", "ga-only"):
        assert budget - SMALL_HYBRID.ga.population_size < traces[m].surrogate_evals <= budget
    # every method sees the same number of ground-truth measurements
    assert len({t.truth_queries for t in traces.values()}) == 1
    assert traces["gbo"].truth_queries == SMALL_TRAINING.samples


def test_explicit_budget_is_respected(toy):
    scen, sur = toy
    p = replace(SMALL_HYBRID, budget_evals=150).with_seed(0)
    assert run_inslicing(scen, p, sur, SMALL_TRAINING).surrogate_evals <= 150


def test_unknown_baseline(toy):
    with pytest.raises(ValueError):
        run_baseline(toy[0], "random-search")


def test_single_slice_methods_agree_with_grid():
    # the ground truth itself stands in for the surrogate so the check is on
    # the optimizers, not on model error
    scen = generate_scenario(1, 2, 0, min_share=False, probe_points=10 ** 4, reference_width=0.5, noise_std=1.0)
    grid, _ = grid_optimum(scen, points=201)
    cfg = ExperimentConfig(gbo=None)
    cfg.hybrid = replace(cfg.hybrid, surrogate_margin=0.0, threshold_margin=0.0, capacity_margin=0.0)
    for m in METHODS:
        costs = [run_cell(scen, m, s, cfg, scen.ground_truth).f_best for s in range(3)]
        assert abs(np.median(costs) / grid - 1) <= 0.10, m


def test_truth_violation_is_reported():
    scen = toy_scenario(0)

    class Optimistic:
        """Model that reports every latency 100 ms lower than it is."""

        def __init__(self, truth):
            self.truth = truth

        def __call__(self, x):
            return self.truth(x) - 100.0

        def batch(self, xs):
            return self.truth.batch(xs) - 100.0

        def jacobian(self, x):
            return self.truth.jacobian(x)

    p = replace(SMALL_HYBRID, surrogate_margin=0.0)
    t = run_inslicing(scen, p, Optimistic(scen.ground_truth))
    assert t.feasible and not t.truth_report.feasible
    assert np.max(t.truth_report.c1_violations) > 0
    row = summary_rows(ExperimentResult(traces=[t]))[0]
    assert not row[6] and row[7] >= 1


def test_regret_examples():
    assert compute_regret([1.0, 1.0, 1.0], 1.0) == 0.0
    assert compute_regret([3.0, 2.0, 1.0], 1.0) == pytest.approx(1.0)
    assert compute_regret([np.inf, 2.0], 1.0, pre_feasible_cost=5.0) == pytest.approx(2.5)
    with pytest.raises(ValueError):
        compute_regret([], 1.0)


def test_regret_from_trace():
    t = RunTrace("x", 0, pre_feasible_cost=4.0)
    for c in (np.inf, 3.0, 2.0):
        t.add(0, c, "ga")
    assert compute_regret(t, 2.0) == pytest.approx((2.0 + 1.0 + 0.0) / 3)


def test_normalized_performance_at_threshold():
    spec = make_spec(3, 1, [400.0, 500.0, 60.0])
    assert np.allclose(normalized_performance(spec, [400.0, 500.0, 60.0]), 1.0)
    assert normalized_performance(spec, [200.0, 500.0, 60.0])[0] == pytest.approx(2.0)


def test_cdf_properties(toy):
    scen, sur = toy
    traces = [run_cell(scen, m, s, small_config(), sur) for m in ("inslicing", "ga-only") for s in range(3)]
    for v, p in normalized_performance_cdf(scen.spec, traces).values():
        assert np.all(np.diff(v) >= 0) and np.all(np.diff(p) > 0)
        assert p[0] > 0 and p[-1] == 1.0


def test_experiment_outputs(tmp_path, toy):
    cfg = small_config(methods=("inslicing", "ga-only", "no-such-method"), seeds=(0, 1))
    result = run_experiment(cfg)
    assert len(result.traces) == 4 and len(result.failures) == 2
    out = write_results(result, tmp_path)
    for name in ("traces.csv", "summary.csv", "cdf.csv", "regret.csv", "scenario.json", "models/slice_0.json"):
        assert (out / name).exists(), name
    with open(out / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert sum(r["status"].startswith("error") for r in rows) == 2
    with open(out / "regret.csv") as fh:
        assert all(float(r["regret"]) >= 0 for r in csv.DictReader(fh))


def test_experiment_files_reproducible(tmp_path):
    cfg = small_config(methods=("inslicing",), seeds=(0,))
    a = write_results(run_experiment(cfg), tmp_path / "a")
    b = write_results(run_experiment(cfg), tmp_path / "b")
    for name in ("traces.csv", "summary.csv", "cdf.csv", "regret.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
