"""Acceptance criteria 1-9.

Each test records one PASS/FAIL line (see ``verdict`` in conftest); the
lines are repeated in the terminal summary.  The expensive experiment
runs are module fixtures shared between criteria.
"""
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from inslicing.harness import (ExperimentConfig, TrainingParams, compute_regret, fit_slice_model, median_cost,
                               run_experiment, scalability_sweep, summary_rows, write_results)
from inslicing.kan import KanModel, extract_symbolic
from inslicing.kan.training import train
from inslicing.problem import check_feasibility
from inslicing.simulator import collect_joint, generate_scenario, grid_optimum

HERE = Path(__file__).parent
SEEDS = tuple(range(20))
SWEEP_SEEDS = tuple(range(5))


@pytest.fixture(scope="module")
def comparison():
    start = time.monotonic()
    result = run_experiment(ExperimentConfig(seeds=SEEDS))
    return result, time.monotonic() - start


@pytest.fixture(scope="module")
def sweep(comparison):
    # the nine-slice cells are the first five seeds of the comparison run
    # (same scenario, training and seeds), so only 3 and 6 slices are rerun
    table, result = scalability_sweep((3, 6), SWEEP_SEEDS)
    full, _ = comparison
    for m in ("inslicing", "ga-only", "gbo"):
        table[(m, 9)] = median_cost([t for t in full.by(9, m) if t.seed in SWEEP_SEEDS])
    return table, result


@pytest.fixture(scope="module")
def toy_runs():
    start = time.monotonic()
    result = run_experiment(ExperimentConfig(toy=True, methods=("inslicing", "ga-only"), seeds=SEEDS))
    return result, time.monotonic() - start


def test_criterion_1_cost_ordering(comparison, verdict):
    result, elapsed = comparison
    med = {m: median_cost(result.by(9, m)) for m in ("inslicing", "ga-only", "gbo")}
    gain = 1 - med["inslicing"] / med["gbo"]
    ok = med["inslicing"] <= med["ga-only"] <= med["gbo"] and gain >= 0.15 and elapsed <= 1200
    paired = np.mean([a.f_best <= b.f_best for a, b in zip(result.by(9, "inslicing"), result.by(9, "gbo"))])
    assert verdict(1, ok, f"median cost inslicing {med['inslicing']:.4f} <= ga-only {med['ga-only']:.4f} "
                          f"<= gbo {med['gbo']:.4f}; gain vs gbo {gain:.1%} (>= 15%); "
                          f"inslicing <= gbo in {paired:.0%} of seeds; {elapsed:.0f} s (<= 1200)")


def test_criterion_2_regret_ordering(comparison, verdict):
    result, _ = comparison
    ref = result.reference[9]
    reg = {m: float(np.median([compute_regret(t, ref) for t in result.by(9, m)]))
           for m in ("inslicing", "ga-only", "gbo")}
    ok = reg["inslicing"] < reg["ga-only"] < reg["gbo"]
    assert verdict(2, ok, f"median regret inslicing {reg['inslicing']:.4f} < ga-only {reg['ga-only']:.4f} "
                          f"< gbo {reg['gbo']:.4f} (reference optimum {ref:.4f})")


def test_criterion_3_scalability(sweep, verdict):
    table, _ = sweep
    counts = (3, 6, 9)
    methods = ("inslicing", "ga-only", "gbo")
    monotone = all(table[(m, a)] <= table[(m, b)] for m in methods for a, b in zip(counts, counts[1:]))
    close = all(table[("inslicing", n)] <= 1.05 * min(table[(m, n)] for m in methods) for n in counts)
    cells = "; ".join(f"{m} " + "/".join(f"{table[(m, n)]:.3f}" for n in counts) for m in methods)
    assert verdict(3, monotone and close, f"median cost at 3/6/9 slices: {cells}; "
                                          f"non-decreasing={monotone}, inslicing within 5% of best={close}")


def test_criterion_4_grid_oracle(toy_runs, verdict):
    result, elapsed = toy_runs
    scen = result.scenarios[2]
    grid, _ = grid_optimum(scen, points=21)
    fine, _ = grid_optimum(scen, points=101)
    # the 21-level grid sits above the continuous optimum, so landing below
    # it with a ground-truth-feasible point is not an error: only overshoot counts
    ins = [t for t in result.by(2, "inslicing")]
    gao = [t for t in result.by(2, "ga-only")]
    n_ins = sum(t.f_best <= 1.05 * grid and t.truth_report.feasible for t in ins)
    n_ga = sum(t.f_best <= 1.10 * grid and t.truth_report.feasible for t in gao)
    worst = max(t.f_best for t in ins) / fine - 1
    ok = n_ins >= 18 and n_ga >= 18 and elapsed <= 120
    assert verdict(4, ok, f"grid optimum {grid:.4f} (101-level grid {fine:.4f}); inslicing within 5%: {n_ins}/20, "
                          f"ga-only within 10%: {n_ga}/20 (need 18); inslicing worst vs fine grid +{worst:.1%}; "
                          f"{elapsed:.0f} s (<= 120)")


def test_criterion_5_kan_convergence(verdict):
    scen = generate_scenario(seed=0)
    data = collect_joint(scen, 500, "lhs+corners", seed=0)
    parts, ok = [], True
    # slices 0 and 1 are the unfloored classes; the low-threshold class sits
    # on the 1 ms floor over most of its region and is not a smooth target
    for i in (0, 1):
        X, y = data[i]
        _, tt = fit_slice_model(scen, i, X, y, TrainingParams())
        span = float(np.ptp(scen.truths[i].latency(X)))
        best = tt.best_so_far()
        at500 = best[np.array(tt.steps) <= 500][-1]
        late = (at500 - best[-1]) / at500
        train_rmse, test_rmse = tt.train_rmse[-1], tt.test_rmse[-1]
        ok &= test_rmse <= 2 * train_rmse and train_rmse <= 0.05 * span and late <= 0.10
        parts.append(f"slice {i}: train {train_rmse:.2f} test {test_rmse:.2f} ms "
                     f"({train_rmse / span:.1%} of range), gain after step 500 {late:.1%}")
    assert verdict(5, ok, "; ".join(parts))


def test_criterion_6_symbolic_fidelity(verdict):
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1, (500, 2))
    y = 2.5 * X[:, 0] - 1.2 * X[:, 1] + 1.5 * np.sin(6 * X[:, 1] + 0.8) + 1
    model = KanModel.create(np.zeros(2), np.ones(2), hidden=(4, 4, 4), seed=0)
    train(model, X, y, steps=1000, seed=0)
    expr = extract_symbolic(model)
    kinds = sorted((t.kind, t.input) for t in expr.terms)
    want = {("linear", 0): (2.5,), ("linear", 1): (-1.2,), ("sine", 1): (1.5, 6.0, 0.8), ("constant", -1): (1.0,)}
    exact = kinds == sorted(want)
    worst = max(np.max(np.abs(np.subtract(t.coefficients, want[(t.kind, t.input)]) / np.abs(want[(t.kind, t.input)])))
                for t in expr.terms if (t.kind, t.input) in want)
    rel = expr.fit_rmse / expr.output_range
    ok = exact and worst <= 0.05 and rel <= 0.05
    assert verdict(6, ok, f"{expr.formula()}; term kinds exact={exact}, worst coefficient error {worst:.2%}, "
                          f"fidelity RMSE {rel:.3%} of range")


PROPERTY_TESTS = [
    "test_kan.py::test_partition_of_unity",
    "test_kan.py::test_input_gradient_vs_central_differences",
    "test_kan.py::test_parameter_gradient_vs_central_differences",
    "test_trustregion.py::test_iterates_monotone_in_box_and_radius_bounded",
    "test_trustregion.py::test_never_worse_on_penalized_surrogate",
    "test_trustregion.py::test_rosenbrock_converges",
    "test_trustregion.py::test_step_within_radius_and_decreases_model",
    "test_ga.py::test_best_is_monotone_and_feasible_only",
    "test_ga.py::test_crossover_identities",
    "test_ga.py::test_mutation_rate_schedule",
    "test_ga.py::test_empirical_mutation_frequency",
    "test_gbo.py::test_posterior_matches_dense_oracle",
    "test_gbo.py::test_ei_nonnegative",
]


def test_criterion_7_property_suites(verdict):
    res = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                          *[str(HERE / t) for t in PROPERTY_TESTS]],
                         capture_output=True, text=True, cwd=HERE.parent)
    tail = res.stdout.strip().splitlines()[-1] if res.stdout.strip() else res.stderr.strip()[-200:]
    assert verdict(7, res.returncode == 0, f"{len(PROPERTY_TESTS)} property tests: {tail}")


def test_criterion_8_determinism(tmp_path, verdict):
    cfg = ExperimentConfig(toy=True, seeds=(0, 1))
    dirs = [write_results(run_experiment(cfg), tmp_path / name) for name in ("first", "second")]
    files = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*.csv"))
    same = [(dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes() for f in files]
    assert verdict(8, all(same) and len(files) >= 4,
                   f"{sum(same)}/{len(files)} CSV files byte-identical across reruns")


def test_criterion_9_constraint_honesty(comparison, sweep, toy_runs, verdict):
    results = [comparison[0], sweep[1], toy_runs[0]]
    checked = flagged = silent = 0
    worst = {}
    for result in results:
        rows = {(r[0], r[1], r[2]): r for r in summary_rows(result)}
        for t in result.traces:
            scen = result.scenarios[t.slices]
            # independent re-check on the noiseless ground truth
            rep = check_feasibility(scen.spec, t.x_best, scen.ground_truth)
            violated = int(np.sum(rep.c1_violations > 1e-6))
            row = rows[(t.slices, t.method, t.seed)]
            checked += 1
            n, w = worst.get(t.method, (0, 0.0))
            worst[t.method] = (n + bool(violated), max(w, float(np.max(rep.c1_violations))))
            if violated:
                flagged += row[7] == violated and not row[6]
                silent += not (row[7] == violated and not row[6])
            elif row[7] != 0:
                silent += 1
    per_method = ", ".join(f"{m} {n} (max {w:.1f} ms)" for m, (n, w) in sorted(worst.items()))
    assert verdict(9, silent == 0, f"{checked} final solutions re-validated on ground truth; "
                                   f"{flagged} with C1 violations, all reported; {silent} silent; "
                                   f"violations by method: {per_method}")
