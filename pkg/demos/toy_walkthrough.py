"""Two slices, two resources: small enough to brute-force, so every
method can be held against the exact answer.  Runs in well under a minute.

    python demos/toy_walkthrough.py
"""
import numpy as np

from inslicing.harness import ExperimentConfig, run_cell, train_surrogates
from inslicing.kan import extract_symbolic
from inslicing.simulator import grid_optimum, toy_scenario

scen = toy_scenario(seed=0)
spec = scen.spec
print(scen.name, "thresholds (ms):", spec.thresholds, "cost weights:", np.round(spec.cost_weights, 3))

# Brute force on 21 levels per resource, then a finer 101-level grid.  The
# coarse grid cannot represent the continuous optimum, so it sits above it.
coarse, _ = grid_optimum(scen)
fine, x_fine = grid_optimum(scen, points=101)
print(f"grid optimum: {coarse:.4f} (21 levels), {fine:.4f} (101 levels)")

# One measurement campaign per slice, then one KAN per slice.
cfg = ExperimentConfig(toy=True)
surrogates, traces, data = train_surrogates(scen, cfg.training)
for i, (model, tt) in enumerate(zip(surrogates.models, traces)):
    print(f"slice {i}: {len(data[i][1])} measurements, train RMSE {tt.train_rmse[-1]:.2f} ms, "
          f"held-out RMSE {tt.test_rmse[-1]:.2f} ms")
    print("   P(x) =", extract_symbolic(model).formula())

# Same surrogates, same evaluation budget for the two surrogate-driven
# methods; GBO queries the noisy environment directly instead.
for method in ("inslicing", "ga-only", "gbo"):
    costs, ok = [], 0
    for seed in range(5):
        t = run_cell(scen, method, seed, cfg, surrogates)
        costs.append(t.f_best)
        ok += t.truth_report.feasible
    costs = np.array(costs)
    print(f"{method:9s} median cost {np.median(costs):.4f} ({np.median(costs) / fine - 1:+.1%} vs fine grid), "
          f"{ok}/5 feasible on ground truth")

# What the refined allocation looks like next to the grid answer.
t = run_cell(scen, "inslicing", 0, cfg, surrogates)
print("inslicing allocation:\n", np.round(t.x_best, 3))
print("101-level grid allocation:\n", np.round(x_fine, 3))
print("latency under ground truth (ms):", np.round(t.truth_perf, 1), "limits:", spec.thresholds)
