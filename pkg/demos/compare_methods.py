"""The nine-slice, six-resource comparison at a glance.

    python demos/compare_methods.py [n_seeds]      # default 3, ~1 min per seed

The acceptance suite runs the same thing with 20 seeds.
"""
import sys

import numpy as np

from inslicing.harness import ExperimentConfig, compute_regret, median_cost, normalized_performance, run_experiment

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 3
cfg = ExperimentConfig(seeds=tuple(range(n_seeds)))
result = run_experiment(cfg, log=print)
scen = result.scenarios[9]
ref = result.reference[9]

print(f"\n{'method':10s} {'median cost':>12s} {'median regret':>14s} {'truth-feasible':>15s} {'mean Q/latency':>15s}")
for m in cfg.methods:
    tr = result.by(9, m)
    regret = np.median([compute_regret(t, ref) for t in tr])
    feasible = sum(t.truth_report.feasible for t in tr)
    # 1.0 means every slice sits exactly on its latency limit; larger means
    # resources spent beyond what the limit needed
    ratio = np.mean([normalized_performance(scen.spec, t.truth_perf).mean() for t in tr])
    print(f"{m:10s} {median_cost(tr):12.4f} {regret:14.4f} {feasible:>12d}/{len(tr):<2d} {ratio:15.3f}")

# where the best hybrid solution puts its resources
best = min(result.by(9, "inslicing"), key=lambda t: t.f_best)
print("\nallocation per slice (rows) and resource (columns):")
print("      " + " ".join(f"{r:>12s}" for r in scen.spec.resource_names))
for name, row in zip(scen.spec.slice_names, best.x_best):
    print(f"{name:6s}" + " ".join(f"{v:12.3f}" for v in row))
print("capacity used:", np.round(best.x_best.sum(axis=0), 3))
