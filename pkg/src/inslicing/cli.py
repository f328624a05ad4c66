"""Command-line front end: ``inslicing <subcommand> [flags]``.

All subcommands read the same optional JSON config; command-line flags
override values from the file.  Exit codes: 0 success (an infeasible
optimization result is still a success), 2 usage or configuration error,
3 runtime failure.

Config sections (every key optional)::

    {"scenario": {"path", "num_slices", "num_resources", "seed", "toy"},
     "training": {"samples", "steps", "hidden", "sampling", "seed", "l2", "data"},
     "ga": {...GaParams}, "trm": {...TrmParams}, "gbo": {...GboParams},
     "hybrid": {"trm_interval", "budget_evals", "budget_secs", "surrogate_margin",
                "threshold_margin", "capacity_margin"},
     "penalty": {"c1", "c2", "c3"},
     "experiment": {"methods", "seeds", "slice_counts"},
     "models_dir": "path"}
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import harness
from .ga import GaParams
from .gbo import GboParams
from .kan import KanModel, SurrogateSet, TrainingDiverged, extract_symbolic, parse_formula, read_dataset, write_dataset
from .problem import PenaltyWeights
from .simulator import collect_joint

log = logging.getLogger("inslicing")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
SECTIONS = {"scenario", "training", "ga", "trm", "gbo", "hybrid", "penalty", "experiment", "models_dir"}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (exit code 2)."""


def load_config(path):
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(doc) - SECTIONS
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {sorted(unknown)}")
    return doc


def _build(cls, section, name, skip=()):
    section = dict(section or {})
    allowed = {f.name for f in fields(cls)} - set(skip)
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"[{name}] unknown key(s) {sorted(unknown)}")
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def experiment_config(doc, args) -> harness.ExperimentConfig:
    """Merge the config file with command-line overrides."""
    scen = dict(doc.get("scenario") or {})
    unknown = set(scen) - {"path", "num_slices", "num_resources", "seed", "toy"}
    if unknown:
        raise ConfigError(f"[scenario] unknown key(s) {sorted(unknown)}")
    tr = dict(doc.get("training") or {})
    tr.pop("data", None)
    if "hidden" in tr:
        tr["hidden"] = tuple(tr["hidden"])
    training = _build(harness.TrainingParams, tr, "training")
    if getattr(args, "steps", None) is not None:
        training = replace(training, steps=args.steps)
    hyb = dict(doc.get("hybrid") or {})
    hybrid = _build(harness.HybridParams, hyb, "hybrid", skip=("ga", "trm", "penalty"))
    hybrid = replace(hybrid, ga=_build(GaParams, doc.get("ga"), "ga"),
                     trm=_build(harness.TrmParams, doc.get("trm"), "trm"),
                     penalty=_build(PenaltyWeights, doc.get("penalty"), "penalty"))
    gbo_doc = dict(doc.get("gbo") or {})
    gbo_doc.setdefault("budget", training.samples)
    gbo_doc.setdefault("n_init", min(10, gbo_doc["budget"]))
    if getattr(args, "budget_evals", None) is not None:
        hybrid = replace(hybrid, budget_evals=args.budget_evals)
        gbo_doc["budget"] = args.budget_evals
        gbo_doc["n_init"] = min(gbo_doc["n_init"], args.budget_evals)
    if getattr(args, "budget_secs", None) is not None:
        hybrid = replace(hybrid, budget_secs=args.budget_secs)
    gbo = _build(GboParams, gbo_doc, "gbo")
    exp = dict(doc.get("experiment") or {})
    unknown = set(exp) - {"methods", "seeds", "slice_counts"}
    if unknown:
        raise ConfigError(f"[experiment] unknown key(s) {sorted(unknown)}")
    methods = tuple(exp.get("methods", harness.METHODS))
    if getattr(args, "method", None):
        methods = (args.method,)
    bad = set(methods) - set(harness.METHODS)
    if bad:
        raise ConfigError(f"unknown method(s) {sorted(bad)}; choose from {list(harness.METHODS)}")
    seeds = exp.get("seeds", list(range(5)))
    if isinstance(seeds, int):
        seeds = list(range(seeds))
    if getattr(args, "seeds", None) is not None:
        seeds = list(range(args.seeds))
    counts = exp.get("slice_counts")
    if getattr(args, "slice_counts", None):
        counts = args.slice_counts
    scenario_seed = int(scen.get("seed", 0))
    if getattr(args, "seed", None) is not None and args.command in ("experiment", "gen-scenario"):
        scenario_seed = args.seed
    models_dir = getattr(args, "models", None) or doc.get("models_dir")
    return harness.ExperimentConfig(
        num_slices=int(scen.get("num_slices", 9)), num_resources=int(scen.get("num_resources", 6)),
        scenario_seed=scenario_seed, scenario_path=getattr(args, "scenario", None) or scen.get("path"),
        toy=bool(getattr(args, "toy", False) or scen.get("toy", False)), methods=methods,
        seeds=tuple(int(s) for s in seeds), slice_counts=tuple(counts) if counts else None,
        training=training, hybrid=hybrid, gbo=gbo, models_dir=models_dir)


def _scenario(cfg):
    if cfg.scenario_path and not Path(cfg.scenario_path).is_file():
        raise ConfigError(f"scenario file not found: {cfg.scenario_path}")
    return harness.make_scenario(cfg)


def _out(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands ---------------------------------------------------------------


def cmd_gen_scenario(args, doc):
    cfg = experiment_config(doc, args)
    scen = harness.make_scenario(replace(cfg, scenario_path=None))
    out = _out(args, "out")
    path = out / "scenario.json"
    scen.save(path)
    print(f"scenario {scen.name}: {scen.spec.num_slices} slices x {scen.spec.num_resources} resources -> {path}")
    return EXIT_OK


def _load_data_dir(data_dir, num_slices):
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise ConfigError(f"dataset directory not found: {data_dir}")
    sets = []
    for i in range(num_slices):
        p = data_dir / f"slice_{i}.csv"
        if not p.is_file():
            raise ConfigError(f"dataset file not found: {p}")
        try:
            X, y, _ = read_dataset(p)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        sets.append((X, y))
    return sets


def cmd_train_kan(args, doc):
    cfg = experiment_config(doc, args)
    scen = _scenario(cfg)
    tp = cfg.training
    if args.seed is not None:
        tp = replace(tp, seed=args.seed)
    data_dir = args.data or (doc.get("training") or {}).get("data")
    out = _out(args, "out")
    models_dir = out / "models"
    models_dir.mkdir(exist_ok=True)
    if data_dir is None:
        data = collect_joint(scen, tp.samples, tp.sampling, seed=tp.seed)
        for i, (X, y) in enumerate(data):
            write_dataset(models_dir / f"slice_{i}_data.csv", X, y, scen.spec.resource_names)
    else:
        data = _load_data_dir(data_dir, scen.spec.num_slices)
    models = []
    for i, (X, y) in enumerate(data):
        if X.shape[1] != scen.spec.num_resources:
            raise ConfigError(f"slice {i}: dataset has {X.shape[1]} inputs, scenario has {scen.spec.num_resources}")
        model, tt = harness.fit_slice_model(scen, i, X, y, tp)
        tt.write_csv(models_dir / f"slice_{i}_training.csv")
        models.append(model)
        print(f"slice {i}: train RMSE {tt.train_rmse[-1]:.3f}  test RMSE {tt.test_rmse[-1]:.3f}")
    SurrogateSet(models).save(models_dir)
    scen.save(out / "scenario.json")
    print(f"models -> {models_dir}")
    return EXIT_OK


def cmd_optimize(args, doc):
    cfg = experiment_config(doc, args)
    method = args.method or (cfg.methods[0] if len(cfg.methods) == 1 else "inslicing")
    scen = _scenario(cfg)
    seed = args.seed if args.seed is not None else cfg.hybrid.seed
    surrogates = None
    if method != "gbo":
        if cfg.models_dir and not args.train_first:
            if not Path(cfg.models_dir).is_dir():
                raise ConfigError(f"models directory not found: {cfg.models_dir}")
            try:
                surrogates = SurrogateSet.load(cfg.models_dir, scen.spec.num_slices)
            except FileNotFoundError as exc:
                raise ConfigError(str(exc)) from exc
        elif args.train_first:
            surrogates, _, _ = harness.train_surrogates(scen, cfg.training)
        else:
            raise ConfigError("no trained models: pass --models DIR (or models_dir in the config) or --train-first")
    trace = harness.run_cell(scen, method, seed, cfg, surrogates)
    out = _out(args, "out")
    rep = trace.truth_report
    solution = {
        "method": method, "seed": int(seed), "scenario": scen.name,
        "x_best": np.asarray(trace.x_best).tolist(), "cost": float(trace.f_best),
        "feasible": bool(trace.feasible),
        "feasible_model": bool(trace.feasible), "feasible_truth": bool(rep.feasible),
        "predicted_performance": None if trace.predicted_perf is None else np.asarray(trace.predicted_perf).tolist(),
        "truth_performance": np.asarray(trace.truth_perf).tolist(),
        "c1_violations": rep.c1_violations.tolist(), "c2_violation": float(rep.c2_violations),
        "c3_violations": np.asarray(rep.c3_violations).tolist(),
        "surrogate_evals": int(trace.surrogate_evals), "truth_queries": int(trace.truth_queries),
    }
    (out / "solution.json").write_text(json.dumps(solution, indent=2) + "\n")
    harness._write(out / "trace.csv", ["iteration", "evals", "best_cost", "feasible", "phase"], trace.rows)
    print(f"{method} seed={seed}: cost {trace.f_best:.6g}  feasible(search)={trace.feasible}  "
          f"feasible(truth)={rep.feasible}  -> {out / 'solution.json'}")
    return EXIT_OK


def cmd_experiment(args, doc):
    cfg = experiment_config(doc, args)
    if cfg.scenario_path:
        _scenario(cfg)
    out = _out(args, "results")
    result = harness.run_experiment(cfg, log=log.info)
    harness.write_results(result, out, cfg)
    for slices in sorted(result.scenarios):
        for method in cfg.methods:
            tr = result.by(slices, method)
            if tr:
                print(f"slices={slices} {method:9s} median cost {harness.median_cost(tr):.6g} "
                      f"({sum(t.truth_report.feasible for t in tr)}/{len(tr)} feasible on ground truth)")
    for slices, method, seed, msg in result.failures:
        print(f"FAILED slices={slices} {method} seed={seed}: {msg}", file=sys.stderr)
    print(f"results -> {out}")
    return EXIT_OK


def cmd_explain(args, doc):
    path = Path(args.model)
    if not path.is_file():
        raise ConfigError(f"model file not found: {path}")
    try:
        model = KanModel.load(path)
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: cannot read model {path}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    expr = extract_symbolic(model, seed=args.seed or 0)
    text = expr.formula()
    print(f"P(x) = {text}")
    print("terms:")
    for t in expr.terms:
        where = "" if t.input < 0 else f" x{t.input + 1}"
        print(f"  {t.kind:8s}{where:5s} " + " ".join(format(c, ".6g") for c in t.coefficients))
    print(f"symbolic-vs-network RMSE: {expr.fit_rmse:.6g} (output range {expr.output_range:.6g})")
    if expr.low_fidelity:
        print("warning: low fidelity, the formula is a coarse approximation")
    # the printed text must parse back to the same expression
    back = parse_formula(text)
    X = model.input_lo + (model.input_hi - model.input_lo) * np.random.default_rng(0).random((64, model.input_dim))
    if not np.allclose(back(X), expr(X), rtol=1e-6, atol=1e-6 * max(expr.output_range, 1.0)):
        print("error: formula text does not round-trip", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


COMMANDS = {"gen-scenario": cmd_gen_scenario, "train-kan": cmd_train_kan, "optimize": cmd_optimize,
            "experiment": cmd_experiment, "explain": cmd_explain}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="seed override")
    common.add_argument("--out", help="output directory")
    common.add_argument("--verbose", "-v", action="store_true")
    scen = argparse.ArgumentParser(add_help=False)
    scen.add_argument("--scenario", help="scenario JSON (default: generate from config)")
    scen.add_argument("--toy", action="store_true", help="two-slice, two-resource scenario")
    budget = argparse.ArgumentParser(add_help=False)
    group = budget.add_mutually_exclusive_group()
    group.add_argument("--budget-evals", type=int, help="evaluation budget (surrogate evals; ground-truth queries for gbo)")
    group.add_argument("--budget-secs", type=float, help="wall-clock cap for the surrogate methods")

    p = argparse.ArgumentParser(prog="inslicing", description="Surrogate-assisted network slice configuration.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-scenario", parents=[common, scen], help="write a scenario JSON")
    t = sub.add_parser("train-kan", parents=[common, scen], help="train one model per slice")
    t.add_argument("--steps", type=int, help="training steps")
    t.add_argument("--data", help="directory of slice_<i>.csv datasets (default: run a measurement campaign)")
    o = sub.add_parser("optimize", parents=[common, scen, budget], help="run one optimization")
    o.add_argument("--method", choices=harness.METHODS)
    o.add_argument("--models", help="directory of trained slice_<i>.json models")
    o.add_argument("--train-first", action="store_true", help="train models before optimizing")
    o.add_argument("--steps", type=int, help="training steps (with --train-first)")
    e = sub.add_parser("experiment", parents=[common, scen, budget], help="run the method comparison")
    e.add_argument("--method", choices=harness.METHODS, help="restrict to one method")
    e.add_argument("--seeds", type=int, help="number of optimizer seeds (0..n-1)")
    e.add_argument("--slice-counts", type=int, nargs="+", help="scalability sweep over slice counts")
    e.add_argument("--models", help="reuse trained models (single slice count only)")
    e.add_argument("--steps", type=int, help="training steps")
    x = sub.add_parser("explain", parents=[common], help="extract a formula from a model file")
    x.add_argument("model", help="model JSON file")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit with code 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        doc = load_config(args.config)
        return COMMANDS[args.command](args, doc)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # anything else is a runtime failure
        if args.verbose:
            raise
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
