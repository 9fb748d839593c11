"""``comboitr`` command line.

Exit codes: 0 success, 2 configuration, 3 data, 4 optimization,
5 infeasible budget, 6 output I/O.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import experiment as ex
from .budget import KnapsackInstance, solve_mckp
from .data import read_dataset_csv
from .errors import ComboITRError, ConfigError, DataError
from .policy import ModelPolicy, OraclePolicy
from .simdata import replicate_seeds, simulate
from .treatments import TreatmentSpace


def _parse_list(text, kind=float):
    try:
        return [kind(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse list {text!r}") from None


def _parse_budgets(text):
    out = []
    for t in text.split(","):
        t = t.strip()
        if not t:
            continue
        if t.endswith("%"):
            out.append(t)
            continue
        try:
            out.append(float(t))
        except ValueError:
            raise ConfigError(f"bad budget {t!r}") from None
    return out


def _config(args, **extra):
    over = {"seed": getattr(args, "seed", None), "out": getattr(args, "out", None)}
    over.update(extra)
    return ex.load_config(args.config, **over)


def _out(args, cfg, default):
    return ex.RunWriter(cfg.get("out") or default)


# ---------------------------------------------------------------- simulate

def cmd_simulate(args):
    cfg = _config(args)
    setting = ex.setting_from_config(cfg)
    grid = ex.n_grid(cfg)
    reps = cfg["replicates"]
    seeds = replicate_seeds(cfg["seed"], len(grid) * reps)
    jobs = [(n, r, seeds[g * reps + r]) for g, n in enumerate(grid) for r in range(reps)]

    def make(job):
        n, r, s = job
        return ex.sample_documents(simulate(setting, n, s))

    docs = ex.map_ordered(make, jobs, ex.workers())
    w = _out(args, cfg, "sim")
    files = []
    for (n, r, s), (text, side) in zip(jobs, docs):
        stem = f"setting{setting.id}_n{n}_rep{r:03d}"
        w.text(stem + ".csv", text)
        w.json(stem + ".json", side)
        files.append({"csv": stem + ".csv", "n": n, "replicate": r, "seed": s})
    w.json("datasets.json", files)
    w.manifest("simulate", cfg, {"master": cfg["seed"], "replicates": [f["seed"] for f in files]})
    print(f"wrote {len(files)} datasets to {w.root}")
    return 0


# ---------------------------------------------------------------- fit

def _dataset_path(args, cfg):
    path = args.dataset or cfg.get("dataset")
    if not path:
        raise ConfigError("no dataset given (positional argument or config 'dataset')")
    return path


def cmd_fit(args):
    cfg = _config(args)
    path = _dataset_path(args, cfg)
    data, side = ex.load_dataset(path)
    if args.true_propensity:
        cfg["nuisance"]["propensity"] = "true"
    res, doc, metrics = ex.fit_pipeline(data, cfg, side, args.true_propensity,
                                        seed=cfg["seed"], n_jobs=ex.workers())
    w = _out(args, cfg, "bundle")
    ex.write_bundle(w, res, doc, metrics, cfg)
    w.manifest("fit", cfg, {"fit": res.hp.seed}, {"dataset": str(path)})
    print(f"fitted on {data.n} rows: loss {metrics['initial_loss']:.4f} -> "
          f"{metrics['final_loss']:.4f}; bundle in {w.root}")
    return 0


# ---------------------------------------------------------------- evaluate

def cmd_evaluate(args):
    cfg = _config(args)
    paths = args.datasets or ([cfg["dataset"]] if "dataset" in cfg else [])
    if not paths:
        raise ConfigError("evaluate needs at least one dataset")
    model = None
    if args.bundle != "oracle":
        model, _ = ex.load_bundle(args.bundle)
    w = _out(args, cfg, "eval")
    rows = []
    for k, path in enumerate(paths):
        data, side = ex.load_dataset(path, space=None if model is None else model.space)
        setting = ex.setting_from_sidecar(side) if side is not None else None
        if model is None:
            if setting is None:
                raise ConfigError("the oracle policy needs simulated data with a sidecar")
            policy = OraclePolicy(setting)
        else:
            policy = ModelPolicy(model)
        row = ex.evaluate_policy(policy, data, setting, cfg["n_mc"], cfg["seed"] + k)
        row["label"] = Path(path).stem
        rows.append(row)
        w.text(f"decisions_{Path(path).stem}.csv", ex.decisions_csv(policy, data.X))
    header, table = ex.summary_rows(rows)
    text = ex.text_table(header, table)
    marked = [{k: ("undefined" if v is None else v) for k, v in r.items()} for r in rows]
    w.json("report.json", {"kind": "evaluate", "rows": marked, "summary": ex.summarize(rows)})
    w.text("report.txt", text)
    w.manifest("evaluate", cfg, {"eval": cfg["seed"]}, {"bundle": args.bundle})
    print(text, end="")
    return 0


# ---------------------------------------------------------------- allocate

def _read_delta_csv(path, K):
    """Delta matrix CSV: ``subject`` column then one column per bitmask."""
    try:
        with open(path) as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    if not lines:
        raise DataError(f"{path}: empty file")
    header = lines[0].split(",")
    if header[0] != "subject":
        raise DataError(f"{path}: first column must be 'subject'")
    try:
        masks = [int(h) for h in header[1:]]
        rows = [[float(v) for v in ln.split(",")[1:]] for ln in lines[1:]]
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if any(len(r) != len(masks) for r in rows):
        raise DataError(f"{path}: ragged rows")
    return TreatmentSpace(K, masks, warn_missing_null=False), np.array(rows, dtype=np.float64)


def delta_csv(space, delta):
    header = ["subject"] + [str(m) for m in space.masks]
    return ex.csv_table(header, [[i] + list(row) for i, row in enumerate(delta)])


def resolve_budgets(budgets, delta, costs, scale):
    """Numbers pass through; ``"q%"`` is ``q`` percent of the average cost of
    the unconstrained argmax assignment."""
    ref = None
    out = []
    for b in budgets:
        if isinstance(b, str):
            if ref is None:
                ref = solve_mckp(KnapsackInstance(delta, costs, float(costs.max()), scale)).avg_cost
            out.append((b, float(b[:-1]) / 100.0 * ref))
        else:
            out.append((repr(float(b)), float(b)))
    return out


def cmd_allocate(args):
    cfg = _config(args)
    costs = _parse_list(args.costs) if args.costs else cfg.get("costs")
    if costs is None:
        raise ConfigError("allocate needs unit costs (--costs or config 'costs')")
    unit = np.asarray(costs, dtype=np.float64)
    budgets = _parse_budgets(args.budget) if args.budget else cfg.get("budgets")
    if not budgets:
        raise ConfigError("allocate needs budgets (--budget or config 'budgets')")
    w = _out(args, cfg, "alloc")
    if args.delta:
        space, delta = _read_delta_csv(args.delta, unit.size)
    else:
        if not args.bundle:
            raise ConfigError("allocate needs --bundle with --data, or --delta")
        model, _ = ex.load_bundle(args.bundle)
        src = args.data or cfg.get("dataset")
        if not src:
            raise ConfigError("model-backed allocation needs --data")
        X = read_dataset_csv(src, space=model.space).X
        space, delta = model.space, model.effects(X)
        w.text("delta.csv", delta_csv(space, delta))
    if space.K != unit.size:
        raise ConfigError(f"{unit.size} unit costs for {space.K} treatments")
    ccost = space.costs(unit)
    scale = cfg["scale"]
    rows = []
    for label, B in resolve_budgets(budgets, delta, ccost, scale):
        sol = solve_mckp(KnapsackInstance(delta, ccost, B, scale))
        masks = np.asarray(space.masks)[sol.choice]
        w.text(f"assignment_{label}.csv", ex.csv_table(
            ["subject", "bitmask", "combo_index", "effect", "cost"],
            [(i, int(m), int(j), delta[i, j], ccost[j])
             for i, (m, j) in enumerate(zip(masks, sol.choice))]))
        rows.append({"budget": label, "budget_value": B, "objective": sol.objective,
                     "avg_cost": sol.avg_cost})
    header = ["budget", "budget_value", "objective", "avg_cost"]
    text = ex.text_table(header, [[r[h] for h in header] for r in rows])
    w.json("budget_sweep.json", {"kind": "allocate", "rows": rows, "costs": unit,
                                  "combo_costs": ccost, "masks": list(space.masks)})
    w.text("budget_sweep.txt", text)
    w.manifest("allocate", cfg, {}, {"source": args.delta or args.bundle})
    print(text, end="")
    return 0


# ---------------------------------------------------------------- sweep

def cmd_sweep(args):
    cfg = _config(args)
    grid = ex.n_grid(cfg)
    reps = cfg["replicates"]
    seeds = replicate_seeds(cfg["seed"], len(grid) * reps)
    jobs = [(n, r, seeds[g * reps + r]) for g, n in enumerate(grid) for r in range(reps)]
    ex.setting_from_config(cfg)

    def run(job):
        n, r, s = job
        row = ex.run_replicate(cfg, n, s, args.true_propensity)
        row["label"] = f"n{n}_rep{r:03d}"
        return row

    rows = ex.map_ordered(run, jobs, ex.workers())
    metrics = ex.METRIC_COLUMNS + (["additive_accuracy", "additive_true_value"]
                                   if cfg.get("ablation") else [])
    w = _out(args, cfg, "sweep")
    parts = []
    summary = {}
    for n in grid:
        sub = [r for r in rows if r["n"] == n]
        header, table = ex.summary_rows(sub, metrics=metrics)
        parts.append(f"n = {n}\n" + ex.text_table(header, table))
        summary[str(n)] = ex.summarize(sub, metrics)
    text = "\n".join(parts)
    w.json("report.json", {"kind": "sweep", "rows": rows, "summary": summary})
    w.text("report.txt", text)
    w.manifest("sweep", cfg, {"master": cfg["seed"], "replicates": [s for _, _, s in jobs]})
    print(text, end="")
    return 0


# ---------------------------------------------------------------- report

def cmd_report(args):
    root = Path(args.run_dir)
    found = sorted(p for p in root.glob("*.json")
                   if p.name in ("report.json", "budget_sweep.json"))
    if not found:
        raise DataError(f"no report.json or budget_sweep.json in {root}")
    parts = []
    for p in found:
        with open(p) as fh:
            doc = json.load(fh)
        rows = doc.get("rows", [])
        if doc.get("kind") == "allocate":
            header = ["budget", "budget_value", "objective", "avg_cost"]
            parts.append(ex.text_table(header, [[r[h] for h in header] for r in rows]))
        else:
            for r in rows:
                for k, v in r.items():
                    if v == "undefined":
                        r[k] = None
                r.setdefault("label", f"n{r.get('n')}")
            header, table = ex.summary_rows(rows)
            parts.append(ex.text_table(header, table))
    text = "\n".join(parts)
    ex.RunWriter(root).text("summary.txt", text)
    print(text, end="")
    return 0


# ---------------------------------------------------------------- main

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment configuration JSON")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")

    p = argparse.ArgumentParser(prog="comboitr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"comboitr {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate simulated datasets")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", parents=[common], help="fit nuisance models and the DEM")
    s.add_argument("dataset", nargs="?")
    s.add_argument("--true-propensity", action="store_true",
                   help="use the simulation's true propensities instead of fitting them")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("evaluate", parents=[common], help="score a fitted bundle")
    s.add_argument("bundle", help="bundle directory, or 'oracle'")
    s.add_argument("datasets", nargs="*")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("allocate", parents=[common], help="budget-constrained assignment")
    s.add_argument("--bundle")
    s.add_argument("--data", help="covariates to allocate (dataset CSV)")
    s.add_argument("--delta", help="treatment-effect matrix CSV instead of a bundle")
    s.add_argument("--costs", help="comma-separated unit cost per treatment")
    s.add_argument("--budget", help="comma-separated budgets; 'q%%' is relative to the "
                   "unconstrained assignment's average cost")
    s.set_defaults(func=cmd_allocate)

    s = sub.add_parser("sweep", parents=[common], help="simulate, fit and evaluate replicates")
    s.add_argument("--true-propensity", action="store_true")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("report", help="render tables from a run directory")
    s.add_argument("run_dir")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return args.func(args)
    except ComboITRError as exc:
        print(f"comboitr {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
