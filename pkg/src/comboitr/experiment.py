"""Experiment orchestration behind the command line: configuration, dataset
sidecars, the nuisance-then-fit pipeline, evaluation and report tables.

Every file is written through a :class:`RunWriter` with sorted-key JSON and
``repr`` floats, so identical inputs give byte-identical run directories.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .data import Dataset, read_dataset_csv
from .encoders import DemModel
from .errors import ConfigError, DataError, OutputError
from .nuisance import (PropensityModel, ZeroTreatmentFree, fit_propensity, fit_treatment_free,
                       stabilize, treatment_free_from_dict, treatment_frequencies)
from .policy import ModelPolicy, OraclePolicy, accuracy, empirical_value, true_value
from .simdata import SimSetting, gen_covariates, manifest as sim_manifest
from .training import HyperParams, fit_dem, random_search
from .treatments import TreatmentSpace

DEFAULT_N_GRID = [500, 1000, 2000]
DEFAULTS = {
    "replicates": 1,
    "seed": 0,
    "scheme": "uniform",
    "sigma": 1.0,
    "hyperparams": {},
    "nuisance": {"propensity": "fit", "lam": 0.01, "treatment_free": "fit", "hidden": 32,
                 "epochs": 30},
    "scale": 1.0,
    "n_mc": 20000,
    "ablation": False,
}
WORKERS_ENV = "COMBOITR_WORKERS"


def workers():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        k = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if k < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return k


# ---------------------------------------------------------------- config

def schema():
    text = resources.files("comboitr").joinpath("config_schema.json").read_text()
    return json.loads(text)


def validate_config(cfg):
    """Schema check; raises ConfigError naming the offending key path."""
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.path) or "<root>"
        raise ConfigError(f"config {where}: {e.message}")
    if "hyperparams" in cfg:
        HyperParams.from_dict(cfg["hyperparams"])


def load_config(path=None, **overrides):
    """Read and validate a config file, apply command-line overrides, fill defaults."""
    cfg = {}
    if path is not None:
        try:
            with open(path) as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}") from None
        if not isinstance(cfg, dict):
            raise ConfigError(f"{path}: top level must be an object")
    validate_config(cfg)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    validate_config(cfg)
    out = json.loads(json.dumps(DEFAULTS))
    for k, v in cfg.items():
        if k == "nuisance":
            out["nuisance"].update(v)
        else:
            out[k] = v
    return out


def portable(cfg):
    """The config without its output location, which does not affect results."""
    return {k: v for k, v in cfg.items() if k != "out"}


def config_hash(cfg):
    return hashlib.sha256(canonical_json(portable(cfg)).encode()).hexdigest()


def n_grid(cfg):
    n = cfg.get("n", DEFAULT_N_GRID)
    return [n] if isinstance(n, int) else list(n)


def setting_from_config(cfg):
    if "setting" not in cfg:
        raise ConfigError("config needs a simulation 'setting'")
    kw = {"scheme": cfg["scheme"], "sigma": cfg["sigma"]}
    if "beta_ps" in cfg:
        kw["beta_ps"] = np.asarray(cfg["beta_ps"], dtype=np.float64)
    return SimSetting(cfg["setting"], **kw)


def hyperparams_from_config(cfg, seed=None):
    hp = dict(cfg.get("hyperparams", {}))
    if seed is not None:
        hp["seed"] = seed
    return HyperParams.from_dict(hp)


# ---------------------------------------------------------------- output

def canonical_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


class RunWriter:
    """Single writer for one run directory."""

    def __init__(self, root):
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OutputError(f"cannot create output directory {root}: {exc.strerror}") from None
        self.written = []

    def path(self, name):
        return self.root / name

    def text(self, name, content):
        try:
            with open(self.root / name, "w", newline="") as fh:
                fh.write(content)
        except OSError as exc:
            raise OutputError(f"cannot write {self.root / name}: {exc.strerror}") from None
        self.written.append(name)
        return self.root / name

    def json(self, name, obj):
        return self.text(name, canonical_json(_jsonable(obj)))

    def manifest(self, command, cfg, seeds, extra=None):
        doc = {"tool": "comboitr", "version": __version__, "command": command,
               "config_sha256": config_hash(cfg), "config": portable(cfg), "seeds": seeds,
               "files": sorted(self.written)}
        if extra:
            doc.update(extra)
        return self.json("manifest.json", doc)


def csv_table(header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def text_table(header, rows):
    """Aligned plain-text table; floats printed with 4 decimals."""
    def fmt(v):
        if v is None:
            return "undefined"
        if isinstance(v, (float, np.floating)):
            return f"{float(v):.4f}"
        return str(v)

    cells = [[str(h) for h in header]] + [[fmt(v) for v in row] for row in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def mean_sd(values):
    """``(mean, sd, count)`` over defined values; sd uses ``ddof=1``."""
    vals = [float(v) for v in values if v is not None]
    if not vals:
        return None, None, 0
    sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    return float(np.mean(vals)), sd, len(vals)


def fmt_mean_sd(values):
    m, s, k = mean_sd(values)
    return "undefined" if m is None else f"{m:.4f} ({s:.4f})"


# ---------------------------------------------------------------- datasets

def sidecar_path(csv_path):
    return Path(csv_path).with_suffix(".json")


def load_sidecar(csv_path):
    p = sidecar_path(csv_path)
    if not p.exists():
        return None
    try:
        with open(p) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"unreadable sidecar {p}: {exc}") from None


def setting_from_sidecar(side):
    g = side["generator"]
    return SimSetting(g["setting"], scheme=g["scheme"], sigma=g["sigma"],
                      beta_ps=np.asarray(g["beta_ps"]))


def load_dataset(csv_path, space=None):
    """Dataset plus its simulation sidecar (or None for external data)."""
    side = load_sidecar(csv_path)
    if space is None and side is not None:
        space = TreatmentSpace(side["generator"]["K"], side["generator"]["combos"])
    return read_dataset_csv(csv_path, space=space), side


def sample_documents(sample):
    """CSV text and sidecar document for one simulated replicate."""
    from .data import dataset_to_csv

    data = Dataset.from_sim(sample)
    side = {"generator": sim_manifest(sample.setting), "seed": sample.seed, "n": sample.n,
            "true_effects": sample.delta, "true_propensity": sample.propensity}
    return dataset_to_csv(data), side


# ---------------------------------------------------------------- pipeline

def nuisance_weights(data, cfg, side=None, true_propensity=False, seed=0):
    """Stabilized weights, baseline predictions and the serialisable nuisance
    document, following ``cfg['nuisance']``."""
    nz = cfg["nuisance"]
    mode = "true" if true_propensity else nz["propensity"]
    n_arms = len(data.space)
    doc = {}
    if mode == "true":
        if side is None:
            raise ConfigError("true propensities requested but the dataset has no sidecar")
        prob = np.asarray(side["true_propensity"], dtype=np.float64)
        if prob.shape != (data.n, n_arms):
            raise DataError("sidecar propensities do not match the dataset")
        freq = treatment_frequencies(data.idx, n_arms)
        w = stabilize(freq[data.idx], prob[np.arange(data.n), data.idx])
        doc["propensity"] = {"kind": "true", "freq": freq.tolist()}
    elif mode == "fit":
        prop = fit_propensity(data.X, data.idx, n_arms, lam=nz["lam"])
        w = prop.weights(data.X, data.idx)
        doc["propensity"] = prop.to_dict()
    else:
        w = np.ones(data.n)
        doc["propensity"] = {"kind": "none"}
    if nz["treatment_free"] == "fit":
        tf = fit_treatment_free(data.X, data.y, hidden=nz["hidden"], epochs=nz["epochs"], seed=seed)
    else:
        tf = ZeroTreatmentFree()
    doc["treatment_free"] = tf.to_dict()
    return w, tf.predict(data.X), doc


def fit_pipeline(data, cfg, side=None, true_propensity=False, seed=None, n_jobs=1):
    """Nuisance models then the DEM (random search when configured).

    Returns ``(FitResult, nuisance_doc, metrics)``.
    """
    hp = hyperparams_from_config(cfg, seed)
    w, m_hat, doc = nuisance_weights(data, cfg, side, true_propensity, seed=hp.seed)
    metrics = {"n": data.n}
    search = cfg.get("search")
    if search:
        perm = np.random.default_rng(hp.seed).permutation(data.n)
        k = int(round((1.0 - search.get("val_frac", 0.3)) * data.n))
        tr, va = np.sort(perm[:k]), np.sort(perm[k:])
        if tr.size == 0 or va.size == 0:
            raise ConfigError("validation split leaves an empty part")
        space = search.get("space")
        res, table = random_search(data.subset(tr), data.subset(va), space=space,
                                   n_draws=search.get("n_draws", 50), seed=hp.seed,
                                   weights=w[tr], m_hat=m_hat[tr], base=hp, n_jobs=n_jobs)
        metrics["search"] = [{"hyperparams": h.to_dict(), "val_value": v} for h, v in table]
        metrics["val_value"] = res.val_value
    else:
        res = fit_dem(data, hp, w, m_hat)
    metrics["initial_loss"] = res.initial_loss
    metrics["final_loss"] = res.losses[-1]
    return res, doc, metrics


def write_bundle(writer, res, doc, metrics, cfg):
    writer.json("model.json", res.model.to_dict())
    writer.json("nuisance.json", doc)
    writer.json("hyperparams.json", res.hp.to_dict())
    writer.json("metrics.json", metrics)
    writer.json("config.json", portable(cfg))
    writer.text("trajectory.csv", csv_table(["epoch", "loss"], list(enumerate(res.losses))))


def load_bundle(path):
    """``(DemModel, nuisance document)`` from a fit bundle directory."""
    p = Path(path)
    try:
        with open(p / "model.json") as fh:
            model = DemModel.from_dict(json.load(fh))
        with open(p / "nuisance.json") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot load bundle {path}: {exc.strerror}") from None
    return model, doc


def baseline_from_doc(doc):
    return treatment_free_from_dict(doc["treatment_free"])


def propensity_from_doc(doc):
    d = doc["propensity"]
    return PropensityModel.from_dict(d) if d.get("kind") == "multinomial" else None


def evaluate_policy(policy, data, setting=None, n_mc=20000, seed=0):
    """Row of metrics: empirical value on ``data``; accuracy against the
    oracle and true value on ``n_mc`` fresh draws when ``setting`` is known."""
    ev = empirical_value(policy, data)
    row = {"empirical_value": ev.value, "n_matched": ev.n_matched, "n": data.n}
    if setting is not None:
        X = gen_covariates(n_mc, np.random.SeedSequence([seed, 7]))
        oracle = OraclePolicy(setting)
        row["accuracy"] = accuracy(policy, oracle, X)
        tv = true_value(policy, setting, X=X)
        row["true_value"] = tv.value
        row["true_value_se"] = tv.se
        row["oracle_value"] = true_value(oracle, setting, X=X).value
    return row


def decisions_csv(policy, X):
    idx = policy.decide_indices(X)
    masks = np.asarray(policy.space.masks)[idx]
    return csv_table(["subject", "bitmask", "combo_index"],
                     [(i, int(m), int(j)) for i, (m, j) in enumerate(zip(masks, idx))])


METRIC_COLUMNS = ["empirical_value", "accuracy", "true_value"]


def summary_rows(rows, label_key="label", metrics=METRIC_COLUMNS):
    """Per-replicate rows followed by one ``mean (sd)`` row."""
    present = [m for m in metrics if any(m in r for r in rows)]
    table = [[r[label_key]] + [r.get(m) for m in present] for r in rows]
    agg = ["mean (sd)"] + [fmt_mean_sd([r.get(m) for r in rows]) for m in present]
    return [label_key] + present, table + [agg]


def summarize(rows, metrics=METRIC_COLUMNS):
    out = {}
    for m in metrics:
        if any(m in r for r in rows):
            mu, sd, k = mean_sd([r.get(m) for r in rows])
            out[m] = {"mean": mu if mu is not None else "undefined",
                      "sd": sd if sd is not None else "undefined", "count": k}
    return out


# ---------------------------------------------------------------- replicates

def run_replicate(cfg, n, seed, true_propensity=False):
    """Simulate, fit and evaluate one replicate (plus the additive ablation
    when ``cfg['ablation']``)."""
    from .simdata import simulate

    setting = setting_from_config(cfg)
    ss = np.random.SeedSequence(seed)
    s_data, s_fit, s_eval = (int(c.generate_state(1, dtype=np.uint32)[0]) for c in ss.spawn(3))
    data = Dataset.from_sim(simulate(setting, n, s_data))
    side = {"true_propensity": setting.propensities(data.X)}
    res, _, metrics = fit_pipeline(data, cfg, side, true_propensity, seed=s_fit)
    row = {"n": n, "seed": seed, "final_loss": metrics["final_loss"]}
    row.update(evaluate_policy(ModelPolicy(res.model), data, setting, cfg["n_mc"], s_eval))
    if cfg.get("ablation"):
        abl = dict(cfg, hyperparams=dict(cfg.get("hyperparams", {}), lam_i="inf"))
        res_a, _, _ = fit_pipeline(data, abl, side, true_propensity, seed=s_fit)
        ev = evaluate_policy(ModelPolicy(res_a.model), data, setting, cfg["n_mc"], s_eval)
        row["additive_accuracy"] = ev["accuracy"]
        row["additive_true_value"] = ev["true_value"]
    return row


def map_ordered(fn, items, n_jobs):
    """``[fn(x) for x in items]``, fanned out over threads, order preserved."""
    if n_jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n_jobs) as pool:
        return list(pool.map(fn, items))
