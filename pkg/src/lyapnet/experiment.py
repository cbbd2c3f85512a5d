"""Experiment configs, the training loop, bound verification and report emission."""

import copy
import csv
import io
import json
import os
import time
from importlib import resources

import jsonschema
import numpy as np

from . import __version__, kernels
from .attacks import AttackConfig, adversarial_train_step, attack, shard_map, workers
from .cert import (GlobalBudget, PlanningPolicy, as_budgets, certify, corollary_bound,
                   plan_parameters, spectral_cap, table_bound)
from .data import Dataset, digits_dataset, find_mnist, load_mnist_idx, synth_dataset
from .errors import ConfigError, InputError
from .nn import Model, accuracy, forward
from .optim import OptimizerState
from .spectral import RegularizerConfig, apply_constraints, layer_sigmas

CSV_COLUMNS = ["attack", "eps", "robust_accuracy", "mean_deviation", "corollary_bound",
               "table_bound", "bound_satisfied", "corollary_satisfied"]

DEFAULTS = {
    "name": "experiment",
    "seed": 0,
    "model": {"input_shape": [784], "layers": []},
    "dataset": {"source": "synth"},
    "budgets": None,
    "regularizer": {"mode": "projection", "semantics": "sigma", "levels": None, "uniform_beta": None,
                    "train_power_iters": 1, "cert_power_iters": 100, "tol": 1e-3},
    "optimizer": {"kind": "adam", "lr": 0.001, "momentum": 0.0, "beta1": 0.9, "beta2": 0.999,
                  "eps": 1e-8, "weight_decay": 0.0},
    "epochs": 5,
    "batch_size": 128,
    "attack": {"kinds": ["pgd"], "eps": [0.1, 0.2, 0.3], "k": 100, "alpha_ratio": 0.02, "clip": None},
    "adversarial_training": {"enabled": False, "kind": "fgm", "eps": 0.1, "k": 10},
    "strict_cert": False,
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in (override or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def schema():
    return json.loads(resources.files("lyapnet").joinpath("presets/config.schema.json").read_text())


def preset_names():
    root = resources.files("lyapnet").joinpath("presets")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json") and "schema" not in p.name)


def load_config(source, overrides=None):
    """Read a config from a path or a bundled preset name and resolve it."""
    if isinstance(source, dict):
        raw = source
    elif os.path.exists(source):
        with open(source) as f:
            raw = json.load(f)
    elif source in preset_names():
        raw = json.loads(resources.files("lyapnet").joinpath(f"presets/{source}.json").read_text())
    else:
        raise ConfigError(f"no config file or preset named {source!r}")
    return resolve_config(_merge(raw, overrides))


def resolve_config(raw):
    """Validate against the schema, fill defaults, plan budgets and check invariants."""
    try:
        jsonschema.validate(raw, schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"config invalid at {path}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)

    eps = cfg["attack"]["eps"]
    if any(e < 0 for e in eps) or eps != sorted(eps):
        raise ConfigError("attack eps list must be non-negative and ascending")

    n_param = _count_param_layers(cfg["model"])
    b = cfg["budgets"]
    if b is not None:
        g = GlobalBudget(b["global"]["delta"], b["global"]["nu"])
        policy = PlanningPolicy(kind=b.get("policy", "explicit"), budgets=b.get("layers"),
                                **b.get("margins", {}))
        try:
            budgets = plan_parameters(n_param, g, policy)
        except Exception as exc:
            raise ConfigError(f"budget planning failed: {exc}") from None
        b["layers"] = [[x.delta, x.nu] for x in budgets]
        b["policy"] = "explicit"
        caps = [spectral_cap(x) for x in budgets]
        reg = cfg["regularizer"]
        if reg["uniform_beta"] is None:
            if reg["levels"] is None:
                reg["levels"] = caps
            if len(reg["levels"]) != n_param:
                raise ConfigError(f"{len(reg['levels'])} regularization levels for {n_param} layers")
            for i, (lvl, cap) in enumerate(zip(reg["levels"], caps), 1):
                if lvl > cap:
                    raise ConfigError(f"layer {i}: regularization level {lvl} exceeds its cap {cap:.4f}")
    elif cfg["regularizer"]["mode"] == "projection" and cfg["regularizer"]["uniform_beta"] is None \
            and cfg["regularizer"]["levels"] is None:
        raise ConfigError("projection mode needs budgets, explicit levels or uniform_beta")
    return cfg


def _count_param_layers(model_cfg):
    def count(layers):
        n = 0
        for spec in layers:
            if spec["kind"] == "residual":
                n += count(spec["branch"])
            elif spec["kind"] in ("dense", "conv"):
                n += 1
        return n
    return count(model_cfg["layers"])


def global_budget(cfg):
    b = cfg.get("budgets")
    return None if b is None else GlobalBudget(b["global"]["delta"], b["global"]["nu"])


def regularizer(cfg):
    r = cfg["regularizer"]
    return RegularizerConfig(mode=r["mode"], semantics=r["semantics"], per_layer_beta=list(r["levels"] or []),
                             train_power_iters=r["train_power_iters"], cert_power_iters=r["cert_power_iters"],
                             tol=r["tol"], uniform_beta=r["uniform_beta"])


def build_model(cfg):
    return Model.from_spec(cfg["model"]["layers"], cfg["model"]["input_shape"], seed=cfg["seed"])


def load_datasets(cfg, data_dir=None):
    """Return ``(train, test)`` reshaped to the model's input shape."""
    d = cfg["dataset"]
    src = d["source"]
    if src == "mnist":
        found = find_mnist(data_dir or d.get("path"))
        if found is None:
            raise InputError("MNIST IDX files not found; set LYAPNET_MNIST_DIR or dataset.path")
        train = load_mnist_idx(*found["train"])
        test = load_mnist_idx(*found["test"])
    elif src == "synth":
        full = synth_dataset(d.get("classes", 10), d.get("dim", 64), d.get("per_class", 200) + d.get("test_per_class", 50),
                             d.get("seed", cfg["seed"]), d.get("spread", 1.0), d.get("noise", 0.25))
        n_test = d.get("classes", 10) * d.get("test_per_class", 50)
        train = Dataset(full.x[n_test:], full.y[n_test:], "synth-train")
        test = Dataset(full.x[:n_test], full.y[:n_test], "synth-test")
    elif src == "digits":
        train, test = digits_dataset(d.get("seed", 0))
    else:
        raise ConfigError(f"unknown dataset source {src!r}")
    shape = tuple(cfg["model"]["input_shape"])
    for ds in (train, test):
        ds.x = ds.x.reshape((len(ds.x),) + shape)
    limit = d.get("test_limit")
    if limit:
        test = test.subset(limit)
    return train, test


def train(cfg, train_set, log=None):
    """Train per ``cfg``; returns ``(model, history)`` with one record per epoch.

    Each record carries the certification-grade sigma of every layer measured
    after the end-of-epoch constraint pass.
    """
    model = build_model(cfg)
    opt = OptimizerState.from_config(cfg["optimizer"])
    reg = regularizer(cfg)
    active = reg if reg.mode == "projection" else None
    thresholds = None
    if active is not None:
        thresholds = [reg.threshold(b) for b in reg.betas(len(model.param_layers()))]
        apply_constraints(model, reg, full=True)

    adv = cfg["adversarial_training"]
    adv_cfg = AttackConfig(adv["kind"], adv["eps"], adv.get("k", 10)) if adv["enabled"] else None
    rng = np.random.default_rng(cfg["seed"])
    x, y = train_set.x, train_set.y
    bs = cfg["batch_size"]
    history = []
    for epoch in range(1, cfg["epochs"] + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(y))
        losses = []
        for i in range(0, len(order), bs):
            idx = order[i:i + bs]
            losses.append(adversarial_train_step(model, x[idx], y[idx], adv_cfg, opt, active))
        if active is not None:
            apply_constraints(model, reg, full=True)
        record = {
            "epoch": epoch,
            "loss": float(np.mean(losses)) if losses else 0.0,
            "sigma": layer_sigmas(model, reg.cert_power_iters),
            "threshold": thresholds,
            "seconds": time.perf_counter() - t0,
        }
        history.append(record)
        if log is not None:
            log(record)
    return model, history


def output_deviation(model, x_clean, x_adv):
    """Per-sample l2 distance between final activations on clean and attacked inputs."""
    def run(s):
        a = forward(model, x_clean[s])[0].astype(np.float64)
        b = forward(model, x_adv[s])[0].astype(np.float64)
        return np.sqrt(((a - b) ** 2).reshape(len(a), -1).sum(axis=1))
    parts = shard_map(run, len(x_clean))
    return np.concatenate(parts) if parts else np.zeros(0)


def measure_deviation(model, x, y, cfg):
    """Mean l2 change of the network output under the attack described by ``cfg``."""
    if len(x) == 0:
        raise InputError("empty dataset")
    x_adv = attack(model, x, y, cfg)
    return float(np.mean(output_deviation(model, np.asarray(x, dtype=np.float64), x_adv)))


def sweep(model, cfg, test_set, kinds=None, eps_list=None, k=None):
    """Attack sweep over kinds x eps; one row per pair with accuracy, deviation and both bounds."""
    a = cfg["attack"]
    kinds = kinds or a["kinds"]
    eps_list = a["eps"] if eps_list is None else eps_list
    g = global_budget(cfg)
    clip = tuple(a["clip"]) if a.get("clip") else None
    rows = []
    x = np.asarray(test_set.x, dtype=np.float64)
    for kind in kinds:
        for eps in eps_list:
            acfg = AttackConfig(kind, eps, k or a["k"], a["alpha_ratio"], cfg["seed"], clip)
            x_adv = attack(model, x, test_set.y, acfg)
            dev = float(np.mean(output_deviation(model, x, x_adv)))
            acc = float(np.mean(model.predict(x_adv) == test_set.y))
            cb = tb = None
            if g is not None:
                cb, tb = corollary_bound(g, eps), table_bound(g, eps)
            rows.append({
                "attack": kind, "eps": eps, "robust_accuracy": acc, "mean_deviation": dev,
                "corollary_bound": cb, "table_bound": tb,
                "bound_satisfied": None if tb is None else bool(dev <= tb),
                "corollary_satisfied": None if cb is None else bool(dev <= cb),
            })
    return rows


def certificate_for(cfg):
    b = cfg.get("budgets")
    if b is None or len(b["layers"]) <= 2:
        return None
    return certify(as_budgets(b["layers"]), global_budget(cfg), strict=cfg.get("strict_cert", False))


def build_report(model, cfg, test_set, rows, history=None, started=None):
    cert = certificate_for(cfg)
    reg = regularizer(cfg)
    return {
        "name": cfg["name"],
        "seed": cfg["seed"],
        "config": cfg,
        "semantics": reg.semantics,
        "clean_accuracy": accuracy(model, test_set.x, test_set.y),
        "n_test": len(test_set),
        "layer_sigma": layer_sigmas(model, reg.cert_power_iters),
        "certificate": None if cert is None else cert.summary(),
        "rows": rows,
        "history": history or [],
        "runtime": {
            "seconds": None if started is None else time.perf_counter() - started,
            "kernel_backend": kernels.BACKEND,
            "workers": workers(),
            "version": __version__,
        },
    }


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: _fmt(r[c]) for c in CSV_COLUMNS})
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def recheck_flags(report):
    """Recompute every bound flag from the report's own numbers."""
    out = []
    for r in report["rows"]:
        tb = r["table_bound"]
        out.append(None if tb is None else r["mean_deviation"] <= tb)
    return out


def write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
