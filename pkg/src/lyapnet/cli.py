"""Command-line entry point: ``lyapnet <subcommand> ...``.

Exit status: 0 on success, 1 on a config/contract violation or a failed
certificate, 2 on usage errors.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import experiment as E
from .cert import (GlobalBudget, PlanningPolicy, as_budgets, certify, corollary_bound,
                   plan_parameters, spectral_cap, table_bound)
from .checkpoint import config_digest, load_checkpoint, save_checkpoint
from .errors import LyapnetError
from .linalg import materialize_conv_matrix, spectral_norm_exact
from .nn import Conv2d
from .spectral import _layer_rng, estimate_layer_sigma

EXACT_LIMIT = 256


def _eps_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _parser():
    p = argparse.ArgumentParser(prog="lyapnet", description="Lyapunov-budgeted robust network harness")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint=False):
        sp.add_argument("--config", help="config path or bundled preset name")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--semantics", choices=["sigma", "sigma2"])
        sp.add_argument("--strict-cert", action="store_true")
        sp.add_argument("--data-dir", help="directory holding the MNIST IDX files")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True)

    def sweep_flags(sp):
        sp.add_argument("--eps", type=_eps_list)
        sp.add_argument("--attack", choices=["fgm", "pgd"])
        sp.add_argument("--k", type=int)
        sp.add_argument("--limit", type=int, help="evaluate on the first N test samples")

    sp = sub.add_parser("plan", help="global budget -> per-layer budgets and caps")
    common(sp)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--nu", type=float)
    sp.add_argument("--layers", type=int, help="number of parameterized layers")

    sp = sub.add_parser("check", help="certificate report for the configured budgets")
    common(sp)
    sp.add_argument("--eps", type=_eps_list)

    sp = sub.add_parser("train", help="train a model and write a checkpoint plus log")
    common(sp)
    sp.add_argument("--epochs", type=int)

    sp = sub.add_parser("attack", help="robust-accuracy table for a checkpoint")
    common(sp, checkpoint=True)
    sweep_flags(sp)

    sp = sub.add_parser("verify-bound", help="deviation vs bound report for a checkpoint")
    common(sp, checkpoint=True)
    sweep_flags(sp)

    sp = sub.add_parser("spectral", help="per-layer largest singular values of a checkpoint")
    common(sp, checkpoint=True)
    sp.add_argument("--iters", type=int, default=100)
    return p


def _overrides(args):
    o = {}
    if args.seed is not None:
        o["seed"] = args.seed
    if args.semantics:
        o["regularizer"] = {"semantics": args.semantics}
    if args.strict_cert:
        o["strict_cert"] = True
    if getattr(args, "epochs", None) is not None:
        o["epochs"] = args.epochs
    return o


def _config(args, required=True):
    if args.config is None:
        if required:
            raise LyapnetError("--config is required for this command")
        return None
    return E.load_config(args.config, _overrides(args))


def _emit(args, name, obj, text=None):
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        E.write_json(os.path.join(args.out, name + ".json"), obj)
        if text is not None:
            with open(os.path.join(args.out, name + ".csv"), "w") as f:
                f.write(text)
    print(text if text is not None else json.dumps(obj, indent=2, sort_keys=True, default=E._json_default))


def cmd_plan(args):
    cfg = _config(args, required=False)
    if args.delta is not None or args.nu is not None:
        if args.delta is None or args.nu is None:
            raise LyapnetError("--delta and --nu go together")
        g = GlobalBudget(args.delta, args.nu)
        n = args.layers or 3
        budgets = plan_parameters(n, g, PlanningPolicy())
    elif cfg is not None and cfg["budgets"] is not None:
        g = E.global_budget(cfg)
        budgets = as_budgets(cfg["budgets"]["layers"])
    else:
        raise LyapnetError("plan needs --delta/--nu or a config with budgets")
    out = {"global": {"delta": g.delta, "nu": g.nu},
           "layers": [{"delta": b.delta, "nu": b.nu, "cap": spectral_cap(b)} for b in budgets]}
    _emit(args, "plan", out)
    return 0


def cmd_check(args):
    cfg = _config(args)
    if cfg["budgets"] is None:
        raise LyapnetError("config has no budgets to certify")
    g = E.global_budget(cfg)
    cert = certify(as_budgets(cfg["budgets"]["layers"]), g, strict=cfg["strict_cert"])
    eps = args.eps if args.eps is not None else cfg["attack"]["eps"]
    report = {
        "config": cfg,
        "seed": cfg["seed"],
        "certificate": cert.summary(),
        "bounds": [{"eps": e, "corollary_bound": corollary_bound(g, e), "table_bound": table_bound(g, e)}
                   for e in eps],
    }
    _emit(args, "certificate", report)
    return 0 if cert.passed else 1


def cmd_train(args):
    cfg = _config(args)
    started = time.perf_counter()
    train_set, test_set = E.load_datasets(cfg, args.data_dir)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "train_log.jsonl"), "w") as log:
        def record(r):
            log.write(json.dumps(r, sort_keys=True) + "\n")
            print(f"epoch {r['epoch']}: loss {r['loss']:.4f} sigma {[round(s, 4) for s in r['sigma']]}",
                  file=sys.stderr)
        model, _ = E.train(cfg, train_set, record)
    save_checkpoint(os.path.join(out, "model.lyap"), model, cfg)
    E.write_json(os.path.join(out, "config.json"), cfg)
    summary = {"seed": cfg["seed"], "clean_accuracy": float(np.mean(model.predict(test_set.x) == test_set.y)),
               "seconds": time.perf_counter() - started, "checkpoint": os.path.join(out, "model.lyap")}
    print(json.dumps(summary, sort_keys=True))
    return 0


def _load_for_eval(args):
    model, digest = load_checkpoint(args.checkpoint)
    if args.config is None:
        path = os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "config.json")
        if not os.path.exists(path):
            raise LyapnetError("no --config given and no config.json next to the checkpoint")
        args.config = path
    cfg = _config(args)
    if digest != b"\x00" * 32 and digest != config_digest(cfg):
        print("warning: checkpoint was trained under a different config digest", file=sys.stderr)
    return model, cfg


def _sweep_args(args, cfg):
    kinds = [args.attack] if args.attack else None
    if args.eps is not None:
        if any(e < 0 for e in args.eps) or args.eps != sorted(args.eps):
            raise LyapnetError("--eps must be non-negative and ascending")
    return kinds, args.eps, args.k


def _eval_set(args, cfg):
    _, test_set = E.load_datasets(cfg, args.data_dir)
    return test_set.subset(args.limit) if args.limit else test_set


def cmd_attack(args):
    model, cfg = _load_for_eval(args)
    kinds, eps, k = _sweep_args(args, cfg)
    rows = E.sweep(model, cfg, _eval_set(args, cfg), kinds, eps, k)
    table = "attack,eps,robust_accuracy\n" + "".join(
        f"{r['attack']},{r['eps']!r},{r['robust_accuracy']!r}\n" for r in rows)
    _emit(args, "attack", {"config": cfg, "seed": cfg["seed"], "rows": rows}, table)
    return 0


def cmd_verify_bound(args):
    started = time.perf_counter()
    model, cfg = _load_for_eval(args)
    kinds, eps, k = _sweep_args(args, cfg)
    test_set = _eval_set(args, cfg)
    rows = E.sweep(model, cfg, test_set, kinds, eps, k)
    report = E.build_report(model, cfg, test_set, rows, started=started)
    _emit(args, "report", report, E.rows_to_csv(rows))
    flags = [r["bound_satisfied"] for r in rows if r["bound_satisfied"] is not None]
    return 0 if all(flags) else 1


def cmd_spectral(args):
    model, _ = load_checkpoint(args.checkpoint)
    out = []
    for i, layer in enumerate(model.param_layers()):
        op = layer.operator()
        est, _ = estimate_layer_sigma(layer, None, iters=args.iters, rng=_layer_rng(model, i), tol=1e-12)
        exact = None
        if max(op.in_size, op.out_size) <= EXACT_LIMIT:
            if isinstance(layer, Conv2d):
                M = materialize_conv_matrix(layer.params["W"], layer.in_shape, layer.stride, layer.pad)
            else:
                M = layer.params["W"].astype(np.float64)
            exact = spectral_norm_exact(M)
        out.append({"layer": i, "kind": layer.kind, "sigma_estimate": est, "sigma_exact": exact})
    _emit(args, "spectral", {"checkpoint": args.checkpoint, "layers": out})
    return 0


COMMANDS = {"plan": cmd_plan, "check": cmd_check, "train": cmd_train, "attack": cmd_attack,
            "verify-bound": cmd_verify_bound, "spectral": cmd_spectral}


def main(argv=None):
    parser = _parser()
    args = parser.parse_args(argv)  # argparse exits with status 2 on usage errors
    try:
        return COMMANDS[args.command](args)
    except LyapnetError as exc:
        print(f"lyapnet {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
