"""Command-line front end.

    pxlmirt simulate --config sim.yaml
    pxlmirt fit --config fit.json --set prior.k_star=6 --set out=runs/a
    pxlmirt gibbs | score | metrics | heatmap ...

Every command reads an optional JSON/YAML config, applies ``--set
key=value`` overrides (dotted keys, values parsed as YAML scalars), and
writes ``manifest.json`` with the fully resolved settings next to its
outputs.  Exit codes: 0 success, 2 configuration error, 3 data error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time

import numpy as np
import yaml

from . import __version__
from .em import LadderConfig, dynamic_posterior_exploration
from .errors import ConfigError, DataError, NumericError, ParameterError, PxlError
from .gibbs import GibbsHyper, run_gibbs, write_chain_csv
from .heatmap import write_heatmap
from .io import (load_params, read_json, read_matrix, read_responses, save_params, write_json,
                 write_matrix, write_responses)
from .metrics import metrics_report, reconstruction_mse
from .model import ItemKind, ModelParams, PriorConfig, validate
from .sun import mixed_sun_params, sample_sun
from .synth import SynthSpec, generate, ibp_preset, overlap_preset

DEFAULTS = {
    "simulate": {
        "preset": "ibp", "out": "sim", "seed": 2024, "n_obs": None, "n_items": None,
        "alpha": 2.0, "keep_k": 5, "k": 4, "pair_fraction": 0.5, "magnitude": 1.0,
        "intercept_sd": 0.5, "kinds": None, "loading": None, "intercepts": None,
    },
    "fit": {
        "data": None, "truth": None, "out": "fit", "seed": 0, "threads": None,
        "tol": 0.06, "max_iter": 100, "rotate": True, "heatmap": True,
        "prior": {"lambda1": 0.5, "lambda0_ladder": [0.5, 1, 3, 6, 10, 20, 30, 40], "alpha": 1.0,
                  "k_star": 10, "mc_base": 50, "mc_step": 10, "ig_shape": 0.5, "ig_rate": 0.5,
                  "intercept_lambda": None},
    },
    "gibbs": {
        "data": None, "truth": None, "out": "gibbs", "seed": 0, "k": 10, "iters": 2000,
        "burn_in": 1000, "thin": 1, "lower_triangular": True, "threshold": 0.1, "chain": True,
        "hyper": {"v0": 0.01, "a1": 1.0, "a2": 1.0},
    },
    "score": {"params": None, "data": None, "out": "score", "m": 500, "seed": 0},
    "metrics": {"estimate": None, "truth": None, "data": None, "out": "metrics", "threshold": 0.0,
                "reconstruction_draws": 0, "seed": 0},
    "heatmap": {"input": None, "out": "heatmap.svg", "title": None},
}


# ----------------------------------------------------------------- config

def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        cfg = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"config {path} does not parse: {exc}") from None
    if cfg is None:
        return {}
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a mapping")
    return cfg


def _merge(base, over, where=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out:
            raise ConfigError(f"unknown setting {where + k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = _merge(out[k], v, where + k + ".")
        else:
            out[k] = v
    return out


def _apply_set(cfg, item):
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        val = yaml.safe_load(raw)
    except yaml.YAMLError:
        val = raw
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown setting {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown setting {key!r}")
    node[parts[-1]] = val


def resolve_config(command, path=None, sets=()):
    cfg = _merge(DEFAULTS[command], _load_config(path))
    for s in sets:
        _apply_set(cfg, s)
    return cfg


def _need(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, ""):
            raise ConfigError(f"setting {k!r} is required")


def _outdir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc.strerror}") from None
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")
    return path


def _manifest(out, command, cfg, extra=None):
    m = {"command": command, "version": __version__, "config": cfg}
    if extra:
        m.update(extra)
    write_json(os.path.join(out, "manifest.json"), m)


def _load_truth(path):
    d = read_json(path)
    return ModelParams.from_dict(d["params"] if "params" in d else d)


def _write_intercepts(path, params: ModelParams, kinds, names):
    width = max(1, max(np.size(d) for d in params.intercepts))
    rows = np.full((params.n_items, width), np.nan)
    for j, d in enumerate(params.intercepts):
        v = np.atleast_1d(d)
        rows[j, : v.size] = v
    head = ["d"] if width == 1 else [f"d{l}" for l in range(width)]
    write_matrix(path, rows, header=head, row_names=list(names))


# ---------------------------------------------------------------- commands

def cmd_simulate(cfg):
    preset = cfg["preset"]
    if preset == "ibp":
        spec = ibp_preset(cfg["seed"], cfg["n_obs"] or 250, cfg["n_items"] or 350, cfg["keep_k"])
        spec.alpha = float(cfg["alpha"])
    elif preset == "overlap":
        spec = overlap_preset(cfg["seed"], cfg["n_obs"] or 200, cfg["n_items"] or 300)
        spec.k, spec.pair_fraction = int(cfg["k"]), float(cfg["pair_fraction"])
    elif preset == "explicit":
        _need(cfg, "loading")
        B = np.atleast_2d(np.asarray(cfg["loading"], float))
        spec = SynthSpec(n_obs=cfg["n_obs"] or 100, n_items=B.shape[0], design="explicit",
                         loading=B.tolist(), intercepts=cfg["intercepts"], seed=cfg["seed"])
    else:
        raise ConfigError(f"unknown preset {preset!r} (ibp, overlap, explicit)")
    spec.magnitude = float(cfg["magnitude"])
    spec.intercept_sd = float(cfg["intercept_sd"])
    if cfg["kinds"] is not None:
        spec.kinds = [ItemKind.parse(k) for k in cfg["kinds"]]
    data, truth, info = generate(spec)
    out = _outdir(cfg["out"])
    write_responses(os.path.join(out, "responses.csv"), data)
    pattern = (truth.loading != 0).astype(int)
    write_json(os.path.join(out, "truth.json"), {"params": truth.to_dict(), "pattern": pattern.tolist(),
                                                 "info": info, "spec": spec.to_dict()})
    write_matrix(os.path.join(out, "truth_loading.csv"), truth.loading,
                 header=[f"f{k + 1}" for k in range(truth.n_factors)], row_names=list(data.names))
    _manifest(out, "simulate", cfg, {"seed": cfg["seed"], "n_obs": data.n_obs, "n_items": data.n_items})
    return out


def cmd_fit(cfg, progress=None):
    _need(cfg, "data")
    data = read_responses(cfg["data"])
    pc = dict(cfg["prior"])
    pc["lambda0_ladder"] = tuple(pc["lambda0_ladder"])
    prior = PriorConfig(**pc)
    ladder = LadderConfig(prior.lambda1, prior.lambda0_ladder, float(cfg["tol"]), int(cfg["max_iter"]))
    threads = cfg["threads"] or os.cpu_count() or 1
    truth = _load_truth(cfg["truth"]) if cfg["truth"] else None
    out = _outdir(cfg["out"])
    evaluate = (lambda p: metrics_report(p, truth)) if truth is not None else None
    path = dynamic_posterior_exploration(data, prior, ladder, seed=int(cfg["seed"]), rotate=bool(cfg["rotate"]),
                                         n_jobs=int(threads), callback=progress, evaluate=evaluate)
    if not path:
        raise NumericError(path.error or "no ladder rung completed")
    res = path.final
    p = res.params
    fac = [f"f{k + 1}" for k in range(p.n_factors)]
    write_matrix(os.path.join(out, "loading.csv"), p.loading, header=fac, row_names=list(data.names))
    write_matrix(os.path.join(out, "gamma.csv"), res.gamma_expect, header=fac, row_names=list(data.names))
    _write_intercepts(os.path.join(out, "intercepts.csv"), p, data.kinds, data.names)
    save_params(os.path.join(out, "params.json"), p, data.kinds)
    cols = ["lambda0", "loading_mse", "intercept_mse", "fdr", "fnr", "time", "iterations",
            "max_change", "effective_dim", "converged", "stabilized"]
    with open(os.path.join(out, "trace.csv"), "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in path.records:
            m = r.metrics
            vals = [r.lambda0, m.get("loading_mse", ""), m.get("intercept_mse", ""), m.get("fdr", ""),
                    m.get("fnr", ""), r.wall_time, r.iterations, r.max_change, r.effective_dim,
                    int(r.converged), int(r.stabilized)]
            fh.write(",".join("" if v == "" else repr(float(v)) if isinstance(v, float) else str(v)
                              for v in vals) + "\n")
    summary = {"effective_dim": res.effective_dim, "lambda0": res.lambda0, "converged": res.converged,
               "nonzero_columns": int(np.sum(np.any(p.loading != 0, axis=0))),
               "warnings": [w for r in path for w in r.warnings][:200]}
    if path.error:
        summary["error"] = path.error
    if truth is not None:
        summary["metrics"] = metrics_report(p, truth)
        write_json(os.path.join(out, "metrics.json"), summary["metrics"])
    write_json(os.path.join(out, "summary.json"), summary)
    if cfg["heatmap"]:
        write_heatmap(os.path.join(out, "loading.svg"), p.loading, title=f"loadings, lambda0={res.lambda0:g}")
    _manifest(out, "fit", cfg, {"seed": int(cfg["seed"]), "threads": int(threads)})
    bad = validate(p, data)
    if bad:
        raise NumericError("fitted parameters fail validation: " + "; ".join(bad))
    return out


def cmd_gibbs(cfg):
    _need(cfg, "data")
    if int(cfg["iters"]) <= int(cfg["burn_in"]):
        raise ConfigError("iters must exceed burn_in")
    data = read_responses(cfg["data"])
    rng = np.random.default_rng(int(cfg["seed"]))
    hyper = GibbsHyper(**cfg["hyper"])
    res = run_gibbs(data, int(cfg["k"]), int(cfg["iters"]), int(cfg["burn_in"]), int(cfg["thin"]),
                    bool(cfg["lower_triangular"]), hyper, rng, keep_chain=bool(cfg["chain"]))
    out = _outdir(cfg["out"])
    fac = [f"f{k + 1}" for k in range(res.B_mean.shape[1])]
    write_matrix(os.path.join(out, "loading.csv"), res.B_mean, header=fac, row_names=list(data.names))
    write_matrix(os.path.join(out, "intercepts.csv"), res.D_mean[:, None], header=["d"], row_names=list(data.names))
    if cfg["chain"]:
        write_chain_csv(os.path.join(out, "chain.csv"), res, data.n_items, res.B_mean.shape[1])
    if cfg["truth"]:
        truth = _load_truth(cfg["truth"])
        est = ModelParams(res.B_mean, tuple(res.D_mean), np.full(res.B_mean.shape[1], 0.5), None)
        write_json(os.path.join(out, "metrics.json"), metrics_report(est, truth, float(cfg["threshold"])))
    _manifest(out, "gibbs", cfg, {"seed": int(cfg["seed"]), "retained": res.n_retained})
    return out


def cmd_score(cfg):
    _need(cfg, "params", "data")
    params = load_params(cfg["params"])
    data = read_responses(cfg["data"])
    if data.n_items != params.n_items:
        raise DataError(f"data has {data.n_items} items, parameters have {params.n_items}")
    m = int(cfg["m"])
    if m < 1:
        raise ConfigError("m must be at least 1")
    K = params.n_factors
    res = np.empty((data.n_obs, 2 * K))
    for i in range(data.n_obs):
        rng = np.random.default_rng(np.random.SeedSequence(int(cfg["seed"]), spawn_key=(i,)))
        sp = mixed_sun_params(params.loading, params.intercepts, params.resid_var, data.values[i], data.kinds)
        th = sample_sun(sp, m, rng)
        res[i, :K] = th.mean(axis=0)
        res[i, K:] = th.std(axis=0, ddof=1) if m > 1 else 0.0
    out = _outdir(cfg["out"])
    head = [f"mean_f{k + 1}" for k in range(K)] + [f"sd_f{k + 1}" for k in range(K)]
    write_matrix(os.path.join(out, "scores.csv"), res, header=head,
                 row_names=[str(i + 1) for i in range(data.n_obs)])
    _manifest(out, "score", cfg, {"seed": int(cfg["seed"])})
    return out


def cmd_metrics(cfg):
    _need(cfg, "estimate", "truth")
    est = load_params(cfg["estimate"])
    truth = _load_truth(cfg["truth"])
    rep = metrics_report(est, truth, float(cfg["threshold"]))
    if cfg["data"] and int(cfg["reconstruction_draws"]) > 0:
        data = read_responses(cfg["data"])
        rng = np.random.default_rng(int(cfg["seed"]))
        rep["reconstruction_mse"] = reconstruction_mse(est, data, int(cfg["reconstruction_draws"]), rng)
    out = _outdir(cfg["out"])
    write_json(os.path.join(out, "metrics.json"), rep)
    _manifest(out, "metrics", cfg)
    return out


def cmd_heatmap(cfg):
    _need(cfg, "input")
    src = cfg["input"]
    if src.endswith(".json"):
        d = read_json(src)
        B = np.asarray((d["params"] if "params" in d else d)["loading"], float)
    else:
        B = read_matrix(src, header=True, row_names=True)
    out = cfg["out"]
    d = os.path.dirname(out)
    if d:
        _outdir(d)
    try:
        write_heatmap(out, B, title=cfg["title"])
    except OSError as exc:
        raise ConfigError(f"cannot write {out}: {exc.strerror}") from None
    return out


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "gibbs": cmd_gibbs, "score": cmd_score,
            "metrics": cmd_metrics, "heatmap": cmd_heatmap}


def build_parser():
    ap = argparse.ArgumentParser(prog="pxlmirt", description="Sparse Bayesian MIRT estimation")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", "-c", help="JSON or YAML settings file")
        sp.add_argument("--set", "-s", action="append", default=[], metavar="KEY=VALUE",
                        help="override a setting (dotted keys for nested ones)")
        sp.add_argument("--quiet", "-q", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.command, args.config, args.set)
        if args.command == "fit" and not args.quiet:
            t0 = time.time()

            def progress(d):
                print(f"rung {d['rung'] + 1} lambda0={d['lambda0']:g} iter {d['iteration']} "
                      f"change {d['max_change']:.4f} ({time.time() - t0:.0f}s)", file=sys.stderr)
            out = cmd_fit(cfg, progress)
        else:
            out = COMMANDS[args.command](cfg)
    except PxlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (TypeError, KeyError) as exc:
        print(f"error: bad setting ({exc})", file=sys.stderr)
        return 2
    if not args.quiet:
        print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
