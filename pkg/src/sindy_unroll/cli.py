"""Command-line entry point.

Each command resolves its settings from three layers, later ones winning:
built-in defaults, a JSON file passed with ``--config``, then explicit flags.
The fully resolved settings are written back as JSON (``--echo-config``, or
``<out>.config.json`` by default), and feeding that file to ``--config``
reproduces the run byte for byte.

Exit codes: 0 ok, 2 bad config / input, 3 simulation diverged, 4 discovery diverged.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import analyze, io
from .core import (DivergedDuringUnroll, DiscoveryConfig, InvalidConfig, SGDConfig, SimulationDiverged,
                   SindyError, UnsupportedLibraryForSGD)
from .dictionary import SYSTEMS, standard_library
from .discover import DEFAULTS, discover, discover_plain_sindy, pretty_print
from .simulate import add_noise, simulate, subsample, system_spec
from .unroll import fit_slope, truncation_probe

EXIT_OK, EXIT_CONFIG, EXIT_SIMULATION, EXIT_DISCOVERY = 0, 2, 3, 4

TABLE_H = [2e-4, 2e-3, 2e-2, 4e-2, 0.1, 0.4, 0.5, 0.6]

# built-in defaults per command; None means "resolved later" (often per system)
COMMAND_DEFAULTS = {
    "simulate": {"system": None, "t_end": None, "dt": None, "n_points": None, "initial_state": None,
                 "sigma": 0.0, "seed": 0, "out": None},
    "discover": {"data": None, "system": None, "method": "euler", "solver": "closed-form", "K": 1,
                 "lam": None, "alpha_th": None, "normalize": None, "max_iters": 50,
                 "convergence_window": 5, "convergence_tol": 1e-6, "sgd": None, "h_stride": 1,
                 "seed": 0, "fallback_sgd": False, "plain_sindy": False, "out": None},
    "sweep": {"system": None, "h": TABLE_H, "K": [1, 50], "sigma": [0.0], "methods": ["euler"],
              "solver": "closed-form", "overrides": {}, "t_end": None, "dt": None, "seed": 0,
              "jobs": 1, "timing": False, "out": None, "out_json": None},
    "stability": {"system": None, "at": None, "methods": ["euler", "rk4"], "h": TABLE_H, "K": [1, 50],
                  "out": None},
    "probe-truncation": {"method": "euler", "h": None, "K": None, "out": None},
}

PROBE_DEFAULTS = {"euler": (0.5, [1, 2, 4, 8, 16, 32, 64]), "rk4": (0.4, [1, 2, 4, 8, 16])}


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------- parsing

def _floats(s):
    return [float(v) for v in s]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sindy-unroll",
                                description="Sparse equation discovery with unrolled integrators.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with settings (flags override it)")
        sp.add_argument("--echo-config", help="where to write the resolved settings")
        sp.add_argument("--out", help="primary output file")

    s = sub.add_parser("simulate", help="generate a reference dataset")
    common(s)
    s.add_argument("--system", choices=SYSTEMS)
    s.add_argument("--t-end", type=float)
    s.add_argument("--dt", type=float, help="sampling interval")
    s.add_argument("--n-points", type=int)
    s.add_argument("--initial-state", type=float, nargs=2)
    s.add_argument("--sigma", type=float, help="relative Gaussian noise level")
    s.add_argument("--seed", type=int)

    d = sub.add_parser("discover", help="fit a sparse model to a dataset")
    common(d)
    d.add_argument("--data", help="dataset file written by `simulate`")
    d.add_argument("--system", choices=SYSTEMS)
    d.add_argument("--method", choices=("euler", "rk4"))
    d.add_argument("--solver", choices=("closed-form", "sgd"))
    d.add_argument("--K", type=int)
    d.add_argument("--lam", type=float)
    d.add_argument("--alpha-th", type=float)
    d.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=None)
    d.add_argument("--max-iters", type=int)
    d.add_argument("--h-stride", type=int, help="keep every n-th snapshot")
    d.add_argument("--seed", type=int)
    d.add_argument("--fallback-sgd", action="store_true", default=None,
                   help="retry with the gradient solver when the unroll diverges")
    d.add_argument("--plain-sindy", action="store_true", default=None,
                   help="classic forward-difference SINDy (no unrolling)")

    w = sub.add_parser("sweep", help="grid of discoveries over h, K, sigma")
    common(w)
    w.add_argument("--system", choices=SYSTEMS)
    w.add_argument("--h", type=float, nargs="*")
    w.add_argument("--K", type=int, nargs="*")
    w.add_argument("--sigma", type=float, nargs="*")
    w.add_argument("--methods", nargs="*", choices=("euler", "rk4"))
    w.add_argument("--solver", choices=("closed-form", "sgd"))
    w.add_argument("--t-end", type=float)
    w.add_argument("--dt", type=float)
    w.add_argument("--seed", type=int)
    w.add_argument("--jobs", type=int)
    w.add_argument("--timing", action=argparse.BooleanOptionalAction, default=None,
                   help="record wall-clock time per cell (makes output non-reproducible)")
    w.add_argument("--out-json", help="JSON results bundle")

    t = sub.add_parser("stability", help="absolute-stability classification at one state")
    common(t)
    t.add_argument("--system", choices=SYSTEMS)
    t.add_argument("--at", type=float, nargs="*", help="state (defaults to the initial condition)")
    t.add_argument("--methods", "--method", dest="methods", nargs="*", choices=("euler", "rk4"))
    t.add_argument("--h", type=float, nargs="*")
    t.add_argument("--K", type=int, nargs="*")

    r = sub.add_parser("probe-truncation", help="one-step error of the unrolled scheme on u' = u")
    common(r)
    r.add_argument("--method", choices=("euler", "rk4"))
    r.add_argument("--h", type=float)
    r.add_argument("--K", type=int, nargs="*")
    return p


def resolve(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(COMMAND_DEFAULTS[command])
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read config file: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _echo(cfg, args, default_path):
    path = args.echo_config or (f"{default_path}.config.json" if default_path else None)
    if path:
        Path(path).write_text(io.dumps_json(cfg))


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, "", []):
            raise ConfigError(f"missing required setting {k!r}")


# --------------------------------------------------------------------------- commands

def cmd_simulate(cfg, args):
    _require(cfg, "system", "out")
    if cfg["dt"] is not None and not cfg["dt"] > 0:
        raise ConfigError("dt must be > 0")
    spec = system_spec(cfg["system"], cfg["t_end"], cfg["dt"], cfg["n_points"], cfg["initial_state"])
    cfg.update(t_end=spec.t_end, dt=spec.fine_dt, n_points=spec.grid.n_points if not spec.grid.is_point
               else None, initial_state=list(spec.ic_state) if spec.ic_state else None)
    ds = simulate(spec, cfg["seed"])
    ds = add_noise(ds, float(cfg["sigma"]), cfg["seed"])
    io.save_dataset(ds, cfg["out"])
    fp = analyze_fingerprint(ds)
    _echo(cfg, args, cfg["out"])
    print(f"wrote {cfg['out']}: {ds.states.shape[0]} snapshots x {ds.grid.n_points} points x "
          f"{ds.n_vars} variables")
    print(f"fingerprint {fp}")
    return EXIT_OK


def analyze_fingerprint(ds):
    from .core import fingerprint
    return fingerprint(ds)


def _discovery_config(cfg, system):
    lam, th, norm = DEFAULTS[system] if system else (1e-2, 0.05, True)
    cfg["lam"] = lam if cfg["lam"] is None else cfg["lam"]
    cfg["alpha_th"] = th if cfg["alpha_th"] is None else cfg["alpha_th"]
    cfg["normalize"] = norm if cfg["normalize"] is None else cfg["normalize"]
    sgd = cfg["sgd"]
    if cfg["solver"] == "sgd" or cfg["fallback_sgd"]:
        sgd = SGDConfig(**(sgd or {}))
        cfg["sgd"] = dataclasses.asdict(sgd)
    elif sgd is not None:
        sgd = SGDConfig(**sgd)
    return DiscoveryConfig(method=cfg["method"], solver=cfg["solver"], K=cfg["K"], lam=cfg["lam"],
                           alpha_th=cfg["alpha_th"], max_iters=cfg["max_iters"],
                           convergence_window=cfg["convergence_window"],
                           convergence_tol=cfg["convergence_tol"], normalize=bool(cfg["normalize"]),
                           sgd=sgd, seed=cfg["seed"])


def cmd_discover(cfg, args):
    _require(cfg, "data")
    try:
        ds = io.load_dataset(cfg["data"])
    except OSError as e:
        raise ConfigError(f"cannot read dataset: {e}") from e
    system = cfg["system"] or ds.system
    if system not in SYSTEMS:
        raise ConfigError("name the system with --system (the dataset does not record one)")
    cfg["system"] = system
    if int(cfg["h_stride"]) < 1:
        raise ConfigError("h_stride must be >= 1")
    ds = subsample(ds, int(cfg["h_stride"]))
    library = standard_library(system, ds.grid)
    config = _discovery_config(cfg, system)
    try:
        if cfg["plain_sindy"]:
            model = discover_plain_sindy(ds, library, config)
        else:
            model = discover(ds, library, config)
    except DivergedDuringUnroll as e:
        print(f"discovery diverged: {e}", file=sys.stderr)
        if not cfg["fallback_sgd"] or config.solver == "sgd":
            return EXIT_DISCOVERY
        print("retrying with the gradient solver", file=sys.stderr)
        try:
            model = discover(ds, library, config.with_(solver="sgd"))
        except (DivergedDuringUnroll, UnsupportedLibraryForSGD) as e2:
            print(f"fallback failed: {e2}", file=sys.stderr)
            return EXIT_DISCOVERY
    if cfg["out"]:
        io.save_model(model, cfg["out"])
    _echo(cfg, args, cfg["out"])
    names = ("x", "y") if library.grid.is_point else None
    for line in pretty_print(model, names):
        print(line)
    truth = system_spec(system).ground_truth
    if truth.shape == model.coefficients.shape:
        print(f"l1 error vs ground truth: {analyze.l1_error(model.coefficients, truth):.6g}")
    return EXIT_OK


def cmd_sweep(cfg, args):
    _require(cfg, "system", "out")
    for key in ("h", "K", "sigma", "methods"):
        if not cfg[key]:
            raise ConfigError(f"sweep list {key!r} is empty")
    if cfg["jobs"] < 1:
        raise ConfigError("jobs must be >= 1")
    spec_over = {k: cfg[k] for k in ("t_end",) if cfg[k] is not None}
    if cfg["dt"] is not None:
        spec_over["fine_dt"] = cfg["dt"]
    cells = analyze.run_sweep(cfg["system"], _floats(cfg["h"]), [int(k) for k in cfg["K"]],
                              _floats(cfg["sigma"]), tuple(cfg["methods"]), cfg["overrides"],
                              cfg["seed"], cfg["solver"], cfg["jobs"], bool(cfg["timing"]), spec_over)
    Path(cfg["out"]).write_text(analyze.sweep_csv(cells))
    if cfg["out_json"]:
        Path(cfg["out_json"]).write_text(io.dumps_json(analyze.sweep_bundle(cells, cfg)))
    _echo(cfg, args, cfg["out"])
    n_div = sum(c.status != "Ok" for c in cells)
    print(f"{len(cells)} cells ({n_div} diverged) -> {cfg['out']}")
    return EXIT_OK


def cmd_stability(cfg, args):
    _require(cfg, "system", "out")
    for key in ("h", "K", "methods"):
        if not cfg[key]:
            raise ConfigError(f"list {key!r} is empty")
    spec = system_spec(cfg["system"])
    if cfg["at"] is None:
        cfg["at"] = list(spec.ic_state) if spec.ic_state else None
    _require(cfg, "at")
    rep = analyze.stability_report(cfg["system"], cfg["at"], cfg["methods"], _floats(cfg["h"]),
                                   [int(k) for k in cfg["K"]])
    Path(cfg["out"]).write_text(analyze.stability_csv(rep))
    _echo(cfg, args, cfg["out"])
    print("eigenvalues: " + ", ".join(f"{z.real:.4f}{z.imag:+.4f}i" for z in rep.eigenvalues))
    for m in cfg["methods"]:
        for h in _floats(cfg["h"]):
            for K in cfg["K"]:
                flag = "stable" if rep.is_stable(m, h, int(K)) else "UNSTABLE"
                print(f"{m:5s} h={h:<8g} K={int(K):<4d} {flag}")
    return EXIT_OK


def cmd_probe_truncation(cfg, args):
    _require(cfg, "out")
    h_def, k_def = PROBE_DEFAULTS[cfg["method"]]
    cfg["h"] = h_def if cfg["h"] is None else cfg["h"]
    cfg["K"] = k_def if cfg["K"] is None else cfg["K"]
    if len(cfg["K"]) < 2:
        raise ConfigError("need at least two K values to fit a slope")
    rows = truncation_probe(cfg["method"], float(cfg["h"]), [int(k) for k in cfg["K"]])
    Ks = np.array([k for k, _ in rows], float)
    errs = np.array([e for _, e in rows])
    if np.any(errs <= 0):
        raise ConfigError("zero error in the probe; cannot fit a log-log slope")
    if cfg["method"] == "euler":
        slope = fit_slope(Ks, errs)
    else:
        slope = fit_slope(float(cfg["h"]) / Ks, errs)
    lines = ["method,h,K,error,slope"]
    lines += [f"{cfg['method']},{cfg['h']!r},{k},{e!r},{slope!r}" for k, e in rows]
    Path(cfg["out"]).write_text("\n".join(lines) + "\n")
    _echo(cfg, args, cfg["out"])
    axis = "log K" if cfg["method"] == "euler" else "log(h/K)"
    print(f"fitted slope of log error vs {axis}: {slope:.4f}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "discover": cmd_discover, "sweep": cmd_sweep,
            "stability": cmd_stability, "probe-truncation": cmd_probe_truncation}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](cfg, args)
    except SimulationDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SIMULATION
    except DivergedDuringUnroll as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DISCOVERY
    except (ConfigError, SindyError, ValueError, TypeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
