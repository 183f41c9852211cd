"""Sweep harness, coefficient-error metric and absolute-stability checks."""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import (CoefficientMatrix, Dataset, DiscoveredModel, DivergedDuringUnroll, InvalidConfig,
                   LibraryMismatch, SGDConfig, UnsupportedDimension)
from .dictionary import monomial_jacobian
from .discover import default_config, discover
from .simulate import add_noise, simulate, stride_for, subsample, system_spec


# --------------------------------------------------------------------------- metric

def l1_error(predicted, ground_truth) -> float:
    """Sum of absolute coefficient differences over the whole term x variable grid."""
    p = predicted.values if isinstance(predicted, CoefficientMatrix) else np.asarray(predicted, float)
    g = ground_truth.values if isinstance(ground_truth, CoefficientMatrix) else np.asarray(ground_truth, float)
    if p.shape != g.shape:
        raise LibraryMismatch(f"coefficient shapes differ: {p.shape} vs {g.shape}")
    return float(np.sum(np.abs(p - g)))


def support_stats(predicted: CoefficientMatrix, ground_truth: CoefficientMatrix):
    """(exact support match, false-positive count, missed count)."""
    pa = np.asarray(predicted.active) & (predicted.values != 0)
    ga = ground_truth.values != 0
    extra = int(np.sum(pa & ~ga))
    missing = int(np.sum(ga & ~pa))
    return extra == 0 and missing == 0, extra, missing


# --------------------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class SweepCell:
    system: str
    method: str
    solver: str
    h: float
    K: int
    sigma: float
    seed: int
    status: str                      # "Ok" or "Diverged"
    l1_error: float                  # NaN when diverged
    support_correct: bool
    extra_terms: int
    missing_terms: int
    train_loss: float
    runtime_seconds: float | None
    equations: tuple = field(default=(), compare=False)


CSV_COLUMNS = ("system", "method", "solver", "h", "K", "sigma", "seed", "status", "l1_error",
               "support_correct", "extra_terms", "missing_terms", "train_loss", "runtime_seconds")


def cell_seed(master_seed: int, index: int) -> int:
    """Per-cell seed: first word of SeedSequence([master_seed, index])."""
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1)[0])


def noise_seed(master_seed: int, sigma_index: int) -> int:
    # separate stream from cell seeds via a third entropy word
    return int(np.random.SeedSequence([int(master_seed), int(sigma_index), 1]).generate_state(1)[0])


def _run_cell(job):
    (system, dataset, library, truth, method, solver, h, K, sigma, seed, overrides, timing) = job
    from .discover import pretty_print
    cfg = default_config(system, method=method, solver=solver, K=K, seed=seed, **overrides)
    if solver == "sgd" and cfg.sgd is None:
        cfg = cfg.with_(sgd=SGDConfig())
    t0 = time.perf_counter()
    try:
        model = discover(dataset, library, cfg)
    except DivergedDuringUnroll:
        rt = time.perf_counter() - t0 if timing else None
        return SweepCell(system, method, solver, h, K, sigma, seed, "Diverged", math.nan, False,
                         0, 0, math.nan, rt)
    rt = time.perf_counter() - t0 if timing else None
    ok, extra, missing = support_stats(model.coefficients, truth)
    return SweepCell(system, method, solver, h, K, sigma, seed, "Ok",
                     l1_error(model.coefficients, truth), ok, extra, missing,
                     final_training_error(model), rt, tuple(pretty_print(model)))


def final_training_error(model: DiscoveredModel) -> float:
    """Mean squared prediction residual of the last recorded iteration."""
    return float(model.trace[-1].loss) if model.trace else math.nan


def run_sweep(system, h_list, K_list, sigma_list=(0.0,), methods=("euler",), config_overrides=None,
              seed=0, solver="closed-form", jobs=1, timing=False, spec_overrides=None,
              fine_dataset: Dataset | None = None):
    """Run one discovery per (sigma, method, h, K) cell.

    One fine simulation is shared by every cell; noise is added once per sigma
    and the noisy set is subsampled per h. Cells that diverge are kept with
    status "Diverged". ``fine_dataset`` skips the simulation when supplied.
    """
    if not (len(h_list) and len(K_list) and len(sigma_list) and len(methods)):
        raise InvalidConfig("sweep lists must be non-empty")
    overrides = dict(config_overrides or {})
    for key in ("method", "solver", "K", "seed"):
        if key in overrides:
            raise InvalidConfig(f"{key!r} is set per cell and cannot be overridden")
    spec = system_spec(system, **(spec_overrides or {}))
    fine = fine_dataset if fine_dataset is not None else simulate(spec, seed)
    strides = [stride_for(fine, h) for h in h_list]

    jobs_list = []
    index = 0
    for si, sigma in enumerate(sigma_list):
        noisy = add_noise(fine, float(sigma), noise_seed(seed, si))
        for method in methods:
            for h, stride in zip(h_list, strides):
                ds = subsample(noisy, stride)
                for K in K_list:
                    jobs_list.append((system, ds, spec.library, spec.ground_truth, method, solver,
                                      float(h), int(K), float(sigma), cell_seed(seed, index),
                                      overrides, timing))
                    index += 1
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_cell, jobs_list))
    return [_run_cell(j) for j in jobs_list]


def best_by_training_error(cells):
    """For each (method, h, sigma) keep the Ok cell with the lowest final training error."""
    best = {}
    for c in cells:
        if c.status != "Ok":
            continue
        key = (c.method, c.h, c.sigma)
        if key not in best or c.train_loss < best[key].train_loss:
            best[key] = c
    return [best[k] for k in sorted(best)]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def sweep_csv(cells) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for c in cells:
        w.writerow([_fmt(getattr(c, k)) for k in CSV_COLUMNS])
    return buf.getvalue()


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, tuple):
        return list(v)
    return v


def sweep_bundle(cells, effective_config=None) -> dict:
    return {"config": effective_config or {},
            "cells": [{k: _json_safe(v) for k, v in asdict(c).items()} for c in cells]}


# --------------------------------------------------------------------------- stability

def stability_polynomial(method: str, z):
    """Amplification factor R(z) of one explicit step applied to y' = lambda y."""
    if method == "euler":
        return 1 + z
    if method == "rk4":
        return 1 + z + z ** 2 / 2 + z ** 3 / 6 + z ** 4 / 24
    raise InvalidConfig(f"unknown method {method!r}")


def jacobian(system: str, at_state, alpha=None) -> np.ndarray:
    """Analytic Jacobian of the monomial right-hand side at one state, shape [d, d]."""
    spec = system_spec(system)
    lib = spec.library
    if not lib.monomial_only:
        raise UnsupportedDimension(f"{system} has spatial-derivative terms; only ODE systems are supported")
    a = spec.ground_truth.values if alpha is None else np.asarray(
        alpha.values if isinstance(alpha, CoefficientMatrix) else alpha, float)
    u = np.asarray(at_state, dtype=np.float64).reshape(1, lib.n_vars)
    dtheta = monomial_jacobian(lib, u)[0]          # [terms, d]
    return a.T @ dtheta                            # J[i, v] = sum_t a[t, i] dtheta_t/du_v


def eigenvalues_2x2(J):
    half_tr = 0.5 * (J[0, 0] + J[1, 1])
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    root = complex(half_tr * half_tr - det) ** 0.5
    return [complex(half_tr) + root, complex(half_tr) - root]


def jacobian_eigenvalues(system: str, at_state, alpha=None):
    J = jacobian(system, at_state, alpha)
    d = J.shape[0]
    if d > 2:
        raise UnsupportedDimension("eigenvalues are only implemented for d <= 2")
    if d == 1:
        return [complex(J[0, 0])]
    return sorted(eigenvalues_2x2(J), key=lambda z: (z.real, -z.imag))


@dataclass(frozen=True)
class StabilityRow:
    method: str
    h: float
    K: int
    j: int
    z: complex
    abs_r: float
    stable: bool


@dataclass(frozen=True)
class StabilityReport:
    eigenvalues: tuple
    rows: tuple

    def is_stable(self, method, h, K) -> bool:
        hits = [r.stable for r in self.rows if r.method == method and r.h == h and r.K == K]
        if not hits:
            raise KeyError((method, h, K))
        return all(hits)


def stability_report(system, at_state, methods, h_list, K_list, alpha=None) -> StabilityReport:
    lams = jacobian_eigenvalues(system, at_state, alpha)
    rows = []
    for method in methods:
        for h in h_list:
            for K in K_list:
                for j, lam in enumerate(lams):
                    z = (float(h) / int(K)) * lam
                    r = abs(stability_polynomial(method, z))
                    rows.append(StabilityRow(method, float(h), int(K), j, z, float(r), bool(r <= 1.0)))
    return StabilityReport(tuple(lams), tuple(rows))


STABILITY_COLUMNS = ("method", "h", "K", "j", "re_z", "im_z", "abs_R", "stable")


def stability_csv(report: StabilityReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STABILITY_COLUMNS)
    for r in report.rows:
        w.writerow([r.method, _fmt(r.h), r.K, r.j, _fmt(r.z.real), _fmt(r.z.imag), _fmt(r.abs_r),
                    _fmt(r.stable)])
    return buf.getvalue()
