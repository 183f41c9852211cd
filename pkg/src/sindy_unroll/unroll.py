"""K-step unrolled Euler and RK4 predictions with their effective dictionaries.

Both integrators advance every training pair from U_prev over its own step h_j
using K sub-steps of size h_j/K and accumulate the averaged dictionary
``eff`` so that ``prediction == U_prev + h_j * eff @ alpha`` row by row.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .core import CoefficientMatrix, Library, SpatialGrid, monomial
from .dictionary import evaluate


@dataclass
class UnrollResult:
    prediction: np.ndarray           # [J, M, d]
    effective_dictionary: np.ndarray  # [J*M, |Theta|]
    diverged: dict | None = None


def _alpha_values(alpha):
    return alpha.values if isinstance(alpha, CoefficientMatrix) else np.asarray(alpha, dtype=np.float64)


def _first_bad(a):
    return tuple(int(i) for i in np.argwhere(~np.isfinite(a))[0])


def _prepare(U_prev, times, steps):
    U = np.asarray(U_prev, dtype=np.float64)
    J, M, _ = U.shape
    steps = np.broadcast_to(np.asarray(steps, dtype=np.float64), (J,))
    times = np.zeros(J) if times is None else np.broadcast_to(np.asarray(times, dtype=np.float64), (J,))
    h_state = steps[:, None, None]          # broadcast over [J, M, d]
    return U, J, M, steps, times, h_state


def _quiet(fn):
    # divergence is detected explicitly, so overflow warnings are just noise
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with np.errstate(over="ignore", invalid="ignore"):
            return fn(*args, **kwargs)
    return wrapper


def _finish(U, h, eff, a, K):
    # one rounding between the state and h * eff @ alpha, so the factorization holds to machine precision
    J, M, d = U.shape
    pred = U + h * (eff @ a).reshape(J, M, d)
    if not np.all(np.isfinite(pred)):
        return UnrollResult(pred, eff, {"step": K, "stage": 0, "location": _first_bad(pred)})
    return UnrollResult(pred, eff)


@_quiet
def unrolled_euler(U_prev, times, steps, library: Library, alpha, K: int, columns=None) -> UnrollResult:
    a = _alpha_values(alpha)
    U, J, M, steps, times, h = _prepare(U_prev, times, steps)
    d = U.shape[2]
    eff = np.zeros((J * M, len(library)))
    inv_k = 1.0 / K
    u, increment = U, np.zeros_like(U)
    for k in range(K):
        if not np.all(np.isfinite(u)):
            return UnrollResult(u, eff, {"step": k, "stage": 0, "location": _first_bad(u)})
        theta = evaluate(library, u, times + k * steps / K, columns, check=False)
        if not np.all(np.isfinite(theta)):
            return UnrollResult(u, eff, {"step": k, "stage": 0, "location": _first_bad(theta)})
        increment += (h / K) * (theta @ a).reshape(J, M, d)
        u = U + increment
        eff += inv_k * theta
    return _finish(U, h, eff, a, K)


@_quiet
def unrolled_rk4(U_prev, times, steps, library: Library, alpha, K: int, columns=None) -> UnrollResult:
    a = _alpha_values(alpha)
    U, J, M, steps, times, h = _prepare(U_prev, times, steps)
    d = U.shape[2]
    eff = np.zeros((J * M, len(library)))
    inv_k = 1.0 / K
    sub = h / K
    u, increment = U, np.zeros_like(U)

    def rhs(theta):
        return (theta @ a).reshape(J, M, d)

    for k in range(K):
        t0 = times + k * steps / K
        tm = times + (k + 0.5) * steps / K
        t1 = times + (k + 1) * steps / K
        stage_state = u
        thetas = []
        for s, (t, frac) in enumerate(((t0, 0.5), (tm, 0.5), (tm, 1.0), (t1, None))):
            if not np.all(np.isfinite(stage_state)):
                return UnrollResult(u, eff, {"step": k, "stage": s, "location": _first_bad(stage_state)})
            th = evaluate(library, stage_state, t, columns, check=False)
            if not np.all(np.isfinite(th)):
                return UnrollResult(u, eff, {"step": k, "stage": s, "location": _first_bad(th)})
            thetas.append(th)
            if frac is not None:
                stage_state = u + (frac * sub) * rhs(th)
        theta = (thetas[0] + 2.0 * thetas[1] + 2.0 * thetas[2] + thetas[3]) / 6.0
        increment += sub * rhs(theta)
        u = U + increment
        eff += inv_k * theta
    return _finish(U, h, eff, a, K)


UNROLLERS = {"euler": unrolled_euler, "rk4": unrolled_rk4}


def unroll(method, U_prev, times, steps, library, alpha, K, columns=None) -> UnrollResult:
    return UNROLLERS[method](U_prev, times, steps, library, alpha, K, columns)


def truncation_probe(method: str, h: float, K_list, u0: float = 1.0):
    """One-step error of the K-unrolled scheme on u' = u against exp(h)."""
    lib = Library((monomial(1),), 1, SpatialGrid.point())
    alpha = np.array([[1.0]])
    exact = u0 * np.exp(h)
    out = []
    for K in K_list:
        res = unroll(method, np.array([[[u0]]]), [0.0], [h], lib, alpha, int(K))
        out.append((int(K), abs(float(res.prediction[0, 0, 0]) - float(exact))))
    return out


def fit_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])
