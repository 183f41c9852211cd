"""Candidate-term libraries and their evaluation on state snapshots."""
from __future__ import annotations

from itertools import combinations_with_replacement

import numpy as np

from .core import (GridMismatch, Library, NonFiniteState, SpatialGrid, UnsupportedOrder,
                   constant, derivative, monomial, product)

SYSTEMS = ("cubic-oscillator", "linear-oscillator", "fitzhugh-nagumo",
           "advection", "reaction-diffusion", "kuramoto-sivashinsky")

_STENCILS = {
    1: ((-1, -0.5), (1, 0.5)),
    2: ((-1, 1.0), (0, -2.0), (1, 1.0)),
    3: ((-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)),
    4: ((-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)),
}


def stencil_weights(order: int, spacing: float):
    """Central periodic finite-difference weights as (offset, weight) pairs."""
    if order not in _STENCILS:
        raise UnsupportedOrder(f"no stencil for derivative order {order}")
    scale = spacing ** order
    return [(off, w / scale) for off, w in _STENCILS[order]]


def apply_stencil(field, axis, order, spacing):
    # f(x + off*dx) sits at index i + off, i.e. a roll by -off
    out = np.zeros_like(field)
    for off, w in stencil_weights(order, spacing):
        out += w * (field if off == 0 else np.roll(field, -off, axis=axis))
    return out


def monomials_up_to(n_vars: int, degree: int):
    """Exponent tuples in graded order, highest power of the first variable first."""
    out = []
    for d in range(degree + 1):
        combos = combinations_with_replacement(range(n_vars), d)
        exps = sorted({tuple(c.count(v) for v in range(n_vars)) for c in combos}, reverse=True)
        out.extend(exps)
    return out


def polynomial_library(n_vars, degree, grid=None, variables=()):
    grid = grid or SpatialGrid.point()
    return Library(tuple(monomial(*e) for e in monomials_up_to(n_vars, degree)), n_vars, grid, variables)


def standard_library(system: str, grid: SpatialGrid | None = None) -> Library:
    if system not in SYSTEMS:
        raise ValueError(f"unknown system {system!r}; expected one of {SYSTEMS}")
    if system in ("cubic-oscillator", "linear-oscillator", "fitzhugh-nagumo"):
        grid = grid or SpatialGrid.point()
        if not grid.is_point:
            raise GridMismatch(f"{system} is an ODE and needs the single-point grid")
        degree = 4 if system == "cubic-oscillator" else 3
        return polynomial_library(2, degree, grid)
    if grid is None:
        raise GridMismatch(f"{system} needs a spatial grid")
    if system == "advection":
        _need_dims(grid, 1, system)
        terms = (constant(), monomial(1), monomial(2), monomial(3),
                 derivative(0, 1), derivative(0, 2), derivative(0, 3))
        return Library(terms, 1, grid)
    if system == "kuramoto-sivashinsky":
        _need_dims(grid, 1, system)
        terms = (constant(), derivative(0, 1), derivative(0, 2), derivative(0, 3),
                 derivative(0, 4), product((1,), 0, 1))
        return Library(terms, 1, grid)
    _need_dims(grid, 2, system)
    terms = [constant(), monomial(1, 0), monomial(0, 1), monomial(2, 0), monomial(0, 2),
             monomial(3, 0), monomial(0, 3)]
    for orders in ((1, 0), (0, 1), (2, 0), (0, 2), (1, 1)):
        terms += [derivative(0, *orders), derivative(1, *orders)]
    terms += [monomial(1, 1), monomial(2, 1), monomial(1, 2)]
    return Library(tuple(terms), 2, grid)


def _need_dims(grid, ndim, system):
    if grid.ndim != ndim or grid.is_point:
        raise GridMismatch(f"{system} needs a {ndim}D spatial grid, got dims={grid.dims}")


def _check_finite(state):
    if not np.all(np.isfinite(state)):
        raise NonFiniteState(np.argwhere(~np.isfinite(state))[0])


def evaluate(library: Library, state, times=None, columns=None, check=True):
    """Evaluate the library on snapshots.

    state has shape [rows_t, M, n_vars]; the result is [rows_t * M, len(library)]
    with row index t * M + m. ``times`` is accepted for non-autonomous terms but
    unused by the built-in term kinds. When ``columns`` is given only those
    columns are computed; the others are left at zero.
    """
    state = np.asarray(state, dtype=np.float64)
    if state.ndim != 3 or state.shape[2] != library.n_vars:
        raise GridMismatch(f"state shape {state.shape} incompatible with a {library.n_vars}-variable library")
    if state.shape[1] != library.grid.n_points:
        raise GridMismatch(f"state has {state.shape[1]} points, library grid has {library.grid.n_points}")
    if check:
        _check_finite(state)
    rows_t, M, _ = state.shape
    out = np.zeros((rows_t * M, len(library)))
    flat = state.reshape(rows_t * M, library.n_vars)
    powers = {}
    derivs = {}

    def power(v, e):
        if (v, e) not in powers:
            powers[v, e] = flat[:, v] if e == 1 else flat[:, v] ** e
        return powers[v, e]

    def mono(exps):
        col = None
        for v, e in enumerate(exps):
            if e:
                col = power(v, e) if col is None else col * power(v, e)
        return col

    def deriv(v, orders):
        if (v, orders) not in derivs:
            f = state[:, :, v].reshape((rows_t,) + library.grid.dims)
            for axis, o in enumerate(orders):
                if o:
                    f = apply_stencil(f, axis + 1, o, library.grid.spacings[axis])
            derivs[v, orders] = f.reshape(rows_t * M)
        return derivs[v, orders]

    idx = range(len(library)) if columns is None else columns
    for i in idx:
        t = library.terms[i]
        if t.kind == "constant":
            out[:, i] = 1.0
        elif t.kind == "monomial":
            out[:, i] = mono(t.exponents)
        elif t.kind == "derivative":
            out[:, i] = deriv(t.var, t.orders)
        else:
            m = mono(t.exponents)
            d = deriv(t.var, t.orders)
            out[:, i] = d if m is None else m * d
    return out


def monomial_jacobian(library: Library, flat_state):
    """d theta_i / d u_v for constant/monomial libraries: shape [rows, terms, n_vars]."""
    flat_state = np.asarray(flat_state, dtype=np.float64)
    rows, n = flat_state.shape
    out = np.zeros((rows, len(library), n))
    for i, t in enumerate(library.terms):
        if t.kind == "constant":
            continue
        if t.kind != "monomial":
            raise ValueError("monomial_jacobian needs a monomial-only library")
        for v, e in enumerate(t.exponents):
            if e == 0:
                continue
            col = e * flat_state[:, v] ** (e - 1)
            for w, ew in enumerate(t.exponents):
                if w != v and ew:
                    col = col * flat_state[:, w] ** ew
            out[:, i, v] = col
    return out
