import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sindy_unroll.core import (GridMismatch, Library, NonFiniteState, SpatialGrid, UnsupportedOrder,
                               derivative, monomial)
from sindy_unroll.dictionary import (SYSTEMS, apply_stencil, evaluate, monomial_jacobian,
                                     standard_library, stencil_weights)

GRIDS = {
    "cubic-oscillator": SpatialGrid.point(),
    "linear-oscillator": SpatialGrid.point(),
    "fitzhugh-nagumo": SpatialGrid.point(),
    "advection": SpatialGrid((16,), (1 / 16,)),
    "kuramoto-sivashinsky": SpatialGrid((16,), (0.64,)),
    "reaction-diffusion": SpatialGrid((8, 6), (0.5, 0.4)),
}

GOLDEN_LABELS = {
    "cubic-oscillator": ["1", "u", "v", "u^2", "u v", "v^2", "u^3", "u^2 v", "u v^2", "v^3",
                         "u^4", "u^3 v", "u^2 v^2", "u v^3", "v^4"],
    "linear-oscillator": ["1", "u", "v", "u^2", "u v", "v^2", "u^3", "u^2 v", "u v^2", "v^3"],
    "fitzhugh-nagumo": ["1", "u", "v", "u^2", "u v", "v^2", "u^3", "u^2 v", "u v^2", "v^3"],
    "advection": ["1", "u", "u^2", "u^3", "u_x", "u_xx", "u_xxx"],
    "kuramoto-sivashinsky": ["1", "u_x", "u_xx", "u_xxx", "u_xxxx", "u u_x"],
    "reaction-diffusion": ["1", "u", "v", "u^2", "v^2", "u^3", "v^3", "u_x", "v_x", "u_y", "v_y",
                           "u_xx", "v_xx", "u_yy", "v_yy", "u_xy", "v_xy", "u v", "u^2 v", "u v^2"],
}


@pytest.mark.parametrize("system", SYSTEMS)
def test_golden_labels(system):
    assert standard_library(system, GRIDS[system]).labels == GOLDEN_LABELS[system]


def test_library_sizes():
    assert len(standard_library("cubic-oscillator")) == 15
    assert "u^2 v" in standard_library("cubic-oscillator").labels
    assert len(standard_library("kuramoto-sivashinsky", GRIDS["kuramoto-sivashinsky"])) == 6


def test_grid_mismatch():
    with pytest.raises(GridMismatch):
        standard_library("advection", SpatialGrid((4, 4), (1.0, 1.0)))
    with pytest.raises(GridMismatch):
        standard_library("reaction-diffusion", SpatialGrid((4,), (1.0,)))
    with pytest.raises(GridMismatch):
        standard_library("cubic-oscillator", SpatialGrid((4,), (1.0,)))


def test_stencil_weights():
    assert dict(stencil_weights(2, 1.0)) == {-1: 1.0, 0: -2.0, 1: 1.0}
    assert dict(stencil_weights(1, 0.5)) == {-1: -1.0, 1: 1.0}
    assert dict(stencil_weights(3, 1.0)) == {-2: -0.5, -1: 1.0, 1: -1.0, 2: 0.5}
    assert dict(stencil_weights(4, 2.0)) == {-2: 1 / 16, -1: -4 / 16, 0: 6 / 16, 1: -4 / 16, 2: 1 / 16}
    with pytest.raises(UnsupportedOrder):
        stencil_weights(5, 1.0)


def test_first_derivative_of_ramp_is_exact_away_from_seam():
    x = 0.1 * np.arange(20)
    d = apply_stencil(3.0 * x, 0, 1, 0.1)
    np.testing.assert_allclose(d[1:-1], 3.0, rtol=1e-12)


def test_fourth_derivative_of_quartic_patch():
    dx = 0.05
    x = dx * np.arange(-2, 3)
    d = apply_stencil(x ** 4 / 24, 0, 4, dx)
    assert d[2] == pytest.approx(1.0, rel=1e-9)


def test_sine_derivative_is_second_order():
    errs = []
    for n in (50, 100, 200):
        g = SpatialGrid((n,), (1 / n,))
        x = np.arange(n) / n
        lib = Library((derivative(0, 1),), 1, g)
        col = evaluate(lib, np.sin(2 * np.pi * x)[None, :, None])[:, 0]
        errs.append(np.max(np.abs(col - 2 * np.pi * np.cos(2 * np.pi * x))))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.02)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.02)


def test_mixed_derivative_composes_axes():
    nx, ny = 32, 24
    g = SpatialGrid((nx, ny), (2 * np.pi / nx, 2 * np.pi / ny))
    X, Y = np.meshgrid(np.arange(nx) * g.spacings[0], np.arange(ny) * g.spacings[1], indexing="ij")
    u = np.sin(X) * np.sin(Y)
    lib = Library((derivative(0, 1, 1),), 1, g)
    col = evaluate(lib, u.reshape(1, -1, 1))[:, 0].reshape(nx, ny)
    np.testing.assert_allclose(col, np.cos(X) * np.cos(Y), atol=0.02)


@pytest.mark.parametrize("system", SYSTEMS)
def test_constant_column_and_zero_state(system, rng):
    lib = standard_library(system, GRIDS[system])
    g = GRIDS[system]
    state = rng.standard_normal((3, g.n_points, lib.n_vars))
    theta = evaluate(lib, state)
    assert theta.shape == (3 * g.n_points, len(lib))
    np.testing.assert_array_equal(theta[:, lib.index("1")], 1.0)
    z = evaluate(lib, np.zeros_like(state))
    rest = [i for i, lbl in enumerate(lib.labels) if lbl != "1"]
    assert np.all(z[:, rest] == 0)


@pytest.mark.parametrize("system", SYSTEMS)
def test_time_argument_is_inert(system, rng):
    lib = standard_library(system, GRIDS[system])
    state = rng.standard_normal((2, GRIDS[system].n_points, lib.n_vars))
    np.testing.assert_array_equal(evaluate(lib, state, [0.0, 1.0]), evaluate(lib, state, [5.0, -3.0]))


def test_nonfinite_state_reports_index():
    lib = standard_library("cubic-oscillator")
    s = np.zeros((4, 1, 2))
    s[2, 0, 1] = np.nan
    with pytest.raises(NonFiniteState) as e:
        evaluate(lib, s)
    assert e.value.index == (2, 0, 1)


def test_column_subset_leaves_others_zero(rng):
    lib = standard_library("cubic-oscillator")
    s = rng.standard_normal((5, 1, 2))
    full = evaluate(lib, s)
    part = evaluate(lib, s, columns=[6, 9])
    np.testing.assert_array_equal(part[:, [6, 9]], full[:, [6, 9]])
    assert np.all(np.delete(part, [6, 9], axis=1) == 0)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3).filter(lambda c: abs(c) > 1e-3), st.integers(0, 2 ** 31))
def test_derivative_columns_are_linear(c, seed):
    lib = standard_library("reaction-diffusion", GRIDS["reaction-diffusion"])
    s = np.random.default_rng(seed).standard_normal((2, 48, 2))
    cols = [i for i, t in enumerate(lib.terms) if t.kind == "derivative"]
    a = evaluate(lib, c * s)[:, cols]
    b = c * evaluate(lib, s)[:, cols]
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.2, 3), st.integers(0, 2 ** 31))
def test_monomial_columns_scale_with_degree(c, seed):
    lib = standard_library("cubic-oscillator")
    s = np.random.default_rng(seed).standard_normal((4, 1, 2))
    a = evaluate(lib, c * s)
    b = evaluate(lib, s)
    for i, t in enumerate(lib.terms):
        deg = sum(t.exponents) if t.kind == "monomial" else 0
        np.testing.assert_allclose(a[:, i], c ** deg * b[:, i], rtol=1e-12, atol=1e-300)


def test_monomial_jacobian_matches_finite_differences(rng):
    lib = standard_library("cubic-oscillator")
    u = rng.standard_normal((6, 2))
    J = monomial_jacobian(lib, u)
    eps = 1e-6
    for v in range(2):
        du = np.zeros_like(u)
        du[:, v] = eps
        fd = (evaluate(lib, (u + du)[:, None, :]) - evaluate(lib, (u - du)[:, None, :])) / (2 * eps)
        np.testing.assert_allclose(J[:, :, v], fd, rtol=1e-6, atol=1e-8)
    with pytest.raises(ValueError):
        monomial_jacobian(standard_library("advection", GRIDS["advection"]), u[:, :1])


def test_monomial_helper_zero_exponents_is_constant():
    assert monomial(0, 0).kind == "constant"
