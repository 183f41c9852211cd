import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sindy_unroll.core import CoefficientMatrix, Library, SpatialGrid, monomial
from sindy_unroll.dictionary import evaluate, standard_library
from sindy_unroll.unroll import fit_slope, truncation_probe, unroll, unrolled_euler, unrolled_rk4

SCALAR = Library((monomial(1),), 1, SpatialGrid.point())
ONE = np.array([[1.0]])


def test_euler_k2_hand_recursion():
    res = unrolled_euler(np.array([[[1.0]]]), [0.0], [1.0], SCALAR, ONE, 2)
    assert res.prediction[0, 0, 0] == 2.25
    assert res.effective_dictionary[0, 0] == 1.25
    assert 1 + 1.0 * res.effective_dictionary[0, 0] * 1.0 == 2.25


def test_rk4_hand_stages():
    res = unrolled_rk4(np.array([[[1.0]]]), [0.0], [0.5], SCALAR, ONE, 1)
    k = (1.0, 1.25, 1.3125, 1.65625)
    expected = 1 + 0.5 * (k[0] + 2 * k[1] + 2 * k[2] + k[3]) / 6
    assert expected == 1.6484375
    assert res.prediction[0, 0, 0] == pytest.approx(expected, abs=1e-15)


def test_k1_euler_is_plain_step_bitwise(rng):
    lib = standard_library("cubic-oscillator")
    U = rng.standard_normal((7, 1, 2))
    a = rng.standard_normal((15, 2))
    h = rng.uniform(0.01, 0.1, 7)
    res = unrolled_euler(U, None, h, lib, a, 1)
    theta = evaluate(lib, U)
    np.testing.assert_array_equal(res.effective_dictionary, theta)
    np.testing.assert_array_equal(res.prediction, U + h[:, None, None] * (theta @ a).reshape(U.shape))


@pytest.mark.parametrize("method", ["euler", "rk4"])
def test_zero_alpha_is_identity(method, rng):
    lib = standard_library("cubic-oscillator")
    U = rng.standard_normal((3, 1, 2))
    res = unroll(method, U, None, [0.1] * 3, lib, np.zeros((15, 2)), 4)
    np.testing.assert_array_equal(res.prediction, U)
    np.testing.assert_allclose(res.effective_dictionary, evaluate(lib, U), rtol=1e-15)


def test_accepts_coefficient_matrix(rng):
    lib = standard_library("cubic-oscillator")
    U = rng.standard_normal((2, 1, 2))
    a = rng.standard_normal((15, 2))
    r1 = unrolled_rk4(U, None, [0.05, 0.05], lib, a, 3)
    r2 = unrolled_rk4(U, None, [0.05, 0.05], lib, CoefficientMatrix(a, np.ones_like(a, bool)), 3)
    np.testing.assert_array_equal(r1.prediction, r2.prediction)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 8), st.sampled_from(["euler", "rk4"]))
def test_factorization_identity_pde(seed, K, method):
    rng = np.random.default_rng(seed)
    g = SpatialGrid((12,), (0.5,))
    lib = standard_library("kuramoto-sivashinsky", g)
    U = 0.3 * rng.standard_normal((3, 12, 1))
    a = 0.05 * rng.standard_normal((6, 1))
    h = rng.uniform(1e-3, 1e-2, 3)
    res = unroll(method, U, None, h, lib, a, K)
    lhs = (res.prediction - U).reshape(-1, 1)
    rhs = np.repeat(h, 12)[:, None] * (res.effective_dictionary @ a)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * max(np.linalg.norm(lhs), 1e-300)


def test_times_do_not_matter_for_autonomous(rng):
    lib = standard_library("cubic-oscillator")
    U = rng.standard_normal((2, 1, 2))
    a = 0.1 * rng.standard_normal((15, 2))
    r1 = unrolled_rk4(U, [0.0, 1.0], [0.1, 0.1], lib, a, 5)
    r2 = unrolled_rk4(U, [100.0, -3.0], [0.1, 0.1], lib, a, 5)
    np.testing.assert_array_equal(r1.prediction, r2.prediction)


@pytest.mark.parametrize("method", ["euler", "rk4"])
def test_divergence_is_reported_not_raised(method):
    lib = standard_library("cubic-oscillator")
    a = np.zeros((15, 2))
    a[lib.index("u^4"), 0] = 50.0
    res = unroll(method, np.array([[[10.0, 1.0]]]), None, [1.0], lib, a, 5)
    assert res.diverged is not None
    assert set(res.diverged) == {"step", "stage", "location"}


def test_rk4_ratio_k2_over_k1():
    (_, e1), (_, e2) = truncation_probe("rk4", 0.4, [1, 2])
    assert e2 / e1 == pytest.approx(1 / 16, rel=0.2)


def test_euler_error_times_k_roughly_constant():
    rows = truncation_probe("euler", 0.5, [1, 2, 4, 8, 16])
    scaled = [k * e for k, e in rows]
    # K * error tends to h^2 e^h / 2 from below
    limit = 0.25 * np.exp(0.5) / 2
    assert all(0.7 * limit < s < limit for s in scaled)
    errs = [e for _, e in truncation_probe("euler", 0.5, [1, 2, 4, 8, 16, 32, 64, 128])]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_fit_slope_exact():
    x = np.array([1, 2, 4, 8.0])
    assert fit_slope(x, 3 * x ** -2.0) == pytest.approx(-2.0)


def test_unrolled_truth_converges_with_k(cubic_fine, cubic_spec):
    from sindy_unroll.core import make_training_pairs
    from sindy_unroll.simulate import subsample
    ds = subsample(cubic_fine, 500)                      # h = 0.1
    U, V, h = make_training_pairs(ds)
    errs = []
    for K in (1, 2, 4, 8):
        pred = unrolled_euler(U, None, h, cubic_spec.library, cubic_spec.ground_truth, K).prediction
        errs.append(np.sqrt(np.mean((pred - V) ** 2)))
    assert all(b < a for a, b in zip(errs, errs[1:]))
