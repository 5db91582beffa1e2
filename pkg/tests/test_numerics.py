import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pcbench.errors import EvaluationError, NumericalRankError, ShapeError
from pcbench.numerics import (
    Rng,
    jacobi_eigvals,
    kron,
    numerical_gradient,
    numerical_hessian,
    solve_linear,
    sym_eigvals,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@st.composite
def symmetric_matrices(draw, max_n=6):
    n = draw(st.integers(1, max_n))
    a = draw(arrays(float, (n, n), elements=finite))
    return a + a.T


@settings(max_examples=60, deadline=None)
@given(symmetric_matrices())
def test_jacobi_agrees_with_lapack(m):
    scale = max(1.0, np.abs(m).max())
    assert np.allclose(jacobi_eigvals(m), sym_eigvals(m), atol=1e-9 * scale)


@settings(max_examples=40, deadline=None)
@given(symmetric_matrices())
def test_eigenvalues_sum_to_trace(m):
    assert np.isclose(sym_eigvals(m).sum(), np.trace(m), atol=1e-8 * max(1.0, np.abs(m).max()))


def test_eigvals_of_diagonal_are_sorted_entries():
    assert np.array_equal(sym_eigvals(np.diag([3.0, -1.0, 2.0])), [-1.0, 2.0, 3.0])


def test_nonsymmetric_and_nonsquare_rejected():
    with pytest.raises(ShapeError):
        sym_eigvals(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ShapeError):
        jacobi_eigvals(np.ones((2, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_solve_linear_spd_and_general(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n))
    spd = a @ a.T + n * np.eye(n)
    general = a + n * np.eye(n)
    b = rng.normal(size=(n, 2))
    assert np.allclose(spd @ solve_linear(spd, b), b, atol=1e-9)
    assert np.allclose(general @ solve_linear(general, b), b, atol=1e-8)


def test_singular_system_raises():
    with pytest.raises(NumericalRankError):
        solve_linear(np.array([[1.0, 1.0], [1.0, 1.0]]), np.ones(2))
    with pytest.raises(NumericalRankError):
        solve_linear(np.array([[1.0, 2.0], [0.0, 0.0]]), np.ones(2))


def test_solve_rejects_mismatched_rhs():
    with pytest.raises(ShapeError):
        solve_linear(np.eye(2), np.ones(3))


def test_kron_block_layout():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.eye(2)
    k = kron(a, b)
    assert np.array_equal(k[2:, :2], 3.0 * b)
    assert k.shape == (4, 4)


def test_numerical_derivatives_of_a_polynomial():
    f = lambda v: v[0] ** 3 + 2 * v[0] * v[1] + v[1] ** 2
    p = np.array([1.5, -0.5])
    assert np.allclose(numerical_gradient(f, p), [3 * 1.5**2 + 2 * -0.5, 2 * 1.5 + 2 * -0.5], atol=1e-7)
    assert np.allclose(numerical_hessian(f, p), [[6 * 1.5, 2.0], [2.0, 2.0]], atol=1e-5)


def test_numerical_hessian_flags_nonfinite_objective():
    with np.errstate(divide="ignore", invalid="ignore"), pytest.raises(EvaluationError):
        numerical_hessian(lambda v: np.log(v[0]), [0.0])


def test_rng_is_reproducible_and_children_differ():
    a, b = Rng(5), Rng(5)
    assert np.array_equal(a.normal(size=4), b.normal(size=4))
    c0 = Rng(5).child(0).normal(size=4)
    c1 = Rng(5).child(1).normal(size=4)
    assert not np.allclose(c0, c1)
    assert np.array_equal(c0, Rng(5).child(0).normal(size=4))
