import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from precond_dls.linalg import (
    DimensionError,
    NonFiniteError,
    NotPositiveDefiniteError,
    NotSymmetricError,
    basis,
    cholesky,
    gram,
    identity,
    is_positive_definite,
    matmul,
    matrix,
    matvec,
    norm,
    solve_spd,
    sym_eig,
    transpose_matvec,
)


def test_matvec_examples():
    assert np.array_equal(matvec(np.diag([2.0, 1.0]), np.ones(2)), [2.0, 1.0])
    assert np.array_equal(matvec(identity(3), np.array([4.0, 5.0, 6.0])), [4.0, 5.0, 6.0])
    assert np.array_equal(matvec(np.array([[1.0, 2.0], [3.0, 4.0]]), np.ones(2)), [3.0, 7.0])


def test_transpose_matvec_examples(rng):
    assert np.array_equal(transpose_matvec(np.diag([2.0, 1.0]), np.array([2.0, 1.0])), [4.0, 1.0])
    assert np.array_equal(transpose_matvec(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([1.0, 0.0])), [1.0, 2.0])
    M = rng.standard_normal((5, 3))
    v = rng.standard_normal(5)
    np.testing.assert_allclose(transpose_matvec(M, v), matvec(np.ascontiguousarray(M.T), v), rtol=1e-14)


def test_matmul_examples(rng):
    M = rng.standard_normal((4, 4))
    np.testing.assert_array_equal(matmul(identity(4), M), M)
    np.testing.assert_allclose(matmul(np.diag([4.0, 1.0]), np.diag([0.2, 0.5])), np.diag([0.8, 0.5]))
    e1, e2 = basis(2, 0), basis(2, 1)
    np.testing.assert_array_equal(matmul(np.outer(e1, e2), np.outer(e2, e1)), np.outer(e1, e1))


def test_dimension_and_finiteness_errors():
    with pytest.raises(DimensionError):
        matvec(np.eye(2), np.ones(3))
    with pytest.raises(DimensionError):
        matmul(np.eye(2), np.eye(3))
    with pytest.raises(NonFiniteError):
        matrix([[1.0, np.nan]])
    with pytest.raises(NonFiniteError):
        matvec(np.eye(2), np.array([np.inf, 0.0]))


def test_matrix_is_column_major():
    M = matrix([1.0, 2.0, 3.0, 4.0], rows=2, cols=2)
    np.testing.assert_array_equal(M, [[1.0, 3.0], [2.0, 4.0]])
    assert M.flags.f_contiguous


def test_sym_eig_examples():
    np.testing.assert_allclose(sym_eig(np.diag([4.0, 1.0])).values, [1.0, 4.0])
    np.testing.assert_allclose(sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]])).values, [1.0, 3.0], rtol=1e-14)


def test_sym_eig_rejects_nonsymmetric():
    with pytest.raises(NotSymmetricError):
        sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


@pytest.mark.parametrize("n", [1, 2, 3, 7, 20, 41])
def test_sym_eig_residuals_and_orthonormality(n, rng):
    M = rng.standard_normal((n, n))
    S = M + M.T
    res = sym_eig(S)
    assert np.all(np.diff(res.values) >= 0)
    fro = norm(S)
    for k in range(n):
        v = res.vectors[:, k]
        assert norm(S @ v - res.values[k] * v) <= 1e-8 * fro
    np.testing.assert_allclose(res.vectors.T @ res.vectors, np.eye(n), atol=1e-10)
    np.testing.assert_allclose(res.values, np.linalg.eigvalsh(S), atol=1e-10 * fro)


def test_sym_eig_ill_conditioned_gram(rng):
    # graded spectrum spanning eight decades, like a stiff structural mass matrix
    n = 30
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    d = np.logspace(-4, 4, n)
    S = gram(Q * np.sqrt(d))
    vals = sym_eig(S).values
    ref = np.linalg.eigvalsh(S)
    assert abs(vals[-1] / vals[0] - ref[-1] / ref[0]) <= 1e-5 * ref[-1] / ref[0]


def test_solve_spd_examples(rng):
    np.testing.assert_allclose(solve_spd(np.diag([5.0, 2.0]), np.eye(2)), np.diag([0.2, 0.5]), rtol=1e-15)
    b = rng.standard_normal(4)
    np.testing.assert_allclose(solve_spd(np.eye(4), b), b)
    M = rng.standard_normal((6, 6))
    S = M.T @ M + np.eye(6)
    X = solve_spd(S, np.eye(6))
    assert norm(S @ X - np.eye(6)) <= 1e-8


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefiniteError):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert not is_positive_definite(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert is_positive_definite(np.diag([1.0, 3.0]))
    L = cholesky(np.array([[4.0, 2.0], [2.0, 5.0]]))
    np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, 2.0]])


def test_norm_examples():
    assert norm(np.array([3.0, 4.0])) == 5.0
    assert norm(identity(2)) == pytest.approx(np.sqrt(2.0))
    assert norm(np.diag([0.2, 0.5])) == pytest.approx(np.sqrt(0.29), rel=1e-15)


def test_products_are_deterministic(rng):
    A = rng.standard_normal((30, 12))
    B = rng.standard_normal((12, 9))
    v = rng.standard_normal(12)
    assert np.array_equal(matmul(A, B), matmul(A.copy(), B.copy()))
    assert np.array_equal(matvec(A, v), matvec(A.copy(), v.copy()))
    w = rng.standard_normal(30)
    assert np.array_equal(transpose_matvec(A, w), transpose_matvec(A.copy(), w.copy()))


spd_sizes = st.integers(min_value=1, max_value=8)


@settings(max_examples=40, deadline=None)
@given(n=spd_sizes, seed=st.integers(0, 2**31 - 1), beta=st.floats(0.01, 100.0))
def test_shift_property(n, seed, beta):
    M = np.random.default_rng(seed).standard_normal((n + 2, n))
    S = gram(M)
    base = sym_eig(S).values
    shifted = sym_eig(S + beta * np.eye(n)).values
    np.testing.assert_allclose(shifted, base + beta, atol=1e-8 * max(1.0, norm(S)))


@settings(max_examples=40, deadline=None)
@given(n=spd_sizes, seed=st.integers(0, 2**31 - 1))
def test_inverse_from_eig_matches_solve_spd(n, seed):
    M = np.random.default_rng(seed).standard_normal((n, n))
    S = M.T @ M + np.eye(n)
    res = sym_eig(S)
    inv_eig = (res.vectors / res.values) @ res.vectors.T
    inv_chol = solve_spd(S, np.eye(n))
    np.testing.assert_allclose(inv_eig, inv_chol, rtol=1e-7, atol=1e-7 * np.abs(inv_chol).max())
