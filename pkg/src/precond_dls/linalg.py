"""Small dense real linear algebra layer.

Matrices are ``numpy.ndarray`` objects in column-major (Fortran) order so a
column of the pre-conditioner is contiguous; vectors are 1-D float arrays.
Products go through numpy, the symmetric eigensolver (cyclic Jacobi) and the
Cholesky based SPD solver are implemented here.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

Array = np.ndarray


class LinAlgError(ValueError):
    """Base class for errors raised by this module."""


class DimensionError(LinAlgError):
    pass


class NonFiniteError(LinAlgError):
    pass


class NotSymmetricError(LinAlgError):
    pass


class NotPositiveDefiniteError(LinAlgError):
    pass


SYMMETRY_RTOL = 1e-12


def _require_finite(x: Array, what: str) -> Array:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return x


def matrix(data, rows: int | None = None, cols: int | None = None) -> Array:
    """Build a column-major float matrix.

    ``data`` is either 2-D array-like, or a flat sequence holding the entries
    in column-major order together with explicit ``rows`` and ``cols``.
    """
    arr = np.asarray(data, dtype=float)
    if rows is not None or cols is not None:
        if rows is None or cols is None:
            raise DimensionError("rows and cols must be given together")
        if arr.size != rows * cols:
            raise DimensionError(f"expected {rows * cols} entries, got {arr.size}")
        arr = arr.reshape((rows, cols), order="F")
    if arr.ndim != 2:
        raise DimensionError(f"matrix must be 2-D, got shape {arr.shape}")
    return _require_finite(np.asfortranarray(arr), "matrix")


def vector(data) -> Array:
    arr = np.array(data, dtype=float).ravel()
    return _require_finite(arr, "vector")


def identity(n: int) -> Array:
    return np.asfortranarray(np.eye(n))


def basis(n: int, j: int) -> Array:
    """Column ``j`` (0-based) of the n x n identity."""
    e = np.zeros(n)
    e[j] = 1.0
    return e


def matvec(M: Array, v: Array) -> Array:
    if M.ndim != 2 or v.ndim != 1 or M.shape[1] != v.shape[0]:
        raise DimensionError(f"matvec: cannot apply {M.shape} to vector {v.shape}")
    with np.errstate(invalid="ignore", over="ignore"):
        out = M @ v
    return _require_finite(out, "matvec result")


def transpose_matvec(M: Array, v: Array) -> Array:
    """Compute ``M.T @ v`` without materialising the transpose."""
    if M.ndim != 2 or v.ndim != 1 or M.shape[0] != v.shape[0]:
        raise DimensionError(
            f"transpose_matvec: cannot apply {M.shape}^T to vector {v.shape}"
        )
    with np.errstate(invalid="ignore", over="ignore"):
        out = v @ M
    return _require_finite(out, "transpose_matvec result")


def matmul(lhs: Array, rhs: Array) -> Array:
    if lhs.ndim != 2 or rhs.ndim != 2 or lhs.shape[1] != rhs.shape[0]:
        raise DimensionError(f"matmul: shapes {lhs.shape} and {rhs.shape}")
    with np.errstate(invalid="ignore", over="ignore"):
        # the C-ordered product of the transposes is the F-ordered product, no copy
        out = (rhs.T @ lhs.T).T
    return _require_finite(out, "matmul result")


def gram(M: Array) -> Array:
    """``M.T @ M``, symmetrised so it is exactly symmetric in floating point."""
    G = M.T @ M
    G = 0.5 * (G + G.T)
    return _require_finite(np.asfortranarray(G), "gram")


def norm(x: Array) -> float:
    """Euclidean norm for vectors, Frobenius norm for matrices."""
    with np.errstate(over="ignore"):
        return float(np.sqrt(np.sum(np.square(x))))


def _check_square(S: Array, what: str) -> int:
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionError(f"{what}: matrix must be square, got {S.shape}")
    return S.shape[0]


def _check_symmetric(S: Array, what: str, rtol: float = SYMMETRY_RTOL) -> None:
    scale = max(norm(S), np.finfo(float).tiny)
    if norm(S - S.T) > rtol * scale:
        raise NotSymmetricError(f"{what}: matrix is not symmetric")


# --------------------------------------------------------------------------
# symmetric eigendecomposition
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EigenResult:
    values: Array  # ascending
    vectors: Array  # orthonormal columns, vectors[:, k] pairs with values[k]


def _round_robin(n: int) -> list[tuple[Array, Array]]:
    """Pairings for one parallel-ordered Jacobi sweep.

    Every index pair (p, q), p < q, appears exactly once across the rounds and
    the pairs inside a round are disjoint, so their rotations commute.
    """
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        ps, qs = [], []
        for k in range(size // 2):
            a, b = players[k], players[size - 1 - k]
            if a < 0 or b < 0:
                continue
            ps.append(min(a, b))
            qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _rotate_columns(A: Array, P: Array, Q: Array, c: Array, s: Array) -> None:
    colp, colq = A[:, P], A[:, Q]
    A[:, P] = colp * c - colq * s
    A[:, Q] = colp * s + colq * c


def sym_eig(S: Array, tol: float = 1e-15, max_sweeps: int = 60) -> EigenResult:
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Rotations are applied in round-robin order so that each round handles
    n/2 disjoint index pairs at once. A pair is rotated only while its
    off-diagonal entry is significant relative to the geometric mean of the
    two diagonal entries, which keeps small eigenvalues accurate relative to
    themselves. Sweeps stop when no pair needs rotating or the off-diagonal
    Frobenius mass is below ``tol * ||S||_F``.
    """
    n = _check_square(S, "sym_eig")
    _require_finite(S, "sym_eig input")
    _check_symmetric(S, "sym_eig")
    A = np.array(0.5 * (S + S.T), dtype=float, order="F")
    V = np.eye(n, order="F")
    if n <= 1:
        return EigenResult(np.diag(A).copy(), V)

    scale = norm(A)
    if scale == 0.0:
        return EigenResult(np.zeros(n), V)
    target = tol * scale
    eps = np.finfo(float).eps
    rounds = _round_robin(n)

    for _ in range(max_sweeps):
        if norm(A - np.diag(np.diag(A))) <= target:
            break
        rotated = False
        for P, Q in rounds:
            apq = A[P, Q]
            app, aqq = A[P, P], A[Q, Q]
            active = np.abs(apq) > eps * np.sqrt(np.abs(app * aqq))
            if not active.any():
                continue
            rotated = True
            P, Q = P[active], Q[active]
            apq, app, aqq = apq[active], app[active], aqq[active]
            theta = (aqq - app) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
            t[theta == 0.0] = 1.0
            c = 1.0 / np.hypot(t, 1.0)
            s = t * c
            # A <- J^T A J, using symmetry: rotate columns, transpose, rotate again.
            _rotate_columns(A, P, Q, c, s)
            A = np.asfortranarray(A.T)
            _rotate_columns(A, P, Q, c, s)
            A[P, Q] = 0.0
            A[Q, P] = 0.0
            _rotate_columns(V, P, Q, c, s)
        if not rotated:
            break
    else:
        if norm(A - np.diag(np.diag(A))) > 1e3 * target:
            raise LinAlgError("sym_eig: Jacobi sweeps did not converge")

    values = np.diag(A).copy()
    order = np.argsort(values, kind="stable")
    return EigenResult(values[order], np.asfortranarray(V[:, order]))


# --------------------------------------------------------------------------
# Cholesky and SPD solves
# --------------------------------------------------------------------------


def cholesky(S: Array) -> Array:
    """Lower-triangular L with ``L @ L.T == S`` (left-looking, column by column)."""
    n = _check_square(S, "cholesky")
    _require_finite(S, "cholesky input")
    _check_symmetric(S, "cholesky")
    L = np.zeros((n, n), order="F")
    for j in range(n):
        lj = L[j, :j]
        d = S[j, j] - lj @ lj
        if not d > 0.0:
            raise NotPositiveDefiniteError(
                f"matrix is not positive definite (pivot {j} = {d:.3e})"
            )
        L[j, j] = np.sqrt(d)
        if j + 1 < n:
            L[j + 1 :, j] = (S[j + 1 :, j] - L[j + 1 :, :j] @ lj) / L[j, j]
    return L


def solve_lower(L: Array, rhs: Array) -> Array:
    """Forward substitution for lower-triangular ``L``; ``rhs`` may be 1-D or 2-D."""
    n = _check_square(L, "solve_lower")
    if rhs.shape[0] != n:
        raise DimensionError(f"solve_lower: rhs has {rhs.shape[0]} rows, need {n}")
    X = np.array(rhs, dtype=float, order="F")
    for i in range(n):
        X[i] = (X[i] - L[i, :i] @ X[:i]) / L[i, i]
    return X


def solve_upper(U: Array, rhs: Array) -> Array:
    n = _check_square(U, "solve_upper")
    if rhs.shape[0] != n:
        raise DimensionError(f"solve_upper: rhs has {rhs.shape[0]} rows, need {n}")
    X = np.array(rhs, dtype=float, order="F")
    for i in range(n - 1, -1, -1):
        X[i] = (X[i] - U[i, i + 1 :] @ X[i + 1 :]) / U[i, i]
    return X


def solve_spd(S: Array, rhs: Array) -> Array:
    """Solve ``S X = rhs`` for symmetric positive definite ``S`` via Cholesky.

    Only analysis and oracle code calls this; the iterative protocol never
    inverts anything.
    """
    L = cholesky(S)
    return _require_finite(solve_upper(L.T, solve_lower(L, rhs)), "solve_spd result")


def is_positive_definite(S: Array) -> bool:
    try:
        cholesky(S)
    except (NotPositiveDefiniteError, NotSymmetricError, DimensionError):
        return False
    return True

