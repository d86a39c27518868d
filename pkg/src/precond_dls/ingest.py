"""Problem construction: Matrix Market / CSV loading, right-hand sides, row sharding."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .linalg import Array, DimensionError, gram, matrix, matvec, norm, vector


class MatrixMarketError(ValueError):
    pass


@dataclass(frozen=True)
class Problem:
    """Least-squares data ``min 1/2 ||A x - b||^2`` with an optional known solution."""

    A: Array
    b: Array
    x_star: Optional[Array] = None

    def __post_init__(self):
        N, n = self.A.shape
        if self.b.shape != (N,):
            raise DimensionError(f"b has shape {self.b.shape}, expected ({N},)")
        if N < n:
            raise DimensionError(f"A must be tall (N >= n), got {N} x {n}")
        if self.x_star is not None:
            if self.x_star.shape != (n,):
                raise DimensionError(f"x_star has shape {self.x_star.shape}, expected ({n},)")
            if norm(self.A @ self.x_star - self.b) > 1e-10 * max(norm(self.b), 1e-300):
                raise ValueError("x_star does not satisfy A x_star = b")

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def N(self) -> int:
        return self.A.shape[0]


@dataclass
class AgentShard:
    agent_id: int
    A: Array
    b: Array
    gram_cached: Optional[Array] = field(default=None, repr=False)

    @property
    def rows(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]


# --------------------------------------------------------------------------
# Matrix Market
# --------------------------------------------------------------------------

_SUPPORTED_FIELDS = {"real", "integer", "double"}
_SUPPORTED_SYMMETRY = {"general", "symmetric"}


def parse_matrix_market(text: Union[str, bytes]) -> Array:
    """Parse Matrix Market text (coordinate or array; real/integer; general/symmetric)
    into a dense column-major matrix."""
    if isinstance(text, bytes):
        text = text.decode("ascii", errors="replace")
    lines = text.splitlines()
    if not lines or not lines[0].lower().startswith("%%matrixmarket"):
        raise MatrixMarketError("missing '%%MatrixMarket' header")
    header = lines[0].split()
    if len(header) != 5 or header[1].lower() != "matrix":
        raise MatrixMarketError(f"malformed header: {lines[0]!r}")
    fmt, fld, sym = (h.lower() for h in header[2:])
    if fmt not in ("coordinate", "array"):
        raise MatrixMarketError(f"unsupported format {fmt!r}")
    if fld not in _SUPPORTED_FIELDS:
        raise MatrixMarketError(f"unsupported field {fld!r}")
    if sym not in _SUPPORTED_SYMMETRY:
        raise MatrixMarketError(f"unsupported symmetry {sym!r}")

    body = [ln for ln in lines[1:] if ln.strip() and not ln.lstrip().startswith("%")]
    if not body:
        raise MatrixMarketError("missing size line")
    size = body[0].split()
    try:
        dims = [int(tok) for tok in size]
    except ValueError as exc:
        raise MatrixMarketError(f"bad size line {body[0]!r}") from exc
    entries = body[1:]

    if fmt == "coordinate":
        if len(dims) != 3:
            raise MatrixMarketError(f"coordinate size line needs 3 integers, got {body[0]!r}")
        rows, cols, nnz = dims
        if sym == "symmetric" and rows != cols:
            raise MatrixMarketError("symmetric matrix must be square")
        if len(entries) < nnz:
            raise MatrixMarketError(f"declared {nnz} entries, found {len(entries)}")
        M = np.zeros((rows, cols), order="F")
        for k, ln in enumerate(entries[:nnz]):
            tok = ln.split()
            if len(tok) < 3:
                raise MatrixMarketError(f"entry {k + 1}: expected 'i j value', got {ln!r}")
            i, j, val = int(tok[0]), int(tok[1]), float(tok[2])
            if not (1 <= i <= rows and 1 <= j <= cols):
                raise MatrixMarketError(f"entry {k + 1}: index ({i}, {j}) outside {rows} x {cols}")
            M[i - 1, j - 1] += val
            if sym == "symmetric" and i != j:
                M[j - 1, i - 1] += val
        return matrix(M)

    if len(dims) != 2:
        raise MatrixMarketError(f"array size line needs 2 integers, got {body[0]!r}")
    rows, cols = dims
    values = [float(tok) for ln in entries for tok in ln.split()]
    if sym == "symmetric":
        if rows != cols:
            raise MatrixMarketError("symmetric matrix must be square")
        need = rows * (rows + 1) // 2
        if len(values) < need:
            raise MatrixMarketError(f"declared {need} entries, found {len(values)}")
        M = np.zeros((rows, cols), order="F")
        it = iter(values)
        for j in range(cols):
            for i in range(j, rows):
                M[i, j] = M[j, i] = next(it)
        return matrix(M)
    if len(values) < rows * cols:
        raise MatrixMarketError(f"declared {rows * cols} entries, found {len(values)}")
    return matrix(values[: rows * cols], rows, cols)


def read_matrix_market(path: Union[str, Path]) -> Array:
    path = Path(path)
    if path.suffix == ".gz":
        import gzip

        with gzip.open(path, "rb") as fh:
            return parse_matrix_market(fh.read())
    return parse_matrix_market(path.read_bytes())


def format_matrix_market_array(M: Array) -> str:
    """Serialise as a general real array-format Matrix Market file."""
    out = io.StringIO()
    out.write("%%MatrixMarket matrix array real general\n")
    out.write(f"{M.shape[0]} {M.shape[1]}\n")
    for v in np.ravel(M, order="F"):
        out.write(f"{float(v)!r}\n")
    return out.getvalue()


def read_csv_matrix(path: Union[str, Path]) -> Array:
    """One matrix row per line, comma separated; blank lines and '#' comments ignored."""
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2, dtype=float)
    return matrix(data)


def load_matrix(path: Union[str, Path]) -> Array:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_csv_matrix(path)
    return read_matrix_market(path)


# --------------------------------------------------------------------------
# problems and shards
# --------------------------------------------------------------------------


def synthesize_rhs(A: Array, x_star: Array) -> Problem:
    """Problem with ``b = A x_star`` so the solution is known exactly."""
    x_star = vector(x_star)
    return Problem(A=A, b=matvec(A, x_star), x_star=x_star)


def partition(problem: Problem, m: int, cache_gram: bool = False) -> list[AgentShard]:
    """Split rows into ``m`` contiguous blocks; the first ``N mod m`` agents get one extra row."""
    N = problem.N
    if not 1 <= m <= N:
        raise ValueError(f"number of agents must be in [1, {N}], got {m}")
    base, extra = divmod(N, m)
    shards = []
    start = 0
    for i in range(m):
        stop = start + base + (1 if i < extra else 0)
        A_i = np.asfortranarray(problem.A[start:stop])
        shards.append(
            AgentShard(
                agent_id=i,
                A=A_i,
                b=problem.b[start:stop].copy(),
                gram_cached=gram(A_i) if cache_gram else None,
            )
        )
        start = stop
    return shards


def fixture(name: str, seed: int = 0) -> Problem:
    """Built-in problems.

    ``oracle2x2``: A = diag(2, 1), x* = (1, 1).
    ``rank-deficient``: 4 x 3 matrix whose third column duplicates the first.
    ``random40x8``: seeded Gaussian 40 x 8 matrix with x* = ones.
    """
    if name == "oracle2x2":
        return synthesize_rhs(matrix([[2.0, 0.0], [0.0, 1.0]]), [1.0, 1.0])
    if name == "rank-deficient":
        A = matrix([[1.0, 2.0, 1.0], [0.0, 1.0, 0.0], [3.0, -1.0, 3.0], [2.0, 0.5, 2.0]])
        return synthesize_rhs(A, np.ones(3))
    if name == "random40x8":
        rng = np.random.default_rng(seed)
        return synthesize_rhs(matrix(rng.standard_normal((40, 8))), np.ones(8))
    raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")


FIXTURES = ("oracle2x2", "rank-deficient", "random40x8")
