"""CSR matrices, BLAS-1 kernels, MatrixMarket I/O and test-problem generation.

Reductions accumulate strictly left to right so that residual histories are
bit-reproducible between runs.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, TextIO

import numpy as np
import scipy.sparse as sp

__all__ = [
    "CsrMatrix",
    "MatrixMarketError",
    "spmv",
    "dot",
    "norm2",
    "axpy",
    "scale",
    "parse_matrix_market",
    "read_matrix_market",
    "write_matrix_market",
    "generate_problem",
    "gen_convdiff",
    "scale_rows",
    "banded_row_factors",
]


class MatrixMarketError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    n_rows: int
    n_cols: int
    row_ptrs: np.ndarray = field(repr=False)
    col_idx: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        rp = np.ascontiguousarray(self.row_ptrs, dtype=np.int64)
        ci = np.ascontiguousarray(self.col_idx, dtype=np.int64)
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if rp.shape != (self.n_rows + 1,) or rp[0] != 0 or np.any(np.diff(rp) < 0):
            raise ValueError("row_ptrs must be nondecreasing, start at 0 and have n_rows+1 entries")
        if rp[-1] != ci.size or ci.size != vals.size:
            raise ValueError("row_ptrs[-1], col_idx and values disagree on nnz")
        if ci.size:
            if ci.min() < 0 or ci.max() >= self.n_cols:
                raise ValueError("column index out of range")
            # strictly increasing inside a row: every non-row-start step must grow
            step = np.diff(ci)
            row_start = np.zeros(ci.size, dtype=bool)
            row_start[rp[:-1][rp[:-1] < ci.size]] = True
            if np.any((step <= 0) & ~row_start[1:]):
                raise ValueError("column indices must be strictly increasing within each row")
        if not np.all(np.isfinite(vals)):
            raise ValueError("matrix values must be finite")
        for name, arr in (("row_ptrs", rp), ("col_idx", ci), ("values", vals)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @cached_property
    def _scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, self.col_idx, self.row_ptrs), shape=self.shape)

    def to_scipy(self) -> sp.csr_matrix:
        return self._scipy.copy()

    def to_dense(self) -> np.ndarray:
        return self._scipy.toarray()

    def frobenius_norm(self) -> float:
        return norm2(self.values)

    @classmethod
    def from_scipy(cls, m: sp.spmatrix) -> CsrMatrix:
        m = sp.csr_matrix(m)
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def from_dense(cls, a: np.ndarray) -> CsrMatrix:
        return cls.from_scipy(sp.csr_matrix(np.asarray(a, dtype=np.float64)))

    @classmethod
    def from_coo(cls, n_rows: int, n_cols: int, rows, cols, vals) -> CsrMatrix:
        """Build from triplets; duplicates are summed and rows sorted."""
        m = sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols)).tocsr()
        return cls.from_scipy(m)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CsrMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.row_ptrs, other.row_ptrs)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.values, other.values)
        )


def _vec(x, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return x


def _same_length(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")


def spmv(a: CsrMatrix, x) -> np.ndarray:
    """``y = A x``; each row sum runs over its nonzeros in column order."""
    x = _vec(x)
    if x.shape[0] != a.n_cols:
        raise ValueError(f"dimension mismatch: matrix has {a.n_cols} columns, vector {x.shape[0]}")
    return a._scipy @ x


def dot(x, y) -> float:
    x, y = _vec(x), _vec(y, "y")
    _same_length(x, y)
    if x.size == 0:
        return 0.0
    # add.accumulate is a sequential scan, unlike the pairwise np.sum
    return float(np.add.accumulate(x * y)[-1])


def norm2(x) -> float:
    return math.sqrt(dot(x, x))


def axpy(alpha: float, x, y: np.ndarray) -> None:
    """In place ``y += alpha * x``."""
    x = _vec(x)
    _same_length(x, y)
    y += alpha * x


def scale(alpha: float, x: np.ndarray) -> None:
    x *= alpha


# ---------------------------------------------------------------------------
# MatrixMarket


def parse_matrix_market(stream: TextIO | Iterable[str]) -> CsrMatrix:
    """Read a ``coordinate real`` MatrixMarket stream (general or symmetric)."""
    lines = iter(stream)
    lineno = 0
    header = None
    for raw in lines:
        lineno += 1
        header = raw.strip()
        break
    if not header or not header.lower().startswith("%%matrixmarket"):
        raise MatrixMarketError("missing %%MatrixMarket header", lineno or 1)
    tokens = header.lower().split()
    if len(tokens) != 5 or tokens[1] != "matrix":
        raise MatrixMarketError(f"malformed header {header!r}", lineno)
    _, _, layout, field_, symmetry = tokens
    if layout != "coordinate":
        raise MatrixMarketError(f"unsupported layout {layout!r}", lineno)
    if field_ not in ("real", "double", "integer"):
        raise MatrixMarketError(f"unsupported field {field_!r}", lineno)
    if symmetry not in ("general", "symmetric"):
        raise MatrixMarketError(f"unsupported symmetry {symmetry!r}", lineno)

    size = None
    for raw in lines:
        lineno += 1
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        parts = line.split()
        try:
            size = tuple(int(p) for p in parts)
        except ValueError:
            raise MatrixMarketError(f"bad size line {line!r}", lineno) from None
        if len(size) != 3 or min(size) < 0:
            raise MatrixMarketError(f"bad size line {line!r}", lineno)
        break
    if size is None:
        raise MatrixMarketError("missing size line", lineno)
    n_rows, n_cols, nnz = size

    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.float64)
    k = 0
    for raw in lines:
        lineno += 1
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise MatrixMarketError(f"expected 'row col value', got {line!r}", lineno)
        if k >= nnz:
            raise MatrixMarketError(f"more than {nnz} entries", lineno)
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise MatrixMarketError(f"unparsable entry {line!r}", lineno) from None
        if not (1 <= i <= n_rows and 1 <= j <= n_cols):
            raise MatrixMarketError(f"index ({i}, {j}) out of bounds for {n_rows}x{n_cols}", lineno)
        if not math.isfinite(v):
            raise MatrixMarketError(f"non-finite value {v!r}", lineno)
        rows[k], cols[k], vals[k] = i - 1, j - 1, v
        k += 1
    if k != nnz:
        raise MatrixMarketError(f"expected {nnz} entries, found {k}", lineno)

    if symmetry == "symmetric":
        off = rows != cols
        rows, cols, vals = (
            np.concatenate([rows, cols[off]]),
            np.concatenate([cols, rows[off]]),
            np.concatenate([vals, vals[off]]),
        )
    return CsrMatrix.from_coo(n_rows, n_cols, rows, cols, vals)


def read_matrix_market(path) -> CsrMatrix:
    with open(path, encoding="utf-8") as fh:
        return parse_matrix_market(fh)


def write_matrix_market(a: CsrMatrix, fh: TextIO, comment: str | None = None) -> None:
    """Write ``a`` as a general coordinate file; values use ``repr`` so they reparse exactly."""
    fh.write("%%MatrixMarket matrix coordinate real general\n")
    if comment:
        for line in comment.splitlines():
            fh.write(f"% {line}\n")
    fh.write(f"{a.n_rows} {a.n_cols} {a.nnz}\n")
    rows = np.repeat(np.arange(a.n_rows), np.diff(a.row_ptrs))
    buf = io.StringIO()
    for i, j, v in zip(rows.tolist(), a.col_idx.tolist(), a.values.tolist()):
        buf.write(f"{i + 1} {j + 1} {v!r}\n")
    fh.write(buf.getvalue())


# ---------------------------------------------------------------------------
# problems


def generate_problem(a: CsrMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand side from ``s[i] = sin(i)``, ``x_sol = s / ||s||``, ``b = A x_sol``."""
    n = a.n_cols
    if n < 2:
        raise ValueError("generate_problem needs n >= 2 (sin(0) alone has zero norm)")
    s = np.sin(np.arange(n, dtype=np.float64))
    x_sol = s / norm2(s)
    return spmv(a, x_sol), x_sol


def gen_convdiff(nx: int, ny: int, peclet: float = 1.0) -> CsrMatrix:
    """First-order upwind convection-diffusion on an ``nx`` x ``ny`` grid.

    Diffusion is the 5-point Laplacian with Dirichlet boundaries; convection
    with mesh Peclet number ``peclet`` flows in +x and +y, so upwinding puts
    the extra weight on the west and south neighbours.
    """
    if nx < 2 or ny < 2:
        raise ValueError(f"grid must be at least 2x2, got {nx}x{ny}")
    if peclet < 0 or not math.isfinite(peclet):
        raise ValueError(f"peclet must be finite and >= 0, got {peclet}")
    n = nx * ny
    idx = np.arange(n).reshape(ny, nx)
    rows, cols, vals = [idx.ravel()], [idx.ravel()], [np.full(n, 4.0 + 2.0 * peclet)]

    def link(src: np.ndarray, dst: np.ndarray, w: float) -> None:
        rows.append(src.ravel())
        cols.append(dst.ravel())
        vals.append(np.full(src.size, w))

    link(idx[:, 1:], idx[:, :-1], -1.0 - peclet)  # west
    link(idx[:, :-1], idx[:, 1:], -1.0)  # east
    link(idx[1:, :], idx[:-1, :], -1.0 - peclet)  # south
    link(idx[:-1, :], idx[1:, :], -1.0)  # north
    return CsrMatrix.from_coo(n, n, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))


def scale_rows(a: CsrMatrix, factors) -> CsrMatrix:
    """Return ``diag(factors) @ a``."""
    factors = _vec(factors, "factors")
    if factors.shape[0] != a.n_rows:
        raise ValueError("one scale factor per row required")
    vals = a.values * np.repeat(factors, np.diff(a.row_ptrs))
    return CsrMatrix(a.n_rows, a.n_cols, a.row_ptrs, a.col_idx, vals)


def banded_row_factors(nx: int, ny: int, bands: int = 3, span: float = 12.0) -> np.ndarray:
    """Row factors for a grid split into ``bands`` horizontal strips.

    Strip ``k`` is scaled by ``10**(-span * k / (bands - 1))``, so the factors
    run from 1 down to ``10**-span``.
    """
    if bands < 2:
        raise ValueError("need at least two bands")
    iy = np.arange(nx * ny) // nx
    band = (iy * bands) // ny
    return 10.0 ** (-span * band / (bands - 1))
