"""Restarted GMRES with a compressed Krylov basis (CB-GMRES).

The basis is stored in any :class:`~frsz2.basis.StorageFormat`; everything
else (Hessenberg matrix, Givens rotations, iterate, residuals) is binary64.
Orthogonalisation is classical Gram-Schmidt with at most one
re-orthogonalisation pass. Convergence is only ever declared on an
explicitly recomputed residual.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .basis import KrylovBasis, StorageFormat
from .sparsela import CsrMatrix, norm2, spmv

__all__ = [
    "GmresConfig",
    "GmresState",
    "ResidualRecord",
    "SolveResult",
    "SolverBreakdown",
    "gmres_solve",
    "start_cycle",
    "arnoldi_step",
    "update_least_squares",
    "form_solution",
    "rrn",
]

log = logging.getLogger(__name__)


class SolverBreakdown(ArithmeticError):
    def __init__(self, message: str, iteration: int):
        self.iteration = iteration
        super().__init__(f"iteration {iteration}: {message}")


@dataclass(frozen=True)
class GmresConfig:
    target_rrn: float = 1e-10
    restart: int = 100
    max_total_iterations: int = 20000
    eta: float = 1.0 / math.sqrt(2.0)
    storage_format: StorageFormat = StorageFormat("f64")

    def __post_init__(self) -> None:
        if isinstance(self.storage_format, str):
            object.__setattr__(self, "storage_format", StorageFormat.parse(self.storage_format))
        if self.restart < 1:
            raise ValueError("restart must be >= 1")
        if not self.target_rrn > 0:
            raise ValueError("target_rrn must be positive")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if self.max_total_iterations < 1:
            raise ValueError("max_total_iterations must be >= 1")


@dataclass(frozen=True)
class ResidualRecord:
    iteration: int
    rrn: float
    explicit: bool


@dataclass
class SolveResult:
    x: np.ndarray = field(repr=False)
    converged: bool
    total_iterations: int
    restarts: int
    final_rrn: float
    residual_history: list[ResidualRecord] = field(repr=False)
    elapsed: float = 0.0
    storage_format: str = "f64"


@dataclass(eq=False)
class GmresState:
    """Working set of one restart cycle.

    ``hessenberg`` keeps the raw Arnoldi coefficients; ``triangular`` is the
    same matrix with the Givens rotations applied.
    """

    basis: KrylovBasis
    x0: np.ndarray
    beta: float
    hessenberg: np.ndarray
    triangular: np.ndarray
    cs: np.ndarray
    sn: np.ndarray
    g: np.ndarray
    eta: float = 1.0 / math.sqrt(2.0)
    steps: int = 0
    reorthogonalized: int = 0

    @property
    def restart(self) -> int:
        return self.hessenberg.shape[1]


def rrn(a: CsrMatrix, x, b) -> float:
    """Relative residual norm ``||b - A x|| / ||b||``."""
    bnorm = norm2(b)
    if bnorm == 0.0:
        raise ValueError("relative residual undefined for b = 0")
    return norm2(np.asarray(b, dtype=np.float64) - spmv(a, x)) / bnorm


def start_cycle(a: CsrMatrix, b: np.ndarray, x0: np.ndarray, basis: KrylovBasis,
                eta: float = 1.0 / math.sqrt(2.0)) -> GmresState:
    """Compute ``r0 = b - A x0`` and seed the basis with ``r0 / ||r0||``."""
    m = basis.capacity - 1
    r0 = b - spmv(a, x0)
    beta = norm2(r0)
    basis.reset()
    g = np.zeros(m + 1)
    g[0] = beta
    state = GmresState(
        basis=basis, x0=np.array(x0, dtype=np.float64), beta=beta,
        hessenberg=np.zeros((m + 1, m)), triangular=np.zeros((m + 1, m)),
        cs=np.zeros(m), sn=np.zeros(m), g=g, eta=eta,
    )
    if beta > 0.0:
        basis.write_vector(0, r0 / beta)
    return state


def arnoldi_step(state: GmresState, a: CsrMatrix) -> bool:
    """Extend the basis by one vector; returns False on breakdown.

    Fills column ``state.steps`` of the Hessenberg matrix. On breakdown the
    column is still filled but no new basis vector is written.
    """
    j = state.steps
    basis = state.basis
    if j >= state.restart:
        raise ValueError("cycle is already full")
    w = spmv(a, basis.read_vector(j))
    omega = norm2(w)
    h = basis.orthogonalize(w, j + 1)
    h_next = norm2(w)
    reference = omega
    if h_next < state.eta * omega:
        h = h + basis.orthogonalize(w, j + 1)
        reference = h_next
        h_next = norm2(w)
        state.reorthogonalized += 1
    if not (np.all(np.isfinite(h)) and math.isfinite(h_next)):
        raise SolverBreakdown("non-finite Hessenberg entry", j + 1)
    state.hessenberg[: j + 1, j] = h
    state.hessenberg[j + 1, j] = h_next
    state.steps = j + 1
    # after a second pass the norm is compared with what entered that pass
    if h_next == 0.0 or h_next < state.eta * reference:
        return False
    if j + 1 < basis.capacity:
        basis.write_vector(j + 1, w / h_next)
    return True


def update_least_squares(state: GmresState, j: int) -> float:
    """Rotate Hessenberg column ``j`` to triangular form; returns ``|g[j+1]|``."""
    col = state.hessenberg[: j + 2, j].copy()
    for i in range(j):
        c, s = state.cs[i], state.sn[i]
        top = c * col[i] + s * col[i + 1]
        col[i + 1] = -s * col[i] + c * col[i + 1]
        col[i] = top
    a_, b_ = col[j], col[j + 1]
    r = math.hypot(a_, b_)
    if r == 0.0:
        c, s = 1.0, 0.0
    else:
        c, s = a_ / r, b_ / r
    state.cs[j], state.sn[j] = c, s
    col[j], col[j + 1] = r, 0.0
    state.triangular[: j + 2, j] = col
    state.g[j + 1] = -s * state.g[j]
    state.g[j] = c * state.g[j]
    return abs(state.g[j + 1])


def form_solution(state: GmresState, k: int | None = None) -> np.ndarray:
    """``x0 + V_k y`` where ``y`` solves the rotated triangular system."""
    k = state.steps if k is None else k
    if k == 0:
        return state.x0.copy()
    r = state.triangular[:k, :k]
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        if r[i, i] == 0.0:
            raise SolverBreakdown("singular triangular factor", i + 1)
        y[i] = (state.g[i] - r[i, i + 1 : k] @ y[i + 1 :]) / r[i, i]
    return state.x0 + state.basis.combine(y, k)


def gmres_solve(a: CsrMatrix, b, x0=None, cfg: GmresConfig | None = None) -> SolveResult:
    cfg = cfg or GmresConfig()
    b = np.asarray(b, dtype=np.float64)
    n = a.n_rows
    if a.n_cols != n or b.shape != (n,):
        raise ValueError(f"dimension mismatch: A is {a.shape}, b has shape {b.shape}")
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != (n,):
        raise ValueError("x0 has the wrong length")
    fmt = cfg.storage_format.name
    tic = time.perf_counter()
    bnorm = norm2(b)
    if bnorm == 0.0:
        return SolveResult(np.zeros(n), True, 0, 0, 0.0, [ResidualRecord(0, 0.0, True)], 0.0, fmt)

    basis = KrylovBasis(n, cfg.restart + 1, cfg.storage_format)
    history: list[ResidualRecord] = []
    total = 0
    cycles = 0
    explicit = rrn(a, x, b)
    history.append(ResidualRecord(0, explicit, True))
    converged = explicit <= cfg.target_rrn

    while not converged and total < cfg.max_total_iterations:
        cycles += 1
        state = start_cycle(a, b, x, basis, cfg.eta)
        for j in range(cfg.restart):
            ok = arnoldi_step(state, a)
            total += 1
            implicit = update_least_squares(state, j) / bnorm
            if not math.isfinite(implicit):
                raise SolverBreakdown("non-finite residual estimate", total)
            history.append(ResidualRecord(total, implicit, False))
            if not ok or implicit <= cfg.target_rrn or total >= cfg.max_total_iterations:
                break
        x = form_solution(state)
        if not np.all(np.isfinite(x)):
            raise SolverBreakdown("non-finite iterate", total)
        explicit = rrn(a, x, b)
        history.append(ResidualRecord(total, explicit, True))
        log.debug("%s: cycle ended at iteration %d, explicit rrn %.3e", fmt, total, explicit)
        converged = explicit <= cfg.target_rrn

    elapsed = time.perf_counter() - tic
    return SolveResult(x, converged, total, max(cycles - 1, 0), explicit, history, elapsed, fmt)
