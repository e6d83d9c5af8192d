import math

import numpy as np
import pytest
import scipy.sparse as sp

from frsz2.basis import KrylovBasis
from frsz2.solver import (
    GmresConfig,
    GmresState,
    SolverBreakdown,
    arnoldi_step,
    form_solution,
    gmres_solve,
    rrn,
    start_cycle,
    update_least_squares,
)
from frsz2.sparsela import CsrMatrix, gen_convdiff, generate_problem

from oracles import kahan_dot


def _diag(values):
    return CsrMatrix.from_dense(np.diag(values))


def _state(basis, m):
    g = np.zeros(m + 1)
    return GmresState(basis, np.zeros(basis.n), 1.0, np.zeros((m + 1, m)), np.zeros((m + 1, m)),
                      np.zeros(m), np.zeros(m), g)


def test_config_validation():
    with pytest.raises(ValueError):
        GmresConfig(restart=0)
    with pytest.raises(ValueError):
        GmresConfig(eta=1.0)
    with pytest.raises(ValueError):
        GmresConfig(target_rrn=0.0)
    with pytest.raises(ValueError):
        GmresConfig(storage_format="f8")
    assert GmresConfig(storage_format="frsz2-21").storage_format.name == "frsz2-21"


def test_identity_converges_in_one_iteration():
    a = CsrMatrix.from_dense(np.eye(5))
    b = np.array([1.0, -2.0, 3.0, 0.5, 4.0])
    res = gmres_solve(a, b)
    assert res.converged and res.total_iterations == 1 and res.restarts == 0
    assert np.allclose(res.x, b, rtol=0, atol=1e-15)
    assert res.residual_history[0].explicit and res.residual_history[-1].explicit


@pytest.mark.parametrize("k", [1, 2, 3, 5, 8])
def test_diagonal_converges_within_k(k):
    a = _diag(np.arange(1.0, k + 1))
    b = np.ones(k)
    res = gmres_solve(a, b, cfg=GmresConfig(target_rrn=1e-12))
    assert res.converged and res.total_iterations <= k
    assert np.allclose(res.x, 1.0 / np.arange(1.0, k + 1), rtol=1e-10, atol=0)


def test_arnoldi_hand_example():
    # A maps e1 to [1, 1, 0]: h11 = 1, h21 = 1 and w is already orthogonal after one pass
    a = CsrMatrix.from_dense([[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    basis = KrylovBasis(3, 3, "f64")
    basis.write_vector(0, [1.0, 0.0, 0.0])
    st = _state(basis, 2)
    assert arnoldi_step(st, a)
    assert st.hessenberg[0, 0] == 1.0 and st.hessenberg[1, 0] == 1.0
    assert st.reorthogonalized == 0
    assert basis.read_vector(1).tolist() == [0.0, 1.0, 0.0]


def test_arnoldi_reorthogonalizes_near_parallel_vectors():
    n = 60
    rng = np.random.default_rng(1)
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    # A v1 nearly parallel to v1 forces the second pass
    a = CsrMatrix.from_dense(np.eye(n) + 1e-6 * rng.standard_normal((n, n)))
    basis = KrylovBasis(n, 8, "f64")
    basis.write_vector(0, q[:, 0])
    st = _state(basis, 7)
    for _ in range(7):
        if not arnoldi_step(st, a):
            break
    assert st.reorthogonalized > 0
    v = basis.read_panel()
    assert np.max(np.abs(v @ v.T - np.eye(v.shape[0]))) <= 1e-8


def test_arnoldi_breakdown_on_invariant_subspace():
    a = _diag([2.0, 3.0, 4.0])
    basis = KrylovBasis(3, 3, "f64")
    basis.write_vector(0, [1.0, 0.0, 0.0])  # eigenvector
    st = _state(basis, 2)
    assert arnoldi_step(st, a) is False
    assert st.hessenberg[0, 0] == 2.0 and st.hessenberg[1, 0] == 0.0
    assert basis.count == 1


def test_givens_examples():
    basis = KrylovBasis(2, 2, "f64")
    st = _state(basis, 1)
    st.g[0] = 1.0
    st.hessenberg[:, 0] = [1.0, 0.0]
    assert update_least_squares(st, 0) == 0.0
    st = _state(basis, 1)
    st.g[0] = 1.0
    st.hessenberg[:, 0] = [1.0, 1.0]
    assert math.isclose(update_least_squares(st, 0), 1 / math.sqrt(2), rel_tol=1e-15)
    assert math.isclose(st.triangular[0, 0], math.sqrt(2), rel_tol=1e-15)


def test_givens_matches_lstsq():
    rng = np.random.default_rng(2)
    m = 6
    h = np.triu(rng.standard_normal((m + 1, m)), -1)
    beta = 2.5
    st = _state(KrylovBasis(1, 1, "f64"), m)
    st.g[0] = beta
    st.hessenberg[:] = h
    res = [update_least_squares(st, j) for j in range(m)]
    e1 = np.zeros(m + 1)
    e1[0] = beta
    for k in range(1, m + 1):
        y, *_ = np.linalg.lstsq(h[: k + 1, :k], e1[: k + 1], rcond=None)
        expected = np.linalg.norm(e1[: k + 1] - h[: k + 1, :k] @ y)
        assert abs(res[k - 1] - expected) <= 1e-12 * beta
    assert all(a >= b - 1e-15 for a, b in zip(res, res[1:]))


def test_form_solution_zero_steps_returns_x0():
    basis = KrylovBasis(3, 2, "f64")
    st = _state(basis, 1)
    st.x0 = np.array([1.0, 2.0, 3.0])
    assert form_solution(st).tolist() == [1.0, 2.0, 3.0]


def test_implicit_and_explicit_residuals_agree():
    a = gen_convdiff(12, 12, 1.0)
    b, _ = generate_problem(a)
    basis = KrylovBasis(a.n_rows, 31, "f64")
    st = start_cycle(a, b, np.zeros(a.n_rows), basis)
    for j in range(30):
        arnoldi_step(st, a)
        implicit = update_least_squares(st, j) / np.linalg.norm(b)
        explicit = rrn(a, form_solution(st), b)
        assert abs(implicit - explicit) <= 1e-8


def test_rrn_examples_and_oracle():
    a = CsrMatrix.from_dense(np.eye(2))
    assert rrn(a, [1.0, 1.0], [1.0, 1.0]) == 0.0
    assert rrn(a, [0.0, 0.0], [3.0, 4.0]) == 1.0
    with pytest.raises(ValueError):
        rrn(a, [0.0, 0.0], [0.0, 0.0])
    rng = np.random.default_rng(3)
    m = CsrMatrix.from_scipy(sp.random(200, 200, density=0.05, random_state=rng, format="csr") + sp.eye(200))
    x, b = rng.standard_normal(200), rng.standard_normal(200)
    r = b - m.to_dense() @ x
    ref = math.sqrt(kahan_dot(r, r)) / math.sqrt(kahan_dot(b, b))
    assert abs(rrn(m, x, b) - ref) <= 1e-12 * ref


def test_history_layout_and_restarts():
    a = gen_convdiff(10, 10, 1.0)
    b, _ = generate_problem(a)
    res = gmres_solve(a, b, cfg=GmresConfig(restart=10, target_rrn=1e-8))
    assert res.converged
    hist = res.residual_history
    assert hist[0].iteration == 0 and hist[0].explicit and hist[0].rrn == 1.0
    explicit = [r for r in hist if r.explicit]
    assert len(explicit) == res.restarts + 2
    assert [r.iteration for r in hist if not r.explicit] == list(range(1, res.total_iterations + 1))
    assert res.final_rrn == hist[-1].rrn <= 1e-8
    assert rrn(a, res.x, b) == res.final_rrn


def test_iteration_cap_reports_not_converged():
    a = gen_convdiff(20, 20, 1.0)
    b, _ = generate_problem(a)
    res = gmres_solve(a, b, cfg=GmresConfig(restart=5, max_total_iterations=12))
    assert not res.converged and res.total_iterations == 12
    assert res.residual_history[-1].explicit and res.final_rrn > 1e-10


def test_zero_rhs():
    res = gmres_solve(CsrMatrix.from_dense(np.eye(3)), np.zeros(3))
    assert res.converged and res.total_iterations == 0 and np.all(res.x == 0)


def test_solve_is_deterministic():
    a = gen_convdiff(15, 15, 2.0)
    b, _ = generate_problem(a)
    cfg = GmresConfig(storage_format="frsz2-21", restart=20)
    r1, r2 = gmres_solve(a, b, cfg=cfg), gmres_solve(a, b, cfg=cfg)
    assert r1.x.tobytes() == r2.x.tobytes()
    assert [(h.iteration, h.rrn) for h in r1.residual_history] == [(h.iteration, h.rrn) for h in r2.residual_history]


@pytest.mark.parametrize("fmt", ["f32", "f16", "frsz2-16", "frsz2-32"])
def test_compressed_formats_still_converge(fmt):
    a = gen_convdiff(10, 10, 1.0)
    b, _ = generate_problem(a)
    res = gmres_solve(a, b, cfg=GmresConfig(storage_format=fmt, target_rrn=1e-8, restart=30))
    assert res.converged and rrn(a, res.x, b) <= 1e-8


def test_dimension_errors_and_singular_matrix():
    with pytest.raises(ValueError):
        gmres_solve(CsrMatrix.from_dense(np.eye(3)), np.ones(2))
    with pytest.raises(ValueError):
        gmres_solve(CsrMatrix.from_dense(np.ones((2, 3))), np.ones(2))
    # the zero matrix breaks down immediately with a zero pivot
    with pytest.raises(SolverBreakdown) as info:
        gmres_solve(CsrMatrix(2, 2, [0, 0, 0], [], []), np.ones(2))
    assert info.value.iteration >= 1
