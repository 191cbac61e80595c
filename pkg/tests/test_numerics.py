import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from thinlayer.fem import PeriodicLine
from thinlayer.numerics import assemble, mean_zero, solve_cg, solve_dense_oracle


def test_assemble_sums_duplicates():
    assert assemble([(0, 0, 1.0), (0, 0, 1.0)], (1, 1)).toarray().tolist() == [[2.0]]


def test_assemble_empty_and_single_entry():
    assert assemble([], (2, 2)).nnz == 0
    A = assemble([(1, 0, 3.0)], (2, 2))
    assert A.toarray().tolist() == [[0.0, 0.0], [3.0, 0.0]]


def test_assemble_csr_invariants():
    rng = np.random.default_rng(0)
    trip = [(int(i), int(j), float(v)) for i, j, v in zip(rng.integers(0, 5, 40), rng.integers(0, 6, 40), rng.normal(size=40))]
    A = assemble(trip, (5, 6))
    assert np.all(np.diff(A.indptr) >= 0)
    for r in range(5):
        cols = A.indices[A.indptr[r] : A.indptr[r + 1]]
        assert np.all(np.diff(cols) > 0)
    dense = np.zeros((5, 6))
    for i, j, v in trip:
        dense[i, j] += v
    np.testing.assert_allclose(A.toarray(), dense, atol=1e-14)


def test_assemble_rejects_out_of_range():
    with pytest.raises(IndexError):
        assemble([(2, 0, 1.0)], (2, 2))


def test_cg_identity():
    x, rep = solve_cg(sp.identity(3, format="csr"), np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(x, [1, 2, 3])
    assert rep.converged and rep.iterations <= 1


def _neumann_1d(n=3):
    main = np.full(n, 2.0)
    main[[0, -1]] = 1.0
    return sp.diags([main, -np.ones(n - 1), -np.ones(n - 1)], [0, 1, -1], format="csr")


def test_cg_neumann_mean_zero_matches_oracle():
    A = _neumann_1d()
    b = np.array([1.0, -2.0, 1.0])
    x, rep = solve_cg(A, b, nullspace="constants")
    assert rep.converged
    assert abs(x.mean()) < 1e-14
    np.testing.assert_allclose(x, solve_dense_oracle(A, b, mean_zero_weights=np.ones(3)), atol=1e-12)


def test_cg_zero_rhs_singular():
    x, rep = solve_cg(_neumann_1d(), np.zeros(3), nullspace="constants")
    assert np.all(x == 0) and rep.converged


def test_dense_oracle_examples():
    np.testing.assert_allclose(solve_dense_oracle(np.array([[2.0, 0], [0, 4.0]]), [2.0, 4.0]), [1, 1])
    H = np.array([[1 / (i + j + 1) for j in range(3)] for i in range(3)])
    np.testing.assert_allclose(solve_dense_oracle(H, H.sum(axis=1)), [1, 1, 1], rtol=1e-12)
    with pytest.raises(np.linalg.LinAlgError):
        solve_dense_oracle(np.ones((2, 2)), [1.0, 1.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 60), st.integers(0, 2**31 - 1))
def test_cg_matches_oracle_on_random_spd(n, seed):
    rng = np.random.default_rng(seed)
    Q = rng.normal(size=(n, n))
    A = Q @ Q.T + n * np.eye(n)
    b = rng.normal(size=n)
    x, rep = solve_cg(sp.csr_matrix(A), b, tol=1e-13)
    ref = solve_dense_oracle(A, b)
    assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref)


def test_cg_monotone_on_discrete_laplacian():
    """Residual history of the periodic 1D Helmholtz-type system used in time steps."""
    line = PeriodicLine(64, 1 / 64)
    A = (line.mass() + 1e-3 * line.stiffness()).tocsr()
    b = line.mass() @ np.cos(2 * np.pi * np.arange(64) / 64)
    _, rep = solve_cg(A, b, record_history=True)
    h = np.array(rep.history)
    assert rep.converged
    assert np.all(np.diff(h) <= 1e-14)


def test_cg_energy_error_is_monotone():
    """The A-norm of the error decreases for every SPD system (the general CG guarantee)."""
    rng = np.random.default_rng(3)
    n = 40
    Q = rng.normal(size=(n, n))
    A = Q @ Q.T + np.diag(rng.uniform(0.1, 10, n))
    b = rng.normal(size=n)
    xs = np.linalg.solve(A, b)
    errs = []
    for k in range(1, 25):
        x, _ = solve_cg(sp.csr_matrix(A), b, tol=1e-30, maxit=k)
        e = x - xs
        errs.append(e @ A @ e)
    assert np.all(np.diff(errs) <= 1e-12 * errs[0])


def test_mean_zero_projection_idempotent():
    rng = np.random.default_rng(1)
    x, w = rng.normal(size=20), rng.uniform(0.5, 2, 20)
    once = mean_zero(x, w)
    np.testing.assert_allclose(mean_zero(once, w), once, atol=1e-15)
    assert abs(w @ once) < 1e-13


def test_constant_correction_conserves_mass():
    line = PeriodicLine(16, 1 / 16)
    M, K = line.mass().tocsr(), line.stiffness().tocsr()
    A = (M + 0.1 * K).tocsr()
    b = M @ np.sin(np.arange(16.0))
    x, _ = solve_cg(A, b, tol=1e-6, constant_correction=True)
    assert abs(np.ones(16) @ (b - A @ x)) < 1e-15 * np.abs(b).sum()
