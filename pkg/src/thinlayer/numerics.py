"""Sparse assembly and a Jacobi-preconditioned conjugate-gradient solver.

Singular pure-Neumann/periodic systems are handled by projection: the
right-hand side is made consistent by removing its constant component and
the iterate is pinned to (weighted) mean zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

SparseMatrix = sp.csr_matrix


class SolverError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    tol: float
    history: list = field(default_factory=list, repr=False)


def assemble(triplets, dims) -> SparseMatrix:
    """CSR matrix from ``(row, col, value)`` triplets; duplicates are summed."""
    nrows, ncols = dims
    if len(triplets) == 0:
        return sp.csr_matrix((nrows, ncols))
    rows, cols, vals = (np.asarray(a) for a in zip(*triplets))
    if rows.min() < 0 or cols.min() < 0 or rows.max() >= nrows or cols.max() >= ncols:
        raise IndexError(f"triplet index out of range for dims {dims}")
    A = sp.coo_matrix((vals.astype(float), (rows, cols)), shape=(nrows, ncols)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def mean_zero(x, weights=None):
    """Remove the (weighted) mean of ``x``."""
    if weights is None:
        return x - x.mean()
    return x - np.dot(weights, x) / weights.sum()


MAX_RESTARTS = 3


def solve_cg(
    A,
    b,
    tol: float = 1e-10,
    maxit: int | None = None,
    nullspace: str | None = None,
    weights=None,
    x0=None,
    constant_correction: bool = False,
    record_history: bool = False,
):
    """Preconditioned CG for symmetric positive (semi-)definite ``A``.

    nullspace:
        ``None`` for a regular system, ``"constants"`` when the kernel of ``A``
        is spanned by the constant vector. ``weights`` then defines the
        weighted mean that is pinned to zero (``int w = 0`` with lumped
        quadrature weights); without weights the plain mean is used.
    constant_correction:
        Galerkin correction of the iterate in the direction of the constant
        vector before and after iterating. For ``M + dt K`` with ``K 1 = 0``
        this makes ``1.(b - A x) = 0``, i.e. discrete mass is conserved to
        round-off rather than to the solver tolerance.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    maxit = 10 * n + 100 if maxit is None else maxit
    singular = nullspace is not None
    if singular and nullspace != "constants":
        raise ValueError(f"unknown nullspace {nullspace!r}")
    if singular:
        b = b - b.mean()

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if singular:
        x = mean_zero(x, weights)

    ones = np.ones(n)
    A1 = A @ ones if constant_correction else None
    one_A_one = float(ones @ A1) if constant_correction else 0.0

    def correct(x, r):
        if constant_correction and one_A_one > 0:
            alpha = r.sum() / one_A_one
            x = x + alpha
            r = r - alpha * A1
        return x, r

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True, tol, [0.0] if record_history else [])

    diag = A.diagonal()
    inv_diag = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    history = []
    it = 0
    # the recursively updated residual can drift from b - A x near the
    # tolerance; restart from the true residual a few times if that happens
    for _restart in range(MAX_RESTARTS + 1):
        r = b - A @ x
        x, r = correct(x, r)
        res = np.linalg.norm(r) / bnorm
        if record_history:
            history.append(res)
        if res <= tol or it >= maxit:
            break
        z = inv_diag * r
        p = z.copy()
        rz = r @ z
        while it < maxit:
            Ap = A @ p
            pAp = p @ Ap
            if pAp <= 0:
                break
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            it += 1
            if singular and it % 50 == 0:
                x = mean_zero(x, weights)
            res = np.linalg.norm(r) / bnorm
            if record_history:
                history.append(res)
            if res <= tol:
                break
            z = inv_diag * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        if singular:
            x = mean_zero(x, weights)

    if singular:
        x = mean_zero(x, weights)
    r = b - A @ x
    x, r = correct(x, r)
    res = np.linalg.norm(r) / bnorm
    return x, SolveReport(it, float(res), bool(res <= tol), tol, history)


def solve_dense_oracle(A, b, mean_zero_weights=None) -> np.ndarray:
    """Dense LU solve with partial pivoting; test oracle only.

    With ``mean_zero_weights`` the singular Neumann matrix is bordered by the
    constraint ``w.x = 0`` and a Lagrange multiplier.
    """
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("oracle needs a square matrix")
    n = A.shape[0]
    if mean_zero_weights is not None:
        w = np.asarray(mean_zero_weights, dtype=float)
        A = np.block([[A, w[:, None]], [w[None, :], np.zeros((1, 1))]])
        b = np.concatenate([b - b.mean(), [0.0]])
    if np.linalg.cond(A) > 1e14:
        raise np.linalg.LinAlgError("matrix is numerically singular")
    x = np.linalg.solve(A, b)
    return x[:n]
