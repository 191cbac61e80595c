"""First- and second-order approximations of the micro solution.

Both approximations are linear in the macro solution c0, so they are built as
sparse operators from macro nodal values to nodal values on the three fixed
domains (Omega^+, Omega^-, and the layer) of a micro grid:

    order 1, bulk   c0
    order 1, layer  c0^M(x1) + eps w1(x/eps) d1 c0^M(x1)
    order 2, bulk   c0 + eps psi(x2) w_bl(x/eps) d1 c0
    order 2, layer  order 1 + eps^2 w2(x/eps) d1 c0^M(x1)

Cell fields are sampled bilinearly at y = x/eps; with the cell resolution
equal to the micro resolution every sample lands on a node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cell_solver import AuxiliarySolutions
from .geometry import StructuredGrid
from .micro_solver import FixedDomains

SNAP = 1e-9  # relative distance below which a sample point is moved onto a node


def cutoff_psi(x_n, H: float) -> np.ndarray:
    """Smooth cutoff: 1 for |x_n| <= H/4, 0 for |x_n| >= 3H/4, quintic in between."""
    u = np.clip((np.abs(np.asarray(x_n, dtype=float)) - 0.25 * H) / (0.5 * H), 0.0, 1.0)
    return 1.0 - u**3 * (10.0 - 15.0 * u + 6.0 * u**2)


def _locate(coords: np.ndarray, x: np.ndarray):
    """Interval index and local coordinate in [0, 1] for points inside ``coords``."""
    k = np.searchsorted(coords, x, side="right") - 1
    k = np.clip(k, 0, len(coords) - 2)
    h = coords[k + 1] - coords[k]
    t = (x - coords[k]) / h
    t = np.where(np.abs(t) < SNAP, 0.0, t)
    t = np.where(np.abs(t - 1.0) < SNAP, 1.0, t)
    return k, t


def _periodic_locate(n: int, period: float, x: np.ndarray):
    s = np.mod(np.asarray(x, dtype=float), period) * (n / period)
    r = np.rint(s)
    s = np.where(np.abs(s - r) < SNAP, r, s)
    i = np.floor(s).astype(np.int64)
    return np.mod(i, n), s - i


def sample_matrix(grid: StructuredGrid, y1, y2, clamp: bool = False) -> sp.csr_matrix:
    """Bilinear interpolation from grid nodes to points; periodic in the first variable.

    Points outside the vertical extent raise ``ValueError`` unless ``clamp``,
    which extends the field constantly beyond the ends.
    """
    y1 = np.asarray(y1, dtype=float).ravel()
    y2 = np.asarray(y2, dtype=float).ravel()
    lo, hi = grid.x2[0], grid.x2[-1]
    tol = SNAP * max(1.0, hi - lo)
    if clamp:
        y2 = np.clip(y2, lo, hi)
    elif y2.size and (y2.min() < lo - tol or y2.max() > hi + tol):
        raise ValueError(f"sample points leave [{lo}, {hi}] in the second variable")
    i, s = _periodic_locate(grid.n1, grid.period, y1)
    k, t = _locate(grid.x2, np.clip(y2, lo, hi))
    ip = np.mod(i + 1, grid.n1)
    rows = np.repeat(np.arange(y1.size), 4)
    cols = np.stack([k * grid.n1 + i, k * grid.n1 + ip, (k + 1) * grid.n1 + i, (k + 1) * grid.n1 + ip], axis=1)
    vals = np.stack([(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t], axis=1)
    A = sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(y1.size, grid.num_nodes))
    A.eliminate_zeros()
    return A


def periodic_sample(grid: StructuredGrid, values, y1, y2, clamp: bool = False) -> np.ndarray:
    return sample_matrix(grid, y1, y2, clamp) @ np.asarray(values, dtype=float)


def _cubic_weights(t):
    """Lagrange weights of nodes -1, 0, 1, 2 at local coordinate t in [0, 1)."""
    return np.stack(
        [
            -t * (t - 1) * (t - 2) / 6,
            (t + 1) * (t - 1) * (t - 2) / 2,
            -(t + 1) * t * (t - 2) / 2,
            (t + 1) * t * (t - 1) / 6,
        ],
        axis=1,
    )


def macro_sampling_matrix(grid: StructuredGrid, x1, x2) -> sp.csr_matrix:
    """Periodic cubic Lagrange in x1, linear in x2; exact injection at nodes."""
    x1 = np.asarray(x1, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x2.size and (x2.min() < grid.x2[0] - SNAP or x2.max() > grid.x2[-1] + SNAP):
        raise ValueError("sample points outside the macro domain")
    i, s = _periodic_locate(grid.n1, grid.period, x1)
    k, t = _locate(grid.x2, np.clip(x2, grid.x2[0], grid.x2[-1]))
    wx = _cubic_weights(s)
    cols_x = np.mod(i[:, None] + np.arange(-1, 3)[None, :], grid.n1)
    cols = np.concatenate([k[:, None] * grid.n1 + cols_x, (k + 1)[:, None] * grid.n1 + cols_x], axis=1)
    vals = np.concatenate([wx * (1 - t)[:, None], wx * t[:, None]], axis=1)
    rows = np.repeat(np.arange(x1.size), 8)
    A = sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(x1.size, grid.num_nodes))
    A.eliminate_zeros()
    return A


@dataclass(eq=False)
class ApproximationOperator:
    """Sparse maps from macro nodal values to nodal values on the fixed domains."""

    order: int
    epsilon: float
    plus: sp.csr_matrix
    minus: sp.csr_matrix
    layer: sp.csr_matrix

    def apply(self, c0: np.ndarray) -> "ApproximationField":
        return ApproximationField(self.order, self.plus @ c0, self.minus @ c0, self.layer @ c0)


@dataclass
class ApproximationField:
    order: int
    plus: np.ndarray
    minus: np.ndarray
    layer: np.ndarray


def approximation_operator(
    macro_grid: StructuredGrid,
    D1: sp.csr_matrix,
    aux: AuxiliarySolutions,
    domains: FixedDomains,
    epsilon: float,
    H: float,
    order: int,
) -> ApproximationOperator:
    """Build the order-1 or order-2 approximation operator.

    ``D1`` is the tangential derivative on the macro grid; ``domains`` gives the
    node-exact fixed-domain grids of the micro problem at this epsilon.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    eps = float(epsilon)
    j = 0  # Sigma is one-dimensional: a single tangential direction

    def bulk(g: StructuredGrid, bl):
        X1, X2 = g.coordinates()
        P = macro_sampling_matrix(macro_grid, X1, X2)
        if order == 1:
            return P.tocsr()
        w = periodic_sample(bl.grid, bl.w, X1 / eps, X2 / eps, clamp=True)
        return (P + sp.diags(eps * cutoff_psi(X2, H) * w) @ P @ D1).tocsr()

    X1, X2 = domains.layer.coordinates()
    P_sigma = macro_sampling_matrix(macro_grid, X1, np.zeros_like(X1))
    w1 = periodic_sample(aux.cells.grid, aux.cells[j].w, X1 / eps, X2 / eps)
    layer = P_sigma + sp.diags(eps * w1) @ P_sigma @ D1
    if order == 2:
        w2 = periodic_sample(aux.cells.grid, aux.second[j].w, X1 / eps, X2 / eps)
        layer = layer + sp.diags(eps**2 * w2) @ P_sigma @ D1
    return ApproximationOperator(
        order=order,
        epsilon=eps,
        plus=bulk(domains.plus, aux.bl_plus[j]),
        minus=bulk(domains.minus, aux.bl_minus[j]),
        layer=layer.tocsr(),
    )


def build_capp1(c0, macro_grid, D1, aux, domains, epsilon, H) -> ApproximationField:
    return approximation_operator(macro_grid, D1, aux, domains, epsilon, H, 1).apply(c0)


def build_capp2(c0, macro_grid, D1, aux, domains, epsilon, H) -> ApproximationField:
    return approximation_operator(macro_grid, D1, aux, domains, epsilon, H, 2).apply(c0)


def interface_jumps(field: ApproximationField, domains: FixedDomains) -> dict:
    """Max |bulk - layer| on S_eps^+ and S_eps^- (after shifting the bulk back)."""
    n1 = domains.layer.n1
    return {
        "S+": float(np.max(np.abs(field.plus[:n1] - field.layer[-n1:]))),
        "S-": float(np.max(np.abs(field.minus[-n1:] - field.layer[:n1]))),
    }
