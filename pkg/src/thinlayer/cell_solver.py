"""Auxiliary problems on the reference cell Z and the truncated stripes Y^+-.

* first-order cell problems  ``-div(D^M (grad w + e_j)) = 0`` in Z, zero
  co-normal flux on S^+-, periodic in y1, zero mean;
* the effective interface tensor ``D* = 1/|Z| int D^M (grad w_k + e_k).(grad w_l + e_l)``;
* boundary layers ``-div(D^+- grad w) = 0`` on Y x (0, +-L) with the cell
  corrector's trace at y_n = 0 and a homogeneous Neumann truncation plane;
* second-order cell problems ``-div(D^M grad w) = 0`` in Z with the boundary
  layer's co-normal flux as Neumann data on S^+-.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .fem import PeriodicLine, Q1Space
from .geometry import CellGeometry, GeometryError, StripeGeometry, StructuredGrid, build_cell_grid, build_stripe_grid
from .numerics import SolveReport, SolverError, solve_cg

log = logging.getLogger(__name__)

CELL_TOL = 1e-11
# stripe solves feed exponentially small slab energies; solve as tight as CG allows
STRIPE_TOL = 1e-14
# slab energies below this fraction of the largest are treated as round-off
ENERGY_FLOOR = 1e-22
COMPATIBILITY_LIMIT = 1e-6


def layer_coefficient_at_quad(D_M, grid: StructuredGrid) -> np.ndarray:
    """Evaluate a callable ``D_M(y1, y2) -> (..., 2, 2)`` (or scalar field) at the quadrature points."""
    y1, y2 = Q1Space(grid).quad_points
    D = np.asarray(D_M(y1, y2), dtype=float)
    if D.ndim == 1:
        D = D[:, None, None] * np.eye(2)
    return D


@dataclass
class CellSolution:
    """Solution of one first-order cell problem."""

    j: int
    grid: StructuredGrid
    w: np.ndarray
    grad: np.ndarray  # at quadrature points, (num_quad, 2)
    mean: float
    report: SolveReport

    def trace(self, side: int) -> np.ndarray:
        """Values on S^+ (side=+1) or S^- (side=-1)."""
        return self.w[self.grid.row(self.grid.markers["S+" if side > 0 else "S-"])]


@dataclass
class CellSolutionSet:
    grid: StructuredGrid
    D_quad: np.ndarray
    solutions: list

    def __getitem__(self, j) -> CellSolution:
        return self.solutions[j]

    def __len__(self):
        return len(self.solutions)


@dataclass
class EffectiveTensor:
    D_star: np.ndarray
    min_eigenvalue: float
    asymmetry: float


@dataclass
class BoundaryLayerSolution:
    orientation: int
    j: int
    stripe: StripeGeometry
    grid: StructuredGrid
    w: np.ndarray
    trace: np.ndarray
    slab_energies: np.ndarray
    omega: float
    ratio: float
    report: SolveReport
    loads: np.ndarray  # consistent co-normal flux loads on the trace nodes
    diagnostics: list = field(default_factory=list)


@dataclass
class SecondCellSolution:
    j: int
    grid: StructuredGrid
    w: np.ndarray
    mean: float
    flux_plus: np.ndarray
    flux_minus: np.ndarray
    compatibility_defect: float
    report: SolveReport
    diagnostics: list = field(default_factory=list)


def _check(report: SolveReport, what: str):
    if not report.converged:
        raise SolverError(f"{what}: CG did not converge (residual {report.residual:.3e})", report)


def solve_cell_first_order(D_M, grid: StructuredGrid, j: int = 0, D_quad=None) -> CellSolution:
    """First-order cell problem for tangential direction ``j`` (0-based; only j=0 for n=2)."""
    if j != 0:
        raise ValueError("n = 2: the only tangential direction is j = 0")
    V = Q1Space(grid)
    D = layer_coefficient_at_quad(D_M, grid) if D_quad is None else D_quad
    K = V.stiffness(D)
    # rhs: -int D e_j . grad phi
    flux = D[:, :, j]
    b = -(V.G1.T @ (V.weights * flux[:, 0]) + V.G2.T @ (V.weights * flux[:, 1]))
    m = V.nodal_weights()
    w, report = solve_cg(K, b, tol=CELL_TOL, nullspace="constants", weights=m)
    _check(report, "first-order cell problem")
    return CellSolution(j, grid, w, V.gradient(w), float(m @ w), report)


def solve_cells(D_M, cell: CellGeometry) -> CellSolutionSet:
    grid = build_cell_grid(cell)
    D = layer_coefficient_at_quad(D_M, grid)
    return CellSolutionSet(grid, D, [solve_cell_first_order(D_M, grid, 0, D_quad=D)])


def effective_tensor(D_M, cells: CellSolutionSet) -> EffectiveTensor:
    """Quadrature of ``1/|Z| int D^M (grad w_k + e_k).(grad w_l + e_l)``."""
    grid = cells.grid
    V = Q1Space(grid)
    D = cells.D_quad if D_M is None else layer_coefficient_at_quad(D_M, grid)
    for sol in cells.solutions:
        if sol.grid is not grid and sol.grid.num_nodes != grid.num_nodes:
            raise GeometryError("cell solutions live on a different grid")
    m = len(cells)
    fields = []
    for k, sol in enumerate(cells.solutions):
        g = sol.grad.copy()
        g[:, k] += 1.0
        fields.append(g)
    out = np.empty((m, m))
    area = grid.measure()
    for k in range(m):
        for l in range(m):
            integrand = np.einsum("qa,qab,qb->q", fields[l], D, fields[k])
            out[k, l] = V.weights @ integrand / area
    asym = float(np.max(np.abs(out - out.T))) if m > 1 else 0.0
    out = 0.5 * (out + out.T)
    return EffectiveTensor(out, float(np.linalg.eigvalsh(out).min()), asym)


def slab_energies(grid: StructuredGrid, w: np.ndarray, D, resolution: int) -> np.ndarray:
    """``||D^{1/2} grad w||^2`` over unit slabs ordered away from the trace plane."""
    V = Q1Space(grid)
    g = V.gradient(w)
    Dq = np.broadcast_to(np.asarray(D, float), (V.num_quad, 2, 2))
    dens = V.weights * np.einsum("qa,qab,qb->q", g, Dq, g)
    per_elem = dens.reshape(-1, 4).sum(axis=1)
    per_row = per_elem.reshape(grid.n2 - 1, grid.n1).sum(axis=1)
    per_slab = per_row.reshape(-1, resolution).sum(axis=1)
    if grid.markers["trace"] != 0:  # minus orientation: trace at the top
        per_slab = per_slab[::-1]
    return per_slab


def decay_rate(energies, floor: float = ENERGY_FLOOR):
    """Fit ``E_k ~ exp(-2 omega k)`` over slabs 2..L-1.

    Returns ``(omega, ratio, diagnostics)``; ``ratio`` is the largest
    ``E_{k+1}/E_k`` among resolved slabs. Slabs whose energy is below
    ``floor * max(E)`` are round-off and are left out of the fit. All-zero
    energies give ``omega = inf``.
    """
    E = np.asarray(energies, dtype=float)
    diagnostics = []
    if not np.any(E > 0):
        return math.inf, 0.0, diagnostics
    resolved = E > floor * E.max()
    ks = np.arange(1, len(E) + 1)
    window = (ks >= 2) & (ks <= len(E) - 1) & resolved
    # k is 1-based slab number; fit log E_k = a - 2 omega k
    if window.sum() >= 2:
        slope = np.polyfit(ks[window], np.log(E[window]), 1)[0]
    else:
        # decay too fast to resolve more than one interior slab: use the first resolved pair
        idx = np.flatnonzero(resolved)
        if len(idx) < 2:
            return math.inf, 0.0, diagnostics
        slope = math.log(E[idx[1]] / E[idx[0]]) / (idx[1] - idx[0])
    omega = -slope / 2.0
    pairs = resolved[:-1] & resolved[1:]
    ratios = E[1:][pairs] / E[:-1][pairs]
    ratio = float(ratios.max()) if len(ratios) else 0.0
    if np.any(ratios >= 1.0):
        diagnostics.append("slab energies are not monotonically decreasing")
    if ratio >= 1.0:
        diagnostics.append(f"no exponential decay (ratio {ratio:.3g} >= 1); increase the stripe length")
    return float(omega), ratio, diagnostics


def solve_boundary_layer(D_bulk, trace, stripe: StripeGeometry, j: int = 0) -> BoundaryLayerSolution:
    """Boundary layer on the truncated stripe with Dirichlet ``trace`` at y_n = 0."""
    grid = build_stripe_grid(stripe)
    trace = np.asarray(trace, dtype=float)
    if trace.shape != (grid.n1,):
        raise GeometryError(f"trace has {trace.shape} values, stripe has {grid.n1} tangential nodes")
    D = np.asarray(D_bulk, dtype=float)
    V = Q1Space(grid)
    K = V.stiffness(D)
    bnodes = grid.row(grid.markers["trace"])
    free = np.setdiff1d(np.arange(grid.num_nodes), bnodes)
    w = np.zeros(grid.num_nodes)
    w[bnodes] = trace
    Kff = K[free][:, free]
    rhs = -(K[free][:, bnodes] @ trace)
    # start from the trace extended constantly: exact when the trace is constant
    x0 = np.tile(trace, grid.n2 - 1)
    x, report = solve_cg(Kff, rhs, tol=STRIPE_TOL, x0=x0)
    if not report.converged and report.residual > 1e-10:
        raise SolverError(f"boundary layer: CG did not converge (residual {report.residual:.3e})", report)
    w[free] = x
    E = slab_energies(grid, w, D, stripe.resolution)
    omega, ratio, diags = decay_rate(E)
    loads = (K @ w)[bnodes]
    for d in diags:
        log.warning("boundary layer (orientation %+d): %s", stripe.orientation, d)
    return BoundaryLayerSolution(stripe.orientation, j, stripe, grid, w, trace, E, omega, ratio, report, loads, diags)


def boundary_flux(bl: BoundaryLayerSolution, D_bulk=None) -> np.ndarray:
    """Co-normal flux ``-D grad w . nu`` on the trace plane, ``nu`` pointing out of the layer.

    Computed variationally: the residual of the stripe system at the Dirichlet
    nodes is the consistent flux load, which is turned into a nodal profile
    with the 1D boundary mass matrix. ``D_bulk`` defaults to the tensor used
    for the solve.
    """
    loads = bl.loads
    if D_bulk is not None:
        V = Q1Space(bl.grid)
        K = V.stiffness(np.asarray(D_bulk, float))
        loads = (K @ bl.w)[bl.grid.row(bl.grid.markers["trace"])]
    line = PeriodicLine(bl.grid.n1, bl.grid.h1)
    M = line.mass().toarray()
    return np.linalg.solve(M, loads)


def _flux_loads(flux_profile_or_loads, grid: StructuredGrid, is_load: bool) -> np.ndarray:
    line = PeriodicLine(grid.n1, grid.h1)
    v = np.asarray(flux_profile_or_loads, dtype=float)
    if is_load:
        if v.shape != (grid.n1,):
            raise GeometryError("flux loads do not match the cell grid")
        return v
    if v.shape != (grid.n1,):
        # resample a periodic nodal profile onto the cell's tangential nodes
        xs = np.arange(len(v)) / len(v)
        v = np.interp(np.arange(grid.n1) / grid.n1, np.append(xs, 1.0), np.append(v, v[0]))
    return line.mass() @ v


def solve_cell_second_order(D_M, grid: StructuredGrid, flux_plus, flux_minus, j: int = 0, loads: bool = False, D_quad=None):
    """Second-order cell problem with Neumann data ``-D^M grad w . nu = flux`` on S^+-.

    ``flux_plus``/``flux_minus`` are nodal profiles (or, with ``loads=True``,
    consistent boundary loads such as :attr:`BoundaryLayerSolution.loads`).
    """
    V = Q1Space(grid)
    D = layer_coefficient_at_quad(D_M, grid) if D_quad is None else D_quad
    K = V.stiffness(D)
    b = np.zeros(grid.num_nodes)
    Lp = _flux_loads(flux_plus, grid, loads)
    Lm = _flux_loads(flux_minus, grid, loads)
    b[grid.row(grid.markers["S+"])] -= Lp
    b[grid.row(grid.markers["S-"])] -= Lm
    defect = float(abs(b.sum()))
    diags = []
    scale = max(np.abs(Lp).sum() + np.abs(Lm).sum(), 1e-300)
    if defect > COMPATIBILITY_LIMIT * max(scale, 1.0):
        diags.append(f"flux data inconsistent: compatibility defect {defect:.3e}")
        log.warning("second-order cell problem: %s", diags[-1])
    m = V.nodal_weights()
    w, report = solve_cg(K, b, tol=CELL_TOL, nullspace="constants", weights=m)
    _check(report, "second-order cell problem")
    return SecondCellSolution(j, grid, w, float(m @ w), np.asarray(flux_plus), np.asarray(flux_minus), defect, report, diags)


@dataclass
class AuxiliarySolutions:
    """Everything the correctors need, computed once per scenario and resolution."""

    cells: CellSolutionSet
    tensor: EffectiveTensor
    bl_plus: list
    bl_minus: list
    second: list

    @property
    def D_star(self) -> np.ndarray:
        return self.tensor.D_star


def solve_auxiliary(D_M, D_plus, D_minus, resolution: int, stripe_length: int) -> AuxiliarySolutions:
    cells = solve_cells(D_M, CellGeometry(resolution))
    tensor = effective_tensor(None, cells)
    bl_plus, bl_minus, second = [], [], []
    for sol in cells.solutions:
        bp = solve_boundary_layer(D_plus, sol.trace(+1), StripeGeometry(stripe_length, resolution, +1), sol.j)
        bm = solve_boundary_layer(D_minus, sol.trace(-1), StripeGeometry(stripe_length, resolution, -1), sol.j)
        w2 = solve_cell_second_order(None, cells.grid, bp.loads, bm.loads, sol.j, loads=True, D_quad=cells.D_quad)
        bl_plus.append(bp)
        bl_minus.append(bm)
        second.append(w2)
    return AuxiliarySolutions(cells, tensor, bl_plus, bl_minus, second)
