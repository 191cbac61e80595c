"""The homogenized bulk-interface problem on Sigma x (-H, H).

Bulk and interface unknowns share the nodes of the row x2 = 0, so
``c_plus = c_minus = c_M`` on Sigma holds by construction. The interface
equation enters through |Z|-weighted 1D mass and ``|Z| D*`` stiffness blocks
on that row; the flux-jump condition is the natural condition of this
combined weak form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import expr as ex
from .fem import PeriodicLine, Q1Space, embed
from .geometry import Region, StructuredGrid, build_macro_grid
from .imex import ImexEuler, time_grid
from .scenario import Scenario

CELL_MEASURE = 2.0  # |Z|
Y_LATTICE = 8  # midpoints per direction for cell averages of reactions


def _midpoints(n, lo, hi):
    return lo + (hi - lo) * (np.arange(n) + 0.5) / n


def cell_average(e: ex.Expression, t: float, z, y2_range=(0.0, 1.0)) -> np.ndarray:
    """Mean over the y-cell of ``e(t, y, z)`` on a fixed midpoint lattice."""
    z = np.asarray(z, dtype=float)
    if not e.depends_on("y1", "y2"):
        return np.broadcast_to(ex.evaluate(e, {"t": t, "y1": 0.0, "y2": 0.0, "z": z}), z.shape)
    y1 = _midpoints(Y_LATTICE, 0.0, 1.0)
    y2 = _midpoints(Y_LATTICE, *y2_range)
    Y1, Y2 = (a.ravel() for a in np.meshgrid(y1, y2, indexing="ij"))
    acc = np.zeros(z.shape)
    for a, b in zip(Y1, Y2):
        acc += ex.evaluate(e, {"t": t, "y1": a, "y2": b, "z": z})
    return acc / len(Y1)


@dataclass
class MacroState:
    t: float
    c: np.ndarray
    grid: StructuredGrid = field(repr=False)

    @property
    def sigma_row(self) -> int:
        return self.grid.markers["Sigma"]

    @property
    def c_M(self) -> np.ndarray:
        return self.c[self.grid.row(self.sigma_row)]

    @property
    def c_plus(self) -> np.ndarray:
        """Rows x2 in [0, H], shape (rows, n1)."""
        return self.c.reshape(self.grid.n2, self.grid.n1)[self.sigma_row :]

    @property
    def c_minus(self) -> np.ndarray:
        """Rows x2 in [-H, 0], shape (rows, n1)."""
        return self.c.reshape(self.grid.n2, self.grid.n1)[: self.sigma_row + 1]


def tangential_derivative(grid: StructuredGrid) -> sp.csr_matrix:
    """Second-order periodic central difference in x1, row by row."""
    n = grid.num_nodes
    idx = np.arange(n)
    h = grid.h1
    return sp.csr_matrix(
        (np.concatenate([np.full(n, 0.5 / h), np.full(n, -0.5 / h)]),
         (np.concatenate([idx, idx]), np.concatenate([grid.right(idx), grid.left(idx)]))),
        shape=(n, n),
    )


@dataclass
class MacroTrajectory:
    times: list
    states: list
    dx1: list  # tangential derivative fields per snapshot (full grid vectors)
    mass: list  # weighted total mass per step
    iterations: list

    def mass_drift(self) -> float:
        m = np.asarray(self.mass)
        return float(np.max(np.abs(m - m[0])) / max(abs(m[0]), 1e-300))


class MacroProblem:
    """Assembled limit problem; ``step`` advances one IMEX Euler step."""

    def __init__(self, scenario: Scenario, D_star, cells_per_unit: int, grid: StructuredGrid | None = None):
        self.scenario = scenario
        self.D_star = np.atleast_2d(np.asarray(D_star, dtype=float))
        self.grid = grid or build_macro_grid(scenario.H, scenario.sigma_len, cells_per_unit)
        g = self.grid
        self.V = Q1Space(g)
        self.line = PeriodicLine(g.n1, g.h1)
        self.sigma_nodes = g.row(g.markers["Sigma"])
        # shared-node indexing: the Sigma row is the top row of Omega^- and bottom row of Omega^+
        er = g.element_regions()
        rows = g.element_rows()
        assert np.all(rows[er == Region.BULK_MINUS] < g.markers["Sigma"])
        assert np.all(rows[er == Region.BULK_PLUS] >= g.markers["Sigma"])
        self.E = embed(g.num_nodes, self.sigma_nodes)
        self.M, self.K = self.assemble()
        self.D1 = tangential_derivative(g)
        self._quad_region = np.repeat(er, 4)
        self.stepper = ImexEuler(self.M, self.K, self.reaction)
        self.ones_mass = self.M @ np.ones(g.num_nodes)

    def assemble(self):
        """Global mass and stiffness with |Z|-weighted interface blocks."""
        V, g, E = self.V, self.grid, self.E
        regions = np.repeat(g.element_regions(), 4)
        D = np.where(
            (regions == Region.BULK_PLUS)[:, None, None], self.scenario.D_plus[None], self.scenario.D_minus[None]
        )
        M = V.mass() + CELL_MEASURE * (E @ self.line.mass() @ E.T)
        K = V.stiffness(D) + CELL_MEASURE * (E @ self.line.stiffness(self.D_star[0, 0]) @ E.T)
        return M.tocsr(), K.tocsr()

    def reaction(self, t: float, c: np.ndarray) -> np.ndarray:
        s = self.scenario
        cq = self.V.B @ c
        fq = np.empty_like(cq)
        plus = self._quad_region == Region.BULK_PLUS
        fq[plus] = cell_average(s.f_plus, t, cq[plus])
        fq[~plus] = cell_average(s.f_minus, t, cq[~plus])
        load = self.V.load(fq)
        cl = self.line.B @ c[self.sigma_nodes]
        gq = CELL_MEASURE * cell_average(s.g_M, t, cl, y2_range=(-1.0, 1.0))
        return load + self.E @ self.line.load(gq)

    def initial_state(self) -> MacroState:
        s, g = self.scenario, self.grid
        X1, X2 = g.coordinates()
        c = np.where(
            X2 > 0,
            np.broadcast_to(ex.evaluate(s.init_plus, {"x1": X1, "x2": X2}), X1.shape),
            np.broadcast_to(ex.evaluate(s.init_minus, {"x1": X1, "x2": X2}), X1.shape),
        ).astype(float)
        c[self.sigma_nodes] = np.broadcast_to(ex.evaluate(s.init_M, {"x1": g.x1}), (g.n1,))
        return MacroState(0.0, c, g)

    def total_mass(self, c) -> float:
        """sum over +- of int c + |Z| int_Sigma c_M."""
        return float(self.ones_mass @ c)

    def step(self, state: MacroState, dt: float) -> MacroState:
        return MacroState(state.t + dt, self.stepper.step(state.t, state.c, dt), self.grid)


def assemble_macro(scenario: Scenario, D_star, cells_per_unit: int):
    p = MacroProblem(scenario, D_star, cells_per_unit)
    return p.M, p.K


def step_macro(problem: MacroProblem, state: MacroState, dt: float) -> MacroState:
    return problem.step(state, dt)


def solve_macro(scenario: Scenario, D_star, dt: float, snapshot_times=None, cells_per_unit: int = 32) -> MacroTrajectory:
    """Run to ``scenario.T``; snapshots are taken at the steps nearest the requested times."""
    problem = MacroProblem(scenario, D_star, cells_per_unit)
    n, dt = time_grid(scenario.T, dt)
    wanted = {0, n} | {int(round(t / dt)) for t in (snapshot_times or ())}
    state = problem.initial_state()
    traj = MacroTrajectory([], [], [], [problem.total_mass(state.c)], [])
    for k in range(n + 1):
        if k in wanted:
            traj.times.append(k * dt)
            traj.states.append(MacroState(k * dt, state.c.copy(), problem.grid))
            traj.dx1.append(problem.D1 @ state.c)
        if k < n:
            state = problem.step(state, dt)
            state.t = (k + 1) * dt
            traj.mass.append(problem.total_mass(state.c))
    traj.iterations = list(problem.stepper.iterations)
    return traj
