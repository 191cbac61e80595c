"""The microscopic problem on Sigma x (-eps-H, H+eps) with an eps-periodic layer.

One continuous Q1 field covers all three subdomains, so continuity across
S_eps^+- is built in and the flux condition is the natural one of the weak
form. Layer elements carry the weight 1/eps on mass, stiffness and reaction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .fem import Q1Space, QUAD_ETA, QUAD_XI
from .geometry import GeometryError, LayerGeometry, Region, StructuredGrid, build_micro_grid
from .imex import ImexEuler, time_grid
from .scenario import Scenario


@dataclass
class MicroState:
    t: float
    c: np.ndarray


@dataclass
class MicroTrajectory:
    times: list
    states: list
    mass: list
    iterations: list
    accumulators: dict = field(default_factory=dict)

    def mass_drift(self) -> float:
        m = np.asarray(self.mass)
        return float(np.max(np.abs(m - m[0])) / max(abs(m[0]), 1e-300))


class MicroProblem:
    def __init__(self, scenario: Scenario, epsilon, per_period_resolution: int):
        self.scenario = scenario
        self.geom: LayerGeometry = scenario.geometry(epsilon)
        self.N = int(per_period_resolution)
        self.grid = build_micro_grid(self.geom, self.N)
        self.V = Q1Space(self.grid)
        g = self.grid
        er = g.element_regions()
        self.element_weight = np.where(er == Region.LAYER, float(self.geom.inv_eps), 1.0)
        self.quad_region = np.repeat(er, 4)
        self.y1, self.y2 = self._fast_variables()
        self.M, self.K = self.assemble()
        self.stepper = ImexEuler(self.M, self.K, self.reaction)
        self.ones_mass = self.M @ np.ones(g.num_nodes)

    @property
    def epsilon(self) -> float:
        return self.geom.epsilon

    def _fast_variables(self):
        """y = x/eps at the quadrature points, wrapped with integer arithmetic.

        Layer points get y2 in (-1, 1); bulk points get y2 wrapped into (0, 1).
        """
        g, N = self.grid, self.N
        i1, i2, q = self.V.quad_local
        y1 = (np.mod(i1, N) + QUAD_XI[q]) / N
        rel = i2 - g.markers["Sigma"]  # element row counted from x2 = 0
        layer = self.quad_region == Region.LAYER
        y2 = np.where(layer, (rel + QUAD_ETA[q]) / N, (np.mod(rel, N) + QUAD_ETA[q]) / N)
        return y1, y2

    def assemble(self):
        s = self.scenario
        layer = self.quad_region == Region.LAYER
        plus = self.quad_region == Region.BULK_PLUS
        D = np.empty((self.V.num_quad, 2, 2))
        D[plus] = s.D_plus
        D[~plus & ~layer] = s.D_minus
        D[layer] = s.layer_tensor(self.y1[layer], self.y2[layer])
        M = self.V.mass(self.element_weight)
        K = self.V.stiffness(D, self.element_weight)
        return M, K

    def reaction(self, t: float, c: np.ndarray) -> np.ndarray:
        s = self.scenario
        cq = self.V.B @ c
        out = np.empty_like(cq)
        for region, e in ((Region.BULK_PLUS, s.f_plus), (Region.BULK_MINUS, s.f_minus), (Region.LAYER, s.g_M)):
            sel = self.quad_region == region
            out[sel] = np.broadcast_to(
                ex.evaluate(e, {"t": t, "y1": self.y1[sel], "y2": self.y2[sel], "z": cq[sel]}), cq[sel].shape
            )
        return self.V.load(out, self.element_weight)

    def initial_state(self) -> MicroState:
        s, g, eps = self.scenario, self.grid, self.epsilon
        X1, X2 = g.coordinates()
        j = np.repeat(np.arange(g.n2), g.n1)
        lo, hi = g.markers["S-"], g.markers["S+"]
        c = np.empty(g.num_nodes)
        up, down, mid = j > hi, j < lo, (j >= lo) & (j <= hi)
        c[up] = np.broadcast_to(ex.evaluate(s.init_plus, {"x1": X1[up], "x2": X2[up] - eps}), (up.sum(),))
        c[down] = np.broadcast_to(ex.evaluate(s.init_minus, {"x1": X1[down], "x2": X2[down] + eps}), (down.sum(),))
        c[mid] = np.broadcast_to(ex.evaluate(s.init_M, {"x1": X1[mid]}), (mid.sum(),))
        return MicroState(0.0, c)

    def total_mass(self, c) -> float:
        """sum over +- of int c + (1/eps) int_layer c."""
        return float(self.ones_mass @ c)

    def step(self, state: MicroState, dt: float) -> MicroState:
        return MicroState(state.t + dt, self.stepper.step(state.t, state.c, dt))


def assemble_micro(scenario: Scenario, epsilon, per_period_resolution: int):
    p = MicroProblem(scenario, epsilon, per_period_resolution)
    return p.M, p.K


@dataclass(frozen=True, eq=False)
class FixedDomains:
    """Row ranges of the micro grid and the corresponding fixed-domain grids."""

    plus: StructuredGrid
    minus: StructuredGrid
    layer: StructuredGrid
    plus_nodes: np.ndarray
    minus_nodes: np.ndarray
    layer_nodes: np.ndarray


def fixed_domains(grid: StructuredGrid, geom: LayerGeometry) -> FixedDomains:
    """Grids of Omega^+ = Sigma x (0,H), Omega^- and Omega_eps^M, node-exact with the micro grid."""
    lo, hi, top = grid.markers["S-"], grid.markers["S+"], grid.markers["top"]
    sig = grid.markers["Sigma"]
    units = round(1.0 / (grid.x2[sig + 1] - grid.x2[sig]))
    N = hi - sig
    if abs((hi - sig) / units - geom.epsilon) > 1e-14 or units != geom.inv_eps * N:
        raise GeometryError("bulk spacing does not divide epsilon; cannot shift node-exactly")

    def grid_for(j0, j1, shift_rows, region):
        x2 = (np.arange(j0, j1 + 1) - sig - shift_rows) / units
        return StructuredGrid(n1=grid.n1, period=grid.period, x2=x2, regions=np.full(j1 - j0, region))

    def nodes(j0, j1):
        return np.arange(j0 * grid.n1, (j1 + 1) * grid.n1)

    return FixedDomains(
        plus=grid_for(hi, top, N, Region.BULK_PLUS),
        minus=grid_for(0, lo, -N, Region.BULK_MINUS),
        layer=grid_for(lo, hi, 0, Region.LAYER),
        plus_nodes=nodes(hi, top),
        minus_nodes=nodes(0, lo),
        layer_nodes=nodes(lo, hi),
    )


def shift_to_fixed_domains(state, problem_or_grid, geom: LayerGeometry | None = None):
    """Relabel a micro field onto Omega^+, Omega^- (shifted by -+eps) and the layer.

    Returns ``(plus, minus, layer)`` value arrays; the grids are available from
    :func:`fixed_domains`.
    """
    if isinstance(problem_or_grid, MicroProblem):
        grid, geom = problem_or_grid.grid, problem_or_grid.geom
    else:
        grid = problem_or_grid
    c = state.c if hasattr(state, "c") else np.asarray(state)
    fd = fixed_domains(grid, geom)
    return c[fd.plus_nodes], c[fd.minus_nodes], c[fd.layer_nodes]


def unshift_from_fixed_domains(plus, minus, layer, grid: StructuredGrid, geom: LayerGeometry) -> np.ndarray:
    fd = fixed_domains(grid, geom)
    c = np.empty(grid.num_nodes)
    c[fd.minus_nodes] = minus
    c[fd.plus_nodes] = plus
    c[fd.layer_nodes] = layer
    return c


def solve_micro(scenario: Scenario, epsilon, per_period_resolution: int, dt: float, snapshot_times=None, callback=None):
    """IMEX Euler to ``scenario.T``. ``callback(k, t, c)`` is called at every time level."""
    problem = MicroProblem(scenario, epsilon, per_period_resolution)
    n, dt = time_grid(scenario.T, dt)
    wanted = {0, n} | {int(round(t / dt)) for t in (snapshot_times or ())}
    state = problem.initial_state()
    traj = MicroTrajectory([], [], [problem.total_mass(state.c)], [])
    for k in range(n + 1):
        if callback is not None:
            callback(k, k * dt, state.c)
        if k in wanted:
            traj.times.append(k * dt)
            traj.states.append(MicroState(k * dt, state.c.copy()))
        if k < n:
            try:
                state = problem.step(state, dt)
            except Exception as err:
                raise type(err)(f"micro step {k}: {err}") from err
            state.t = (k + 1) * dt
            traj.mass.append(problem.total_mass(state.c))
    traj.iterations = list(problem.stepper.iterations)
    return traj
