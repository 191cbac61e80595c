"""Composite error norms, epsilon sweeps and convergence-rate fits.

For each epsilon the error of the order-1 and order-2 approximations is
measured at every time level in the H^1 norm of each fixed domain, integrated
in time with the trapezoidal rule, and combined as

    composite = ||e^+|| + ||e^-|| + eps^{-1/2} ||e^M||.

The macro problem and all micro problems of a sweep advance in lockstep, so
no trajectory is ever stored.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .cell_solver import AuxiliarySolutions, solve_auxiliary
from .correctors import approximation_operator
from .fem import Q1Space
from .geometry import StructuredGrid, build_macro_grid, parse_epsilon
from .imex import default_dt, graded_first_step, time_grid, time_levels
from .macro_solver import MacroProblem
from .micro_solver import MicroProblem, fixed_domains
from .scenario import Scenario

LIMITED_REDUCTION = 0.9  # a halving that keeps more than 90% of the error is "discretization-limited"
MIN_FIT_POINTS = 3
REGIONS = ("plus", "minus", "layer")


class RateFitError(ValueError):
    pass


# ---------------------------------------------------------------- norms


@dataclass(frozen=True, eq=False)
class RegionNorm:
    """Unweighted Q1 mass and Laplace matrices of one region grid."""

    grid: StructuredGrid
    M: object
    K: object

    @classmethod
    def on(cls, grid: StructuredGrid) -> "RegionNorm":
        V = Q1Space(grid)
        return cls(grid, V.mass(), V.stiffness(1.0))

    def __call__(self, e: np.ndarray) -> tuple[float, float]:
        return math.sqrt(max(float(e @ (self.M @ e)), 0.0)), math.sqrt(max(float(e @ (self.K @ e)), 0.0))


def h1_error(grid: StructuredGrid, u, v) -> tuple[float, float]:
    """(L2 error, H1-seminorm error) of two nodal fields on the same grid."""
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    if u.shape != (grid.num_nodes,) or v.shape != (grid.num_nodes,):
        raise ValueError(f"fields of shape {u.shape} and {v.shape} do not live on a grid with {grid.num_nodes} nodes")
    return RegionNorm.on(grid)(u - v)


def spacetime_accumulate(errors, dt: float | None = None, times=None) -> float:
    """L2-in-time norm from spatial errors at the time levels (trapezoid on squares).

    Give either a uniform step ``dt`` or the increasing level ``times``.
    """
    e2 = np.asarray(errors, dtype=float) ** 2
    if e2.size < 2:
        return 0.0
    if times is None:
        return math.sqrt(dt * (e2.sum() - 0.5 * (e2[0] + e2[-1])))
    h = np.diff(np.asarray(times, dtype=float))
    if h.shape != (e2.size - 1,) or np.any(h <= 0):
        raise ValueError("times must be increasing and match the errors")
    return math.sqrt(float(np.sum(0.5 * h * (e2[1:] + e2[:-1]))))


@dataclass
class ErrorReport:
    epsilon: str
    plus_1: float = math.nan
    minus_1: float = math.nan
    layer_1: float = math.nan
    composite_1: float = math.nan
    plus_2: float = math.nan
    minus_2: float = math.nan
    layer_2: float = math.nan
    composite_2: float = math.nan
    linf_l2_1: float = math.nan  # max over time of the composite-weighted L2 error
    linf_l2_2: float = math.nan
    max_dx1_c0: float = math.nan  # monitored sup of the tangential derivative of c0
    apriori_bulk: float = math.nan  # max_t ||c_eps|| in L2 of both bulk domains
    apriori_layer: float = math.nan  # max_t eps^{-1/2} ||c_eps^M|| in L2 of the layer
    steps: int = 0
    status: str = "ok"
    runtime: float = 0.0

    @property
    def eps(self) -> float:
        return float(Fraction(self.epsilon))

    def finish(self):
        s = self.eps**-0.5
        self.composite_1 = self.plus_1 + self.minus_1 + s * self.layer_1
        self.composite_2 = self.plus_2 + self.minus_2 + s * self.layer_2
        return self


class ErrorAccumulator:
    """Running trapezoid sums of squared H1 errors, one per region and order."""

    def __init__(self, norms: dict, epsilon: float, orders=(1, 2)):
        self.norms = norms
        self.epsilon = epsilon
        self.orders = orders
        self.sums = {(o, r): 0.0 for o in orders for r in REGIONS}
        self.linf = {o: 0.0 for o in orders}
        self._last = None
        self._t = None
        self.levels = 0

    def add(self, errors: dict, t: float):
        """``errors[order][region]`` is the nodal error at the next time level ``t``."""
        sq = {}
        for o in self.orders:
            l2 = {}
            for r in REGIONS:
                a, b = self.norms[r](errors[o][r])
                sq[(o, r)] = a * a + b * b
                l2[r] = a
            self.linf[o] = max(self.linf[o], l2["plus"] + l2["minus"] + l2["layer"] / math.sqrt(self.epsilon))
        if self._last is not None:
            h = t - self._t
            if not h > 0:
                raise ValueError("time levels must increase")
            for k in self.sums:
                self.sums[k] += 0.5 * h * (self._last[k] + sq[k])
        self._last, self._t = sq, t
        self.levels += 1

    def values(self) -> dict:
        return {k: math.sqrt(v) for k, v in self.sums.items()}


def composite_norms(micro_fields, approx_fields, domains, epsilon, times, approx2_fields=None) -> ErrorReport:
    """Error report from stored per-level fields.

    ``micro_fields`` and ``approx_fields`` are sequences over the time levels
    ``times`` of ``(plus, minus, layer)`` nodal arrays on the fixed domains.
    """
    times = np.asarray(times, dtype=float)
    if len(micro_fields) != len(times) or len(approx_fields) != len(times) or (
        approx2_fields is not None and len(approx2_fields) != len(times)
    ):
        raise ValueError("missing snapshots: the field sequences have different lengths")
    eps = float(Fraction(epsilon)) if isinstance(epsilon, str) else float(epsilon)
    norms = {r: RegionNorm.on(getattr(domains, r)) for r in REGIONS}
    orders = (1, 2) if approx2_fields is not None else (1,)
    acc = ErrorAccumulator(norms, eps, orders)
    for k, m in enumerate(micro_fields):
        approx = {1: approx_fields[k]}
        if approx2_fields is not None:
            approx[2] = approx2_fields[k]
        acc.add({o: {r: m[i] - approx[o][i] for i, r in enumerate(REGIONS)} for o in orders}, times[k])
    return _report(str(Fraction(eps).limit_denominator()) if not isinstance(epsilon, str) else epsilon, acc)


def _report(label: str, acc: ErrorAccumulator) -> ErrorReport:
    v = acc.values()
    rep = ErrorReport(epsilon=label, steps=acc.levels - 1)
    for o in acc.orders:
        for r in REGIONS:
            setattr(rep, f"{r}_{o}", v[(o, r)])
        setattr(rep, f"linf_l2_{o}", acc.linf[o])
    return rep.finish()


# ---------------------------------------------------------------- rates


def fit_rate(points) -> tuple[float, float]:
    """Least-squares slope of log(error) against log(epsilon) and the residual norm."""
    pts = [(float(e), float(v)) for e, v in points]
    if len(pts) < MIN_FIT_POINTS:
        raise RateFitError(f"need at least {MIN_FIT_POINTS} points, got {len(pts)}")
    if any(v == 0.0 for _, v in pts):
        return math.inf, 0.0
    if any(not (v > 0.0 and math.isfinite(v)) for _, v in pts):
        raise RateFitError("errors must be positive and finite")
    x = np.log([e for e, _ in pts])
    y = np.log([v for _, v in pts])
    (p, c), *_ = np.linalg.lstsq(np.stack([x, np.ones_like(x)], axis=1), y, rcond=None)
    return float(p), float(np.linalg.norm(y - (p * x + c)))


def limited_flags(values) -> list[bool]:
    """Flag each point (ordered by decreasing epsilon) whose halving step kept > 90% of the error."""
    flags = [False] * len(values)
    for k in range(1, len(values)):
        a, b = values[k - 1], values[k]
        if math.isfinite(a) and math.isfinite(b) and b > LIMITED_REDUCTION * a:
            flags[k] = True
    return flags


# ---------------------------------------------------------------- study


@dataclass
class StudyReport:
    digest: str
    resolution: int
    dt: float
    points: list  # ErrorReport, ordered by decreasing epsilon
    rates: dict = field(default_factory=dict)  # "p1"/"p2" -> {"p", "residual", "used", "limited"}
    runtimes: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)

    def rate(self, order: int) -> float:
        return self.rates[f"p{order}"]["p"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["plus_1", "minus_1", "layer_1", "composite_1", "plus_2", "minus_2", "layer_2", "composite_2",
                "linf_l2_1", "linf_l2_2"]
        w.writerow(["epsilon", *cols, "status"])
        for p in self.points:
            w.writerow([p.epsilon, *(f"{getattr(p, c):.17g}" for c in cols), p.status])
        return buf.getvalue()

    def to_json(self) -> str:
        data = {
            "digest": self.digest,
            "resolution": self.resolution,
            "dt": self.dt,
            "rates": self.rates,
            "points": [asdict(p) for p in self.points],
            "runtimes": self.runtimes,
            "diagnostics": self.diagnostics,
        }
        return json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n"


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


@dataclass(eq=False)
class _Point:
    """One epsilon of a sweep: its micro problem, approximation operators and accumulator."""

    label: str
    micro: MicroProblem
    ops: dict
    domains: object
    acc: ErrorAccumulator
    state: object = None
    report: ErrorReport | None = None
    elapsed: float = 0.0
    apriori: tuple = (0.0, 0.0)

    def measure(self, c0: np.ndarray, t: float):
        c = self.state.c
        d = self.domains
        errs = {}
        for o, op in self.ops.items():
            errs[o] = {
                "plus": c[d.plus_nodes] - op.plus @ c0,
                "minus": c[d.minus_nodes] - op.minus @ c0,
                "layer": c[d.layer_nodes] - op.layer @ c0,
            }
        self.acc.add(errs, t)
        n = self.acc.norms
        bulk = math.hypot(n["plus"](c[d.plus_nodes])[0], n["minus"](c[d.minus_nodes])[0])
        layer = n["layer"](c[d.layer_nodes])[0] / math.sqrt(self.acc.epsilon)
        self.apriori = (max(self.apriori[0], bulk), max(self.apriori[1], layer))


def _make_point(scenario: Scenario, label: str, N: int, macro: MacroProblem, aux: AuxiliarySolutions):
    t0 = time.perf_counter()
    micro = MicroProblem(scenario, label, N)
    eps = micro.epsilon
    domains = fixed_domains(micro.grid, micro.geom)
    ops = {o: approximation_operator(macro.grid, macro.D1, aux, domains, eps, scenario.H, o) for o in (1, 2)}
    norms = {r: RegionNorm.on(getattr(domains, r)) for r in REGIONS}
    p = _Point(label, micro, ops, domains, ErrorAccumulator(norms, eps))
    p.state = micro.initial_state()
    p.elapsed = time.perf_counter() - t0
    return p


def _lockstep(scenario: Scenario, labels, N: int, aux: AuxiliarySolutions, cells_per_unit: int, times):
    """Advance the macro problem and the micro problems of ``labels`` together."""
    t0 = time.perf_counter()
    macro = MacroProblem(scenario, aux.D_star, cells_per_unit)
    mstate = macro.initial_state()
    macro_time = time.perf_counter() - t0
    points = []
    for lab in labels:
        try:
            points.append(_make_point(scenario, lab, N, macro, aux))
        except Exception as err:  # recorded per epsilon
            points.append(_Point(lab, None, {}, None, None, report=ErrorReport(lab, status=f"failed: {err}")))
    dmax = 0.0
    n = len(times) - 1
    for k in range(n + 1):
        dmax = max(dmax, float(np.max(np.abs(macro.D1 @ mstate.c))))
        for p in points:
            if p.report is None:
                s = time.perf_counter()
                p.measure(mstate.c, times[k])
                p.elapsed += time.perf_counter() - s
        if k == n:
            break
        dt = times[k + 1] - times[k]
        s = time.perf_counter()
        mstate = macro.step(mstate, dt)
        macro_time += time.perf_counter() - s
        for p in points:
            if p.report is not None:
                continue
            s = time.perf_counter()
            try:
                p.state = p.micro.step(p.state, dt)
            except Exception as err:
                p.report = ErrorReport(p.label, status=f"failed at step {k}: {err}")
            p.elapsed += time.perf_counter() - s
    out = []
    for p in points:
        rep = p.report if p.report is not None else _report(p.label, p.acc)
        rep.max_dx1_c0 = dmax
        if p.report is None:
            rep.apriori_bulk, rep.apriori_layer = p.apriori
        rep.runtime = p.elapsed
        out.append(rep)
    return out, macro_time


def _worker(args):
    scenario, label, N, aux, cells_per_unit, times = args
    reps, macro_time = _lockstep(scenario, [label], N, aux, cells_per_unit, times)
    return reps[0], macro_time


def _fit(points, key: str) -> dict:
    vals = [getattr(p, key) for p in points]
    flags = limited_flags(vals)
    used = [(p.eps, v) for p, v, f in zip(points, vals, flags) if not f and p.status == "ok" and math.isfinite(v)]
    out = {"limited": [p.epsilon for p, f in zip(points, flags) if f], "used": len(used)}
    try:
        out["p"], out["residual"] = fit_rate(used)
    except RateFitError as err:
        out["p"], out["residual"], out["error"] = math.nan, math.nan, str(err)
    return out


def run_study(scenario: Scenario, epsilons, per_period_resolution: int | None = None, jobs: int = 1,
              dt: float | None = None, stripe_length: int | None = None, graded_start: bool = True) -> StudyReport:
    """Sweep over ``epsilons`` (strings like "1/8"); see the module docstring."""
    if len(epsilons) < MIN_FIT_POINTS:
        raise RateFitError(f"a study needs at least {MIN_FIT_POINTS} epsilons, got {len(epsilons)}")
    N = per_period_resolution or scenario.resolution
    L = stripe_length or scenario.stripe_length
    inv = sorted({parse_epsilon(e) for e in epsilons})
    labels = [f"1/{k}" for k in inv]  # decreasing epsilon
    dt = dt or default_dt(1.0 / inv[-1])
    n, dt = time_grid(scenario.T, dt)
    times = time_levels(scenario.T, dt, graded_first_step(1.0 / inv[-1]) if graded_start else None)
    cells_per_unit = N * inv[-1]  # tangential spacing eps_min / N

    t0 = time.perf_counter()
    aux = solve_auxiliary(scenario.layer_tensor, scenario.D_plus, scenario.D_minus, N, L)
    runtimes = {"auxiliary": time.perf_counter() - t0}
    diagnostics = [str(d) for bl in aux.bl_plus + aux.bl_minus for d in bl.diagnostics]
    diagnostics += [str(d) for w in aux.second for d in getattr(w, "diagnostics", [])]

    if jobs > 1 and len(labels) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(labels))) as pool:
            results = list(pool.map(_worker, [(scenario, lab, N, aux, cells_per_unit, times) for lab in labels]))
        points = [r for r, _ in results]
        runtimes["macro"] = max(m for _, m in results)
    else:
        points, runtimes["macro"] = _lockstep(scenario, labels, N, aux, cells_per_unit, times)
    for p in points:
        runtimes[p.epsilon] = p.runtime
    rates = {"p1": _fit(points, "composite_1"), "p2": _fit(points, "composite_2")}
    return StudyReport(scenario.digest, N, dt, points, rates, runtimes, diagnostics)
