"""Acceptance criteria, one test per criterion.

Each test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line (shown even
without ``-s``) before asserting. Criterion 7 runs the full four-epsilon
study on scenarios/accept.toml and takes roughly a minute or two.
"""

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings

from conftest import SCENARIOS, make_scenario
from test_expr import INVALID, VALID, trees
from thinlayer import expr as ex
from thinlayer.cell_solver import effective_tensor, solve_auxiliary, solve_boundary_layer, solve_cells
from thinlayer.cli import main
from thinlayer.fem import Q1Space
from thinlayer.geometry import CellGeometry, StripeGeometry
from thinlayer.harness import fit_rate, run_study
from thinlayer.macro_solver import MacroProblem, solve_macro
from thinlayer.micro_solver import MicroProblem, solve_micro
from thinlayer.numerics import solve_dense_oracle


@pytest.fixture
def verdict(capsys):
    def report(number: int, title: str, ok: bool, detail: str = ""):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else ""))
        assert ok, f"criterion {number} failed: {detail}"

    return report


def iso(f):
    return lambda y1, y2: np.asarray(f(y1, y2), dtype=float) * np.ones_like(y1)


def test_1_null_microstructure(verdict):
    t0 = time.perf_counter()
    worst, dstar_err = 0.0, 0.0
    for D_M, D_plus, D_minus, block in (
        (lambda y1, y2: np.broadcast_to(np.diag([2.5, 0.7]), np.shape(y1) + (2, 2)), np.eye(2), np.eye(2), 2.5),
        (iso(lambda y1, y2: 1.3), np.diag([1.0, 2.0]), np.array([[2.0, 0.5], [0.5, 1.0]]), 1.3),
    ):
        aux = solve_auxiliary(D_M, D_plus, D_minus, 16, 8)
        worst = max(worst, *(float(np.max(np.abs(f))) for f in
                             (aux.cells[0].w, aux.bl_plus[0].w, aux.bl_minus[0].w, aux.second[0].w)))
        dstar_err = max(dstar_err, abs(aux.D_star[0, 0] - block))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and dstar_err <= 1e-10 and elapsed < 5
    verdict(1, "null microstructure", ok, f"max |w| = {worst:.2e}, |D* - D| = {dstar_err:.2e}, {elapsed:.2f} s")


def _brute_force_1d(a):
    """Harmonic-mean oracle of the 1D cell problem, from a fine explicit solve."""
    n = a.size
    A = np.zeros((n + 1, n + 1))
    b = np.zeros(n + 1)
    for i in range(n):
        j = (i + 1) % n
        A[i, i] += a[i] * n
        A[j, j] += a[i] * n
        A[i, j] -= a[i] * n
        A[j, i] -= a[i] * n
        b[i] += a[i]
        b[j] -= a[i]
    A[n, :n] = A[:n, n] = 1.0
    w = np.linalg.solve(A, b)[:n]
    dw = np.diff(np.append(w, w[0])) * n
    return float(np.mean(a * (dw + 1) ** 2))


def test_2_laminate_oracles(verdict):
    t0 = time.perf_counter()
    vertical = solve_cells(iso(lambda y1, y2: np.where(y2 < 0, 1.0, 3.0)), CellGeometry(64))
    tangential = solve_cells(iso(lambda y1, y2: np.where(np.mod(y1, 1) < 0.5, 1.0, 4.0)), CellGeometry(64))
    dv = effective_tensor(None, vertical).D_star[0, 0]
    dt = effective_tensor(None, tangential).D_star[0, 0]
    oracle = _brute_force_1d(np.where((np.arange(4096) + 0.5) / 4096 < 0.5, 1.0, 4.0))
    elapsed = time.perf_counter() - t0
    ok = abs(dv - 2.0) <= 2e-3 and abs(dt - 1.6) <= 2e-3 and abs(oracle - 1.6) <= 1e-9 and elapsed < 30
    verdict(2, "laminate oracles", ok, f"vertical {dv:.6f}, tangential {dt:.6f}, 1D oracle {oracle:.6f}, {elapsed:.2f} s")


def test_3_voigt_reuss(verdict):
    rng = np.random.default_rng(20261016)
    worst = math.inf
    for _ in range(20):
        k = rng.integers(1, 4, size=3)
        ph = rng.uniform(0, 2 * np.pi, size=3)
        amp = rng.uniform(-1, 1, size=3)

        def a(y1, y2, k=k, ph=ph, amp=amp):
            s = amp[0] * np.sin(2 * np.pi * k[0] * y1 + ph[0]) + amp[1] * np.cos(np.pi * k[1] * y2 + ph[1]) \
                + amp[2] * np.sin(2 * np.pi * k[2] * y1 + np.pi * y2 + ph[2])
            return 3.0 + 2.0 * np.tanh(2.0 * s)  # values in (1, 5)

        cells = solve_cells(iso(a), CellGeometry(16))
        vals = cells.D_quad[:, 0, 0]
        w = Q1Space(cells.grid).weights
        arith, harm = w @ vals / 2.0, 2.0 / (w @ (1.0 / vals))
        d = effective_tensor(None, cells).D_star[0, 0]
        assert 1.0 <= vals.min() and vals.max() <= 5.0
        worst = min(worst, d - (harm - 1e-3), (arith + 1e-3) - d)
    verdict(3, "Voigt-Reuss bounds on 20 microstructures", worst >= 0, f"smallest margin {worst:.3e}")


def test_4_boundary_layer_decay(verdict, accept_scenario):
    R = 16
    trace = np.cos(2 * np.pi * np.arange(R) / R)
    omegas = [solve_boundary_layer(np.eye(2), trace, StripeGeometry(8, R, o)).omega for o in (+1, -1)]
    s = accept_scenario
    aux = solve_auxiliary(s.layer_tensor, s.D_plus, s.D_minus, s.resolution, s.stripe_length)
    ratios = [bl.ratio for bl in aux.bl_plus + aux.bl_minus]
    ok = all(abs(w - 2 * np.pi) <= 0.15 * 2 * np.pi for w in omegas) and all(r < 1 for r in ratios)
    verdict(4, "boundary-layer decay", ok, f"omega {omegas[0]:.4f}/{omegas[1]:.4f} vs {2 * np.pi:.4f}, ratios {ratios}")


CONSERVE = dict(D_M="2 + sin(2*pi*y1)", init_plus="1 + 0.5*cos(2*pi*x1)*cos(pi*x2)",
                init_minus="1 + 0.5*cos(2*pi*x1)*cos(pi*x2)", init_M="1 + 0.5*cos(2*pi*x1)", T=0.2)


def test_5_conservation(verdict):
    s = make_scenario(**CONSERVE)
    micro = solve_micro(s, "1/4", 4, 0.001)
    macro = solve_macro(s, [[1.7320508]], 0.001, cells_per_unit=16)
    steps = (len(micro.mass) - 1, len(macro.mass) - 1)
    drift = (micro.mass_drift(), macro.mass_drift())
    ok = steps == (200, 200) and max(drift) <= 1e-12
    verdict(5, "mass conservation over 200 steps", ok, f"micro {drift[0]:.2e}, macro {drift[1]:.2e}")


def test_6_dense_oracle(verdict, accept_scenario):
    s = accept_scenario
    errs = []
    for p in (MicroProblem(s, "1/4", 2), MacroProblem(s, [[math.sqrt(3)]], 4)):
        assert p.grid.num_nodes <= 200
        c = p.initial_state().c
        dt = 1e-3
        ref = solve_dense_oracle((p.M + dt * p.K).toarray(), p.M @ c + dt * p.reaction(0.0, c))
        new = p.stepper.step(0.0, c, dt)
        errs.append(float(np.linalg.norm(new - ref) / np.linalg.norm(ref)))
    verdict(6, "one IMEX step equals dense elimination", max(errs) <= 1e-10, f"micro {errs[0]:.2e}, macro {errs[1]:.2e}")


@pytest.mark.slow
def test_7_convergence_rates(verdict, accept_scenario):
    t0 = time.perf_counter()
    rep = run_study(accept_scenario, ["1/4", "1/8", "1/16", "1/32"], 4, jobs=4)
    elapsed = time.perf_counter() - t0
    c1 = [p.composite_1 for p in rep.points]
    c2 = [p.composite_2 for p in rep.points]
    p1, p2 = rep.rate(1), rep.rate(2)
    finer = all(c2[k] < c1[k] for k in (-2, -1))
    inversions = [k for k in range(1, 4) if c1[k] > c1[k - 1] or c2[k] > c2[k - 1]]
    monotone = inversions in ([], [1])
    eps = [p.eps for p in rep.points]
    apriori = min(fit_rate(list(zip(eps, [p.apriori_bulk for p in rep.points])))[0],
                  fit_rate(list(zip(eps, [p.apriori_layer for p in rep.points])))[0])
    ok = 0.4 <= p1 <= 0.85 and p2 >= 0.8 and finer and monotone and apriori >= -0.1 and elapsed <= 900
    detail = (f"p1 = {p1:.3f}, p2 = {p2:.3f}, composite_1 = {[f'{v:.4g}' for v in c1]}, "
              f"composite_2 = {[f'{v:.4g}' for v in c2]}, {elapsed:.0f} s")
    verdict(7, "convergence rates", ok, detail)


def test_8_determinism(verdict, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["study", str(SCENARIOS / "accept.toml"), "--epsilons", "1/4,1/8,1/16", "--assert-rates", "0.4,0.8"]
    codes = (main(args + ["--out", str(a), "--jobs", "3"]), main(args + ["--out", str(b), "--jobs", "1"]))
    same = (a / "study.csv").read_bytes() == (b / "study.csv").read_bytes()
    verdict(8, "byte-identical study.csv", codes == (0, 0) and same, f"exit codes {codes}")


def test_9_parser_suite(verdict):
    failures = []
    for text, column in INVALID:
        try:
            ex.parse(text)
            failures.append(text)
        except ex.ExpressionError as err:
            if err.column != column:
                failures.append(text)
    for text, bindings, value in VALID:
        if ex.evaluate(ex.parse(text), bindings) != pytest.approx(value, rel=1e-15):
            failures.append(text)
    seen = []

    @settings(max_examples=100, deadline=None, derandomize=True, database=None)
    @given(trees)
    def round_trip(tree):
        seen.append(tree)
        text = ex.to_source(tree)
        assert ex.parse(text).ast == tree

    round_trip()
    ok = len(INVALID) + len(VALID) == 25 and not failures and len(seen) >= 100
    verdict(9, "parser suite", ok, f"{len(INVALID) + len(VALID)} grammar cases, {len(seen)} round trips")
