"""Command-line entry point: ``thinlayer {validate,cell,macro,micro,study} SCENARIO``.

Exit codes: 0 success, 2 usage error, 3 invalid scenario, 4 solver failure,
5 failed rate assertion. ``manifest.json`` is written on every run.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cell_solver import solve_auxiliary
from .geometry import GeometryError, parse_epsilon
from .harness import RateFitError, run_study
from .imex import default_dt
from .macro_solver import MacroProblem, solve_macro
from .micro_solver import solve_micro
from .numerics import SolverError
from .scenario import ScenarioError, ScenarioValidationError, digest, parse_scenario, validate

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_SOLVER, EXIT_RATE = 0, 2, 3, 4, 5


class RateAssertionError(RuntimeError):
    pass


def _epsilons(text: str) -> list[str]:
    out = []
    for item in text.split(","):
        try:
            out.append(f"1/{parse_epsilon(item.strip())}")
        except GeometryError as err:
            raise argparse.ArgumentTypeError(str(err)) from None
    return out


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_field_csv(path: Path, x1, x2, values) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x1", "x2", "c"])
        for a, b, c in zip(np.ravel(x1), np.ravel(x2), np.ravel(values)):
            w.writerow([_fmt(a), _fmt(b), _fmt(c)])


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_default) + "\n")


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thinlayer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("scenario", type=Path, help="scenario TOML file")
        p.add_argument("--out", type=Path, default=None, help="output directory (default: <scenario>_out next to the file)")

    common(sub.add_parser("validate", help="check a scenario against the standing assumptions"))

    p = sub.add_parser("cell", help="cell, boundary-layer and second-order cell problems")
    common(p)
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--stripe-length", type=int, default=None)

    p = sub.add_parser("macro", help="homogenized bulk-interface problem")
    common(p)
    p.add_argument("--resolution", type=int, default=None, help="cell resolution for D*")
    p.add_argument("--cells-per-unit", type=int, default=32)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--snapshots", type=_floats, default=[])

    p = sub.add_parser("micro", help="microscopic problem at one epsilon")
    common(p)
    p.add_argument("--epsilon", type=lambda s: _epsilons(s)[0], required=True)
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--snapshots", type=_floats, default=[])

    p = sub.add_parser("study", help="epsilon sweep with composite errors and fitted rates")
    common(p)
    p.add_argument("--epsilons", type=_epsilons, default=None)
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--jobs", type=int, default=None, help="parallel epsilon points (default: CPU count)")
    p.add_argument("--assert-rates", type=_floats, default=None, metavar="P1,P2",
                   help="fail with exit code 5 unless p1 >= P1 and p2 >= P2")
    p.add_argument("--uniform-start", action="store_true", help="do not grade the first time interval")
    return parser


def _out_dir(args) -> Path:
    if args.out is not None:
        return args.out
    return args.scenario.parent / f"{args.scenario.stem}_out"


def run_validate(args, scenario, stages, out):
    diags = validate(scenario)
    _write_json(out / "diagnostics.json", [d.__dict__ for d in diags])
    if diags:
        raise ScenarioValidationError(diags)
    print("ok: no diagnostics")


def run_cell(args, scenario, stages, out):
    N = args.resolution or scenario.resolution
    L = args.stripe_length or scenario.stripe_length
    t0 = time.perf_counter()
    aux = solve_auxiliary(scenario.layer_tensor, scenario.D_plus, scenario.D_minus, N, L)
    stages["auxiliary"] = time.perf_counter() - t0
    data = {
        "resolution": N,
        "stripe_length": L,
        "D_star": aux.D_star,
        "min_eigenvalue": aux.tensor.min_eigenvalue,
        "omega_plus": [b.omega for b in aux.bl_plus],
        "omega_minus": [b.omega for b in aux.bl_minus],
        "ratio_plus": [b.ratio for b in aux.bl_plus],
        "ratio_minus": [b.ratio for b in aux.bl_minus],
        "compatibility_defect": [w.compatibility_defect for w in aux.second],
        "diagnostics": [str(d) for b in aux.bl_plus + aux.bl_minus for d in b.diagnostics]
        + [str(d) for w in aux.second for d in w.diagnostics],
    }
    _write_json(out / "cell.json", data)
    with open(out / "cell.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["j", "resolution", "D_star_11", "omega_plus", "omega_minus", "residual_cell", "residual_plus",
                    "residual_minus", "residual_second", "compatibility_defect"])
        for k, sol in enumerate(aux.cells.solutions):
            bp, bm, w2 = aux.bl_plus[k], aux.bl_minus[k], aux.second[k]
            w.writerow([sol.j + 1, N, _fmt(float(aux.D_star[0, 0])), _fmt(bp.omega), _fmt(bm.omega),
                        _fmt(sol.report.residual), _fmt(bp.report.residual), _fmt(bm.report.residual),
                        _fmt(w2.report.residual), _fmt(w2.compatibility_defect)])
    with open(out / "slab_energies.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["j", "orientation", "slab", "energy"])
        for k in range(len(aux.cells.solutions)):
            for bl in (aux.bl_plus[k], aux.bl_minus[k]):
                for i, e in enumerate(bl.slab_energies):
                    w.writerow([k + 1, "+" if bl.orientation > 0 else "-", i, _fmt(float(e))])
    snaps = out / "snapshots"
    g = aux.cells.grid
    write_field_csv(snaps / "cell_w1.csv", *g.coordinates(), aux.cells[0].w)
    write_field_csv(snaps / "cell_w2.csv", *g.coordinates(), aux.second[0].w)
    write_field_csv(snaps / "boundary_layer_plus.csv", *aux.bl_plus[0].grid.coordinates(), aux.bl_plus[0].w)
    write_field_csv(snaps / "boundary_layer_minus.csv", *aux.bl_minus[0].grid.coordinates(), aux.bl_minus[0].w)
    print(f"D* = {_fmt(float(aux.D_star[0, 0]))}")
    print(f"omega+ = {aux.bl_plus[0].omega:.6g}, omega- = {aux.bl_minus[0].omega:.6g}")


def run_macro(args, scenario, stages, out):
    N = args.resolution or scenario.resolution
    t0 = time.perf_counter()
    aux = solve_auxiliary(scenario.layer_tensor, scenario.D_plus, scenario.D_minus, N, scenario.stripe_length)
    stages["auxiliary"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    traj = solve_macro(scenario, aux.D_star, args.dt, args.snapshots, cells_per_unit=args.cells_per_unit)
    stages["macro"] = time.perf_counter() - t0
    for st in traj.states:
        write_field_csv(out / "snapshots" / f"macro_t{st.t:.6f}.csv", *st.grid.coordinates(), st.c)
    _write_json(out / "macro.json", {"D_star": aux.D_star, "mass": traj.mass[:: max(1, len(traj.mass) // 100)],
                                     "mass_drift": traj.mass_drift(), "times": traj.times,
                                     "cg_iterations": {"mean": float(np.mean(traj.iterations)), "max": int(max(traj.iterations))}})
    print(f"macro: {len(traj.mass) - 1} steps, relative mass change {traj.mass_drift():.3e}")


def run_micro(args, scenario, stages, out):
    N = args.resolution or scenario.resolution
    eps = args.epsilon
    dt = args.dt or default_dt(1.0 / parse_epsilon(eps))
    t0 = time.perf_counter()
    traj = solve_micro(scenario, eps, N, dt, args.snapshots)
    stages["micro"] = time.perf_counter() - t0
    from .micro_solver import MicroProblem  # grid coordinates for the snapshot files

    grid = MicroProblem(scenario, eps, N).grid
    tag = eps.replace("/", "_")
    for st in traj.states:
        write_field_csv(out / "snapshots" / f"micro_{tag}_t{st.t:.6f}.csv", *grid.coordinates(), st.c)
    _write_json(out / "micro.json", {"epsilon": eps, "mass_drift": traj.mass_drift(), "times": traj.times,
                                     "cg_iterations": {"mean": float(np.mean(traj.iterations)), "max": int(max(traj.iterations))}})
    print(f"micro eps={eps}: {len(traj.mass) - 1} steps, relative mass change {traj.mass_drift():.3e}")


def run_study_cmd(args, scenario, stages, out):
    eps = args.epsilons or [f"1/{parse_epsilon(e)}" for e in scenario.epsilons]
    if not eps:
        raise RateFitError("no epsilons given on the command line or in the scenario")
    import os

    jobs = args.jobs or os.cpu_count() or 1
    t0 = time.perf_counter()
    report = run_study(scenario, eps, args.resolution, jobs=jobs, dt=args.dt, graded_start=not args.uniform_start)
    stages["study"] = time.perf_counter() - t0
    stages.update({f"study:{k}": v for k, v in report.runtimes.items()})
    (out / "study.csv").write_text(report.to_csv())
    (out / "study.json").write_text(report.to_json())
    sys.stdout.write(report.to_csv())
    p1, p2 = report.rate(1), report.rate(2)
    print(f"p1 = {p1:.4f}, p2 = {p2:.4f}")
    if args.assert_rates:
        want = list(args.assert_rates) + [float("-inf")] * (2 - len(args.assert_rates))
        if not (p1 >= want[0] and p2 >= want[1]):
            raise RateAssertionError(f"rates p1={p1:.4f}, p2={p2:.4f} below required {want[0]}, {want[1]}")


COMMANDS = {"validate": run_validate, "cell": run_cell, "macro": run_macro, "micro": run_micro, "study": run_study_cmd}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    params = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}
    stages: dict = {}
    manifest = {"command": args.command, "argv": list(sys.argv[1:] if argv is None else argv), "parameters": params,
                "version": __version__, "digest": None, "stages": stages, "exit_code": None, "error": None}
    code = EXIT_OK
    try:
        text = args.scenario.read_text(encoding="utf-8")
        manifest["digest"] = digest(text)
        t0 = time.perf_counter()
        scenario = parse_scenario(text, validate_data=args.command != "validate")
        stages["parse"] = time.perf_counter() - t0
        COMMANDS[args.command](args, scenario, stages, out)
    except (ScenarioError, OSError) as err:
        code = EXIT_INVALID
        manifest["error"] = str(err)
        print(f"error: {err}", file=sys.stderr)
    except RateAssertionError as err:
        code = EXIT_RATE
        manifest["error"] = str(err)
        print(f"error: {err}", file=sys.stderr)
    except (SolverError, RateFitError, GeometryError, FloatingPointError, ValueError) as err:
        code = EXIT_SOLVER
        manifest["error"] = str(err)
        print(f"error: {err}", file=sys.stderr)
    manifest["exit_code"] = code
    _write_json(out / "manifest.json", manifest)
    return code


if __name__ == "__main__":
    sys.exit(main())
