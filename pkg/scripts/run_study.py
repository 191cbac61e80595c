"""Run an epsilon sweep and print composite errors and fitted rates.

    python scripts/run_study.py scenarios/accept.toml --epsilons 1/4,1/8,1/16,1/32
"""

import argparse
import os
import sys
import time
from pathlib import Path

from thinlayer.harness import run_study
from thinlayer.scenario import load_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario", type=Path)
    ap.add_argument("--epsilons", default=None, help="comma list like 1/4,1/8 (default: from the scenario)")
    ap.add_argument("--resolution", type=int, default=None)
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--uniform-start", action="store_true")
    args = ap.parse_args()

    s = load_scenario(args.scenario)
    eps = args.epsilons.split(",") if args.epsilons else list(s.epsilons)
    t0 = time.perf_counter()
    rep = run_study(s, eps, args.resolution, jobs=args.jobs, graded_start=not args.uniform_start)
    print(f"{'eps':>6} {'composite_1':>12} {'composite_2':>12}")
    for p in rep.points:
        print(f"{p.epsilon:>6} {p.composite_1:12.5g} {p.composite_2:12.5g}")
    for key, r in rep.rates.items():
        flag = f" limited: {','.join(r['limited'])}" if r["limited"] else ""
        print(f"{key} = {r['p']:.4f} (residual {r['residual']:.2e}, {r['used']} points){flag}")
    print(f"wall time {time.perf_counter() - t0:.1f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
