"""Slab energies of the boundary-layer problem for a cosine trace.

Separation of variables gives w = cos(2 pi k y1) exp(-2 pi k |y2|) for D = I,
so the slab energies decay like exp(-4 pi k n) and the fitted rate should be
close to 2 pi k.
"""

import argparse

import numpy as np

from thinlayer.cell_solver import solve_boundary_layer
from thinlayer.geometry import StripeGeometry


def main():
    ap = argparse.ArgumentParser(description="boundary-layer decay check")
    ap.add_argument("--resolution", type=int, default=16)
    ap.add_argument("--length", type=int, default=8)
    ap.add_argument("--mode", type=int, default=1)
    args = ap.parse_args()
    R = args.resolution
    trace = np.cos(2 * np.pi * args.mode * np.arange(R) / R)
    for orientation in (+1, -1):
        bl = solve_boundary_layer(np.eye(2), trace, StripeGeometry(args.length, R, orientation))
        print(f"stripe {'+' if orientation > 0 else '-'}: omega = {bl.omega:.4f} "
              f"(separable value {2 * np.pi * args.mode:.4f}), ratio = {bl.ratio:.3e}")
        for k, e in enumerate(bl.slab_energies):
            print(f"  slab {k}: {e:.3e}")


if __name__ == "__main__":
    main()
