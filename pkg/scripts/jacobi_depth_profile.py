"""Jacobi-defect error of the solved radial field against the symbolic value, by node depth.

The error is largest next to the box corners and decays with depth; this
is what fixes the checked region to the concentric half box.

    python scripts/jacobi_depth_profile.py --grid 129
"""
import argparse
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tests"))
import oracles  # noqa: E402

from ma_lab import analytic as an  # noqa: E402
from ma_lab.grid import GridSpec  # noqa: E402
from ma_lab.inequalities import jacobi_defect  # noqa: E402
from ma_lab.solver import solve_reference  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=int, default=129)
    ap.add_argument("--depths", type=int, nargs="+", default=[2, 3, 4, 6, 10, 16])
    args = ap.parse_args()
    g = GridSpec((0.2, 0.2), (1.2, 1.2), (args.grid, args.grid))
    u, _ = solve_reference(an.radial(1.0), g)
    err = np.abs(jacobi_defect(u)[0] - oracles.radial_jacobi_defect(1.0, g.coords()))
    depth = np.minimum.reduce([np.minimum(i, c - 1 - i) for i, c in zip(np.indices(g.shape), g.shape)])
    for d in args.depths:
        print(f"depth {d:3d}: max error {err[depth == d].max():.4f}")
    print(f"half box: max error {err[g.sub_box(0.5) & (depth >= 2)].max():.2e}")


if __name__ == "__main__":
    main()
