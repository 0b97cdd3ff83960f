"""Solver refinement study: sup error against closed-form solutions on successive grids.

    python scripts/convergence_study.py --grids 33 65 129 --out convergence.json
"""
import argparse

import numpy as np

from ma_lab import analytic as an
from ma_lab.grid import GridSpec
from ma_lab.reporting import dumps
from ma_lab.solver import solve_reference

CASES = {
    "quadratic identity": (an.quadratic(np.eye(2)), ((-1, -1), (1, 1))),
    "quadratic diag(4,1/4)": (an.quadratic(np.diag([4.0, 0.25])), ((-1, -1), (1, 1))),
    "quadratic rot30 diag(2,1/2)": (an.rotated_quadratic(2.0, np.pi / 6), ((-1, -1), (1, 1))),
    "radial c=1": (an.radial(1.0), ((0.2, 0.2), (1.2, 1.2))),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grids", type=int, nargs="+", default=[33, 65, 129])
    ap.add_argument("--out")
    args = ap.parse_args()
    rows = []
    for name, (ref, box) in CASES.items():
        prev = None
        for n in args.grids:
            g = GridSpec(*box, (n, n))
            u, rep = solve_reference(ref, g)
            exact = np.asarray(ref(g.points()), float).reshape(g.shape)
            err = float(np.abs(u.values - exact)[g.interior(1)].max())
            rows.append({
                "case": name, "n": n, "sup_error": err, "ratio": prev / err if prev and err > 0 else None,
                "newton_iters": rep.iterations, "gs_sweeps": rep.fallback_sweeps, "seconds": rep.wall_time,
            })
            prev = err
            print(f"{name:28s} n={n:4d} err={err:.3e} iters={rep.iterations:2d} t={rep.wall_time:.1f}s")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(dumps(rows) + "\n")


if __name__ == "__main__":
    main()
