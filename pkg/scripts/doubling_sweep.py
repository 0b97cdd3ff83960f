"""Random doubling-inequality and probe specs on the solved radial field; summary statistics.

    python scripts/doubling_sweep.py --grid 129 --trials 200 --seed 0
"""
import argparse

import numpy as np

from ma_lab import analytic as an
from ma_lab.grid import GridSpec
from ma_lab.inequalities import DoublingSpec, InvalidSpecError, check_doubling, korevaar_probe
from ma_lab.solver import Certificate, solve_reference


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=int, default=129)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    g = GridSpec((0.2, -0.5), (1.2, 0.5), (args.grid, args.grid))
    u, rep = solve_reference(an.radial(1.0), g)
    cert = Certificate.from_report(rep)
    rng = np.random.default_rng(args.seed)
    ratios, slack, fails, skipped = [], [], 0, 0
    for _ in range(args.trials):
        p = (rng.uniform(0.45, 0.95), rng.uniform(-0.25, 0.25))
        r4 = rng.uniform(0.08, 0.25)
        r1, r2, r3 = np.sort(rng.uniform(0.15, 1.0, 3)) * r4
        try:
            spec = DoublingSpec(p, r1, r2, r3, r4)
            d = check_doubling(u, spec, cert)
            k = korevaar_probe(u, spec, cert)
        except InvalidSpecError:
            skipped += 1
            continue
        ratios.append(d.ratio)
        slack.append(d.log_C - np.log(d.ratio))
        fails += (not d.passed) + (not k.passed)
    print(f"specs {len(ratios)} (skipped {skipped}), failures {fails}")
    print(f"sup ratio range {min(ratios):.4f} .. {max(ratios):.4f}")
    print(f"log C - log ratio: min {min(slack):.3f}, median {np.median(slack):.3f}")


if __name__ == "__main__":
    main()
