"""Extrinsic versus Euclidean balls on the Pogorelov example (degenerate along the x3 axis).

    python scripts/pogorelov_contrast.py --grid 33
"""
import argparse

from ma_lab import analytic as an
from ma_lab.convex import section_diameter_scan
from ma_lab.grid import GridSpec, PotentialField
from ma_lab.inequalities import pogorelov_contrast


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=int, default=33)
    args = ap.parse_args()
    n = args.grid
    g = GridSpec((-0.7, -0.7, -0.35), (0.7, 0.7, 0.35), (n, n, n))
    u = PotentialField(g, an.pogorelov(3)(g.points()).reshape(g.shape))
    print("radius pair   extrinsic ratio  hits axis   euclidean ratio  hits axis")
    for row in pogorelov_contrast(u, [0, 0, 0], [0.3, 0, 0], [(0.05, 0.1), (0.1, 0.2), (0.15, 0.35)]):
        print(
            f"({row.radius_inner:.2f},{row.radius_outer:.2f})   {row.extrinsic_ratio:14.3f}  {row.extrinsic_inner_hits_axis!s:9s}"
            f"   {row.euclidean_ratio:15.3f}  {row.euclidean_inner_hits_axis!s}"
        )
    print("section diameters:", [round(d, 3) for _, d, _ in section_diameter_scan(u, [0.2, 0.1, 0.05, 0.025])])


if __name__ == "__main__":
    main()
