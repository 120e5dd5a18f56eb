"""Grid refinement of the distance field against closed-form fields.

    python3 scripts/hj_convergence.py --grids 64,128,256
"""

import argparse

import numpy as np

from speclab import catalog
from speclab.flow import Kind, find_interior_fixed_points
from speclab.grid import make_grid
from speclab.hj import solve_distance


def exact(name, r):
    if name == "P2_spiral_source":
        return 0.5 * r**2
    return np.where(r <= 1, r**2 / 2 - r**4 / 4, 0.25)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grids", default="64,128,256")
    args = ap.parse_args()
    grids = [int(v) for v in args.grids.split(",")]
    for name in ("P2_spiral_source", "P4_hopf_cycle"):
        p = catalog(name)
        (pt,) = [c for c in find_interior_fixed_points(p) if c.kind is Kind.INTERIOR_POINT]
        prev = None
        for n in grids:
            g = make_grid(p.domain, n)
            d = solve_distance(p, pt, g)
            err = float(np.max(np.abs(d.values - exact(name, g.radius))))
            order = "" if prev is None else f" order={np.log2(prev / err):.2f}"
            print(f"{name:18s} n={n:4d} h={g.h:.4f} sup_err={err:.5f} err/h={err / g.h:.3f} "
                  f"sweeps={d.sweeps}{order}")
            prev = err


if __name__ == "__main__":
    main()
