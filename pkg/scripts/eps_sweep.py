"""Eigenvalue sweep over eps and grid sizes, with the linear extrapolation per grid.

    python3 scripts/eps_sweep.py --problem P4 --grids 64,128,256
"""

import argparse
import csv
import sys

from speclab import load_problem
from speclab.eigen import extrapolate_linear, solve
from speclab.grid import make_grid
from speclab.harness import DEFAULT_EPS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problem", default="P4")
    ap.add_argument("--grids", default="64,128,256")
    ap.add_argument("--eps", default=",".join(map(str, DEFAULT_EPS)))
    args = ap.parse_args()
    p = load_problem(args.problem)
    eps = [float(e) for e in args.eps.split(",")]
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["problem", "grid", "epsilon", "lambda", "lambda_extrap", "iterations"])
    for n in (int(v) for v in args.grids.split(",")):
        g = make_grid(p.domain, n)
        pairs = [solve(p, e, g) for e in eps]
        l0, _ = extrapolate_linear(eps, [q.lam for q in pairs])
        for e, q in zip(eps, pairs):
            w.writerow([p.name, n, e, f"{q.lam:.10f}", f"{l0:.10f}", q.iterations])


if __name__ == "__main__":
    main()
