"""Full pipeline on every catalog problem; one report directory per problem.

    python3 scripts/run_catalog.py --grid 128 --out runs/catalog
"""

import argparse
from pathlib import Path

from speclab import CATALOG_NAMES
from speclab.harness import DEFAULT_EPS, ExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=int, default=128)
    ap.add_argument("--out", default="runs/catalog")
    args = ap.parse_args()
    status = 0
    for name in CATALOG_NAMES:
        cfg = ExperimentConfig(name, grids=(args.grid,), eps=DEFAULT_EPS,
                               out=str(Path(args.out) / name))
        rep = run_experiment(cfg)
        ext = rep.extrapolation[-1]["lambda_extrap"] if rep.extrapolation else float("nan")
        lam0 = rep.lambda0 if rep.lambda0 is not None else float("nan")
        failed = [r.name for r in rep.rules if not r.passed] + rep.failed_stages
        print(f"{name:20s} lambda_extrap={ext:.5f} max_sigma={lam0:.5f} "
              f"{'PASS' if rep.passed else 'FAIL ' + ','.join(failed)}")
        status |= rep.exit_code
    return status


if __name__ == "__main__":
    raise SystemExit(main())
