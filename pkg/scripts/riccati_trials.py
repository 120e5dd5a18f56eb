"""Random hyperbolic Riccati trials: certificate and trace-identity statistics.

    python3 scripts/riccati_trials.py --trials 1000
"""

import argparse

import numpy as np

from speclab.riccati import (care_maximal, lyapunov_integral, lyapunov_solve, maximality_gap,
                             random_hyperbolic_pair, trace_identity_check)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    stats = {k: [] for k in ("residual", "margin", "lyap_gap", "trace_diff", "max_gap")}
    methods = {}
    for i in range(args.trials):
        B, Q = random_hyperbolic_pair(rng, 2 + i % 2)
        s = care_maximal(B, Q)
        methods[s.method] = methods.get(s.method, 0) + 1
        stats["residual"].append(s.residual)
        stats["margin"].append(s.antistability_margin)
        stats["lyap_gap"].append(np.abs(lyapunov_solve(s.M) - lyapunov_integral(s.M)).max())
        stats["trace_diff"].append(trace_identity_check(s).diff)
        stats["max_gap"].append(maximality_gap(B, Q, s.Gamma))
    for k, v in stats.items():
        print(f"{k:11s} min={np.min(v):.3e} max={np.max(v):.3e}")
    print("methods:", methods)


if __name__ == "__main__":
    main()
