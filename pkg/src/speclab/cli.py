"""Command line entry point ``speclab``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import (CHECKS, DEFAULT_CHECKS, DEFAULT_EPS, FORMATS, ConfigError,
                      ExperimentConfig, TheoremReport, dumps, report_csv, report_markdown,
                      run_experiment)
from .problem import CATALOG_NAMES, catalog, load_problem


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _names(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _config(args, checks=None) -> ExperimentConfig:
    return ExperimentConfig(problem=args.problem, grids=args.grid, eps=args.eps,
                            delta=args.delta, checks=checks or args.checks, out=args.out)


def _print(obj) -> None:
    sys.stdout.write(dumps(obj))


def cmd_catalog(args) -> int:
    if args.problem:
        _print(load_problem(args.problem).to_dict())
    else:
        for name in CATALOG_NAMES:
            d = catalog(name).to_dict()
            print(f"{name:20s} b = ({d['b'][0]}, {d['b'][1]})  c = {d['c']}  "
                  f"R = {d['domain'].get('R')}")
    return 0


def _run(args, checks) -> int:
    report = run_experiment(_config(args, checks))
    sys.stdout.write(report_markdown(report))
    print(f"report written to {Path(args.out) / 'report.json'}")
    return report.exit_code


def cmd_analyze(args) -> int:
    return _run(args, ("flow", "sigma"))


def cmd_eigen(args) -> int:
    return _run(args, ("eigen",))


def cmd_distance(args) -> int:
    return _run(args, ("flow", "sigma", "distance"))


def cmd_verify(args) -> int:
    return _run(args, args.checks)


def cmd_report(args) -> int:
    path = Path(args.out) / "report.json"
    with open(path) as fh:
        report = TheoremReport.from_dict(json.load(fh))
    text = {"json": lambda: dumps(report.to_dict()), "csv": lambda: report_csv(report),
            "markdown": lambda: report_markdown(report)}[args.format]()
    sys.stdout.write(text)
    return report.exit_code


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--problem", default="P4",
                        help="catalog name or prefix (P0..P4r), inline JSON, or JSON file")
    common.add_argument("--eps", type=_floats, default=DEFAULT_EPS,
                        help="comma separated, strictly decreasing")
    common.add_argument("--grid", type=_ints, default=(128,),
                        help="comma separated grid sizes (power-of-two multiples of 32)")
    common.add_argument("--delta", type=float, default=0.05)
    common.add_argument("--out", default="runs/latest", help="output directory")
    common.add_argument("--checks", type=_names, default=DEFAULT_CHECKS,
                        help=f"comma separated subset of {','.join(CHECKS)}")

    p = argparse.ArgumentParser(prog="speclab", description=(
        "Small-diffusion limits of principal Neumann eigenvalues: flow analysis, "
        "component scores, eigen sweeps and Hamilton-Jacobi distance fields."))
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, text in [
        ("catalog", cmd_catalog, "list catalog problems, or print one as JSON"),
        ("analyze", cmd_analyze, "flow analysis and component scores"),
        ("eigen", cmd_eigen, "principal eigenpairs over the eps sweep"),
        ("distance", cmd_distance, "distance field of the maximizing component"),
        ("verify", cmd_verify, "full pipeline with all enabled acceptance rules"),
        ("report", cmd_report, "render an existing report.json"),
    ]:
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.set_defaults(func=fn)
        if name == "catalog":
            sp.set_defaults(problem=None)
        if name == "report":
            sp.add_argument("--format", choices=FORMATS, default="markdown")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, KeyError, FileNotFoundError) as exc:
        print(f"speclab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
