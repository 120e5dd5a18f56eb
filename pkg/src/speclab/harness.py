"""End-to-end experiments: flow, scores, eigen sweeps, distance fields, comparisons.

Every number in ``report.json`` is also written as a stage artifact in the output
directory.  Wall-clock timings go to ``timings.json`` so that the report itself
is a pure function of the configuration.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .eigen import (LAMBDA_TOL, SCHEMES, EigenPair, extrapolate_linear,
                    gradient_bound_diagnostic, penalized_eigenpair, solve)
from .flow import Kind, analyze_flow
from .grid import PolarGrid, make_grid
from .hj import compose_W, solve_distance, verify_local_bounds
from .problem import ProblemInstance, load_problem
from .riccati import build_test_functions, riccati_for, trace_identity_check
from .sigma import predict_limit

CHECKS = ("eigen", "flow", "sigma", "distance", "local-bounds", "penalized")
DEFAULT_CHECKS = CHECKS
DEFAULT_EPS = (0.08, 0.04, 0.02, 0.01)
CSV_COLUMNS = ("problem", "epsilon", "grid", "lambda", "lambda_extrap", "sigma_max", "gap",
               "supW_err", "wall_seconds")
MONOTONE_NOISE = 1e-3
PENALTY_TOL = 1e-8


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment.

    ``problem`` is a catalog name, a short catalog prefix (``P4``), an inline
    JSON object or a path to a problem JSON file.  ``grids`` are node counts
    per chart direction; rules are evaluated on the finest grid.
    """

    problem: str
    grids: tuple[int, ...] = (128,)
    eps: tuple[float, ...] = DEFAULT_EPS
    delta: float = 0.05
    checks: tuple[str, ...] = DEFAULT_CHECKS
    out: str = "runs"
    scheme: str = "fitted"
    lambda_tol: float = 0.1
    w_tol: float = 0.05
    penalized_tol: float = 0.15
    kappa: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "grids", tuple(int(n) for n in self.grids))
        object.__setattr__(self, "eps", tuple(float(e) for e in self.eps))
        unknown = set(self.checks) - set(CHECKS)
        if unknown:
            raise ConfigError(f"unknown checks {sorted(unknown)}; choose from {CHECKS}")
        object.__setattr__(self, "checks", tuple(c for c in CHECKS if c in set(self.checks)))
        if not self.grids:
            raise ConfigError("at least one grid size is required")
        for n in self.grids:
            q = n // 32
            if n < 32 or n % 32 or q & (q - 1):
                raise ConfigError(f"grid size {n} is not a power-of-two multiple of 32")
        if not self.eps:
            raise ConfigError("at least one epsilon is required")
        if any(e <= 0 for e in self.eps):
            raise ConfigError("epsilon values must be positive")
        if any(b >= a for a, b in zip(self.eps, self.eps[1:])):
            raise ConfigError("epsilon list must be strictly decreasing")
        if not 0 < self.delta <= 0.2:
            raise ConfigError("delta must lie in (0, 0.2]")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")

    def content(self) -> dict:
        """Everything that determines the numbers (the output directory does not)."""
        d = asdict(self)
        d.pop("out")
        d["problem"] = load_problem(self.problem).to_dict()
        d["grids"] = list(self.grids)
        d["eps"] = list(self.eps)
        d["checks"] = list(self.checks)
        return d

    @property
    def config_hash(self) -> str:
        text = json.dumps(self.content(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class Rule:
    name: str
    value: float | None
    tolerance_name: str
    tolerance: float
    passed: bool
    detail: str = ""


@dataclass
class TheoremReport:
    config: dict
    config_hash: str
    problem: str
    stages: list = field(default_factory=list)
    components: list = field(default_factory=list)
    excluded: list = field(default_factory=list)
    sigma: dict | None = None
    riccati: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # one per (grid, epsilon)
    extrapolation: list = field(default_factory=list)  # one per grid
    lambda0: float | None = None
    distance: dict | None = None
    local_bounds: dict | None = None
    penalized: dict | None = None
    diagnostics: dict = field(default_factory=dict)
    rules: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)  # kept out of report.json

    @classmethod
    def from_dict(cls, d: dict) -> "TheoremReport":
        """Rebuild a report from ``report.json`` (timings are not part of it)."""
        keys = ("stages", "components", "excluded", "sigma", "riccati", "rows",
                "extrapolation", "lambda0", "distance", "local_bounds", "penalized",
                "diagnostics", "artifacts")
        rep = cls(d["config"], d["config_hash"], d["problem"], **{k: d.get(k) for k in keys})
        rep.rules = [Rule(**r) for r in d.get("rules", [])]
        return rep

    @property
    def failed_stages(self) -> list[str]:
        return [s["stage"] for s in self.stages if s["status"] == "failed"]

    @property
    def passed(self) -> bool:
        return not self.failed_stages and all(r.passed for r in self.rules)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def to_dict(self) -> dict:
        return _clean({
            "config_hash": self.config_hash,
            "problem": self.problem,
            "config": self.config,
            "passed": self.passed,
            "stages": self.stages,
            "rules": [asdict(r) for r in self.rules],
            "lambda0": self.lambda0,
            "extrapolation": self.extrapolation,
            "rows": self.rows,
            "sigma": self.sigma,
            "components": self.components,
            "excluded": self.excluded,
            "riccati": self.riccati,
            "distance": self.distance,
            "local_bounds": self.local_bounds,
            "penalized": self.penalized,
            "diagnostics": self.diagnostics,
            "artifacts": sorted(self.artifacts),
        })


# --- serialization helpers ---------------------------------------------------------

def _clean(obj):
    """Plain JSON types; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2) + "\n"


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def field_csv(grid: PolarGrid, **columns) -> str:
    """Node table with ``r, phi, x, y`` followed by the given columns."""
    buf = io.StringIO()
    names = ["r", "phi", "x", "y", *columns]
    phi = np.broadcast_to(grid.phi[None, :], grid.shape)
    data = [grid.radius, phi, grid.x, grid.y, *columns.values()]
    flat = np.stack([np.asarray(d, dtype=float).ravel() for d in data], -1)
    buf.write(",".join(names) + "\n")
    np.savetxt(buf, flat, delimiter=",", fmt="%.17g")
    return buf.getvalue()


def n_threads(n_jobs: int) -> int:
    cap = os.environ.get("SPECLAB_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_jobs))


# --- the pipeline --------------------------------------------------------------

class _Stages:
    def __init__(self, report: TheoremReport):
        self.report = report

    def run(self, name: str, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            out = fn(*args, **kwargs)
        except Exception as exc:  # recorded, the pipeline continues where it can
            self.report.stages.append({"stage": name, "status": "failed",
                                       "error": f"{type(exc).__name__}: {exc}"})
            self.report.timings[name] = time.perf_counter() - t0
            self.report.timings.setdefault("tracebacks", {})[name] = traceback.format_exc()
            return None
        self.report.stages.append({"stage": name, "status": "ok", "error": None})
        self.report.timings[name] = time.perf_counter() - t0
        return out

    def skip(self, name: str, reason: str):
        self.report.stages.append({"stage": name, "status": "skipped", "error": reason})


def _eps_tag(e: float) -> str:
    return f"{e:.6g}"


def _sup_error(pair: EigenPair, W: np.ndarray) -> float:
    return float(np.max(np.abs(pair.W - W)))


def _monotone(eps, lams, noise: float = MONOTONE_NOISE) -> bool:
    order = np.argsort(eps)
    d = np.diff(np.asarray(lams, float)[order])
    return bool(np.all(d >= -noise) or np.all(d <= noise))


def run_experiment(config: ExperimentConfig, write: bool = True) -> TheoremReport:
    """Run the full pipeline; stage failures are recorded and the report is still emitted."""
    t_start = time.perf_counter()
    out = Path(config.out)
    problem: ProblemInstance = load_problem(config.problem)
    report = TheoremReport(config.content(), config.config_hash, problem.name)
    stages = _Stages(report)
    checks = set(config.checks)
    files: dict[str, str] = {}

    def artifact(name: str, text: str):
        files[name] = text
        report.artifacts.append(name)

    # flow and scores
    components = []
    flow = stages.run("flow", analyze_flow, problem) if checks & {"flow", "sigma", "distance"} else None
    if flow is not None:
        components = flow["components"]
        report.components = [c.to_dict() for c in components]
        report.excluded = flow["excluded"]
        artifact("flow.json", dumps({"components": report.components, "excluded": report.excluded}))

    sig = None
    if components and checks & {"sigma", "distance", "local-bounds", "penalized"}:
        sig = stages.run("sigma", predict_limit, components, problem)
        if sig is not None:
            report.sigma = sig.to_dict()
            report.lambda0 = sig.lambda0
            artifact("sigma.json", dumps(report.sigma))
    if components and "sigma" in checks:
        def _riccati():
            rows = []
            for c in components:
                sol = riccati_for(c, problem)
                tr = trace_identity_check(sol, c)
                rows.append({"component": c.label(), "ok": bool(sol.ok),
                             "certificates": sol.certificates(), "trace": tr.to_dict()})
            return rows
        ric = stages.run("riccati", _riccati)
        if ric is not None:
            report.riccati = ric
            artifact("riccati.json", dumps(ric))

    # eigen sweeps, parallel over (grid, epsilon)
    pairs: dict[tuple[int, float], EigenPair] = {}
    if "eigen" in checks:
        jobs = [(n, e) for n in config.grids for e in config.eps]
        grids = {n: make_grid(problem.domain, n) for n in config.grids}

        def _solve(job):
            n, e = job
            t0 = time.perf_counter()
            try:
                return job, solve(problem, e, grids[n], config.scheme), None, time.perf_counter() - t0
            except Exception as exc:
                return job, None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0

        with ThreadPoolExecutor(max_workers=n_threads(len(jobs))) as pool:
            results = list(pool.map(_solve, jobs))
        errors = []
        for (n, e), pair, err, dt in results:
            report.timings[f"eigen n={n} eps={_eps_tag(e)}"] = dt
            if err:
                errors.append(f"n={n} eps={_eps_tag(e)}: {err}")
                continue
            pairs[(n, e)] = pair
            tag = f"eigen/n{n}_eps{_eps_tag(e)}"
            artifact(f"{tag}.json", dumps(pair.metadata()))
            artifact(f"{tag}.csv", field_csv(pair.grid, u=pair.u, W=pair.W))
        report.stages.append({"stage": "eigen", "status": "failed" if errors else "ok",
                              "error": "; ".join(errors) or None})

    finest = max(config.grids)
    for n in config.grids:
        done = [(e, pairs[(n, e)]) for e in config.eps if (n, e) in pairs]
        if not done:
            continue
        eps_n = [e for e, _ in done]
        lams = [p.lam for _, p in done]
        l0, slope = extrapolate_linear(eps_n, lams)
        report.extrapolation.append({"grid": n, "lambda_extrap": l0, "slope": slope,
                                     "n_fit": min(3, len(eps_n)),
                                     "monotone": _monotone(eps_n, lams)})
    if pairs:
        report.diagnostics["gradient_bound"] = gradient_bound_diagnostic(
            [pairs[(finest, e)] for e in config.eps if (finest, e) in pairs])
        report.diagnostics["monotone_in_eps"] = all(x["monotone"] for x in report.extrapolation)

    # distance field of the maximizer (and the pairwise order when all fields exist)
    W = None
    dgrid = make_grid(problem.domain, finest)
    if "distance" in checks and sig is not None:
        if not sig.unique:
            stages.skip("distance", "maximizer of sigma is not unique")
        else:
            def _distance():
                fields = [solve_distance(problem, c, dgrid) for c in components]
                return fields, compose_W(components, sig, fields)
            res = stages.run("distance", _distance)
            if res is not None:
                fields, composed = res
                W = composed.values
                report.distance = {"grid": finest, "composed": composed.to_dict(),
                                   "fields": [f.metadata() for f in fields]}
                for k, f in enumerate(fields):
                    artifact(f"distance/n{finest}_k{k}.csv", field_csv(dgrid, W=f.values))
                artifact("distance/order.json", dumps(composed.to_dict()))

    # rows of the comparison table
    ext = {x["grid"]: x["lambda_extrap"] for x in report.extrapolation}
    for n in config.grids:
        for e in config.eps:
            if (n, e) not in pairs:
                continue
            p = pairs[(n, e)]
            supw = _sup_error(p, W) if (W is not None and n == finest) else None
            report.rows.append({"problem": problem.name, "epsilon": e, "grid": n, "lambda": p.lam,
                                "lambda_extrap": ext.get(n), "sigma_max": report.lambda0,
                                "gap": (None if report.lambda0 is None or n not in ext
                                        else abs(ext[n] - report.lambda0)),
                                "supW_err": supw, "iterations": p.iterations,
                                "residual": p.residual, "c_range": list(p.c_range)})

    # barrier functions around an interior-point maximizer
    if "local-bounds" in checks and sig is not None and W is not None:
        comp = sig.maximizer
        if comp.kind is Kind.INTERIOR_POINT:
            def _local():
                pair = build_test_functions(comp, config.delta, problem=problem)
                rep = verify_local_bounds(problem, comp, dgrid, W, pair)
                return {"component": comp.label(), "checks": pair.checks, **rep.to_dict()}
            lb = stages.run("local-bounds", _local)
            if lb is not None:
                report.local_bounds = lb
                artifact("local_bounds.json", dumps(lb))
        else:
            stages.skip("local-bounds", "sampled bounds apply to interior fixed points")

    if "penalized" in checks and sig is not None:
        e = min(config.eps)
        if (finest, e) in pairs:
            def _penalized():
                keep = sig.maximizer.points
                others = [c.points for c in components if c is not sig.maximizer]
                pb = penalized_eigenpair(problem, e, pairs[(finest, e)].grid, keep,
                                         kappa=config.kappa, scheme=config.scheme,
                                         other_points=others)
                return {"epsilon": e, "grid": finest, "kappa": config.kappa,
                        "keep": sig.maximizer.label(), "lambda_penalized": pb.lam,
                        "lambda": pairs[(finest, e)].lam, "residual": pb.residual}
            pen = stages.run("penalized", _penalized)
            if pen is not None:
                report.penalized = pen
                artifact("penalized.json", dumps(pen))
        else:
            stages.skip("penalized", "no unpenalized solve at the smallest epsilon")

    report.rules = _rules(config, report, pairs, finest)
    report.timings["total"] = time.perf_counter() - t_start
    if write:
        for name, text in files.items():
            atomic_write(out / name, text)
        emit_report(report, out)
    return report


def _rules(config: ExperimentConfig, report: TheoremReport, pairs, finest) -> list[Rule]:
    rules = []
    if pairs:
        worst = max(max(p.c_range[0] - p.lam, p.lam - p.c_range[1]) for p in pairs.values())
        rules.append(Rule("eigen_sandwich", worst, "LAMBDA_TOL", LAMBDA_TOL, worst <= LAMBDA_TOL,
                          "min c - tol <= lambda <= max c + tol for every solve"))
        res = max(p.residual / (1 + abs(p.lam)) for p in pairs.values())
        rules.append(Rule("eigen_residual", res, "residual_tol", 1e-8, res <= 1e-8,
                          "||A u - lambda u|| / (1 + |lambda|)"))
    if report.riccati:
        bad = [r["component"] for r in report.riccati if not (r["ok"] and r["trace"]["ok"])]
        rules.append(Rule("riccati_certificates", float(len(bad)), "failures_allowed", 0.0,
                          not bad, ", ".join(bad)))
    ext = {x["grid"]: x["lambda_extrap"] for x in report.extrapolation}
    if report.lambda0 is not None and finest in ext:
        g = abs(ext[finest] - report.lambda0)
        rules.append(Rule("lambda_limit", g, "lambda_tol", config.lambda_tol,
                          g <= config.lambda_tol, f"|lambda_extrap - max sigma| on n={finest}"))
    if report.distance is not None:
        e = min(config.eps)
        supw = next((r["supW_err"] for r in report.rows
                     if r["grid"] == finest and r["epsilon"] == e), None)
        if supw is not None:
            rules.append(Rule("W_limit", supw, "w_tol", config.w_tol, supw <= config.w_tol,
                              f"sup |W_eps - W| at eps={_eps_tag(e)} on n={finest}"))
    if report.local_bounds is not None:
        v = report.local_bounds["violations"]
        rules.append(Rule("local_bounds", float(v), "violations_allowed", 0.0, v == 0,
                          f"delta={report.local_bounds['delta']}"))
    if report.penalized is not None:
        pen = report.penalized
        over = pen["lambda_penalized"] - pen["lambda"]
        rules.append(Rule("penalized_lower_bound", over, "PENALTY_TOL", PENALTY_TOL,
                          over <= PENALTY_TOL, "penalized lambda <= lambda + tol"))
        if report.lambda0 is not None:
            g = abs(pen["lambda_penalized"] - report.lambda0)
            rules.append(Rule("penalized_limit", g, "penalized_tol", config.penalized_tol,
                              g <= config.penalized_tol, "|penalized lambda - max sigma|"))
    return rules


# --- output ----------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_csv(report: TheoremReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.rows:
        key = f"eigen n={r['grid']} eps={_eps_tag(r['epsilon'])}"
        row = {**r, "wall_seconds": report.timings.get(key)}
        w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def report_markdown(report: TheoremReport) -> str:
    def num(v, f="{:.6f}"):
        return "" if v is None else f.format(v)

    lines = [f"# {report.problem} ({report.config_hash[:12]})", ""]
    lines.append("| epsilon | grid | lambda | lambda_extrap | sigma_max | gap | supW_err |")
    lines.append("|---|---|---|---|---|---|---|")
    for r in report.rows:
        lines.append(f"| {r['epsilon']:g} | {r['grid']} | {num(r['lambda'])} | "
                     f"{num(r['lambda_extrap'])} | {num(r['sigma_max'])} | {num(r['gap'])} | "
                     f"{num(r['supW_err'])} |")
    for x in report.extrapolation:
        gap = None if report.lambda0 is None else abs(x["lambda_extrap"] - report.lambda0)
        lines.append(f"| extrapolated | {x['grid']} | | {num(x['lambda_extrap'])} | "
                     f"{num(report.lambda0)} | {num(gap)} | |")
    lines += ["", "| rule | value | tolerance | result |", "|---|---|---|---|"]
    for r in report.rules:
        lines.append(f"| {r.name} | {num(r.value, '{:.3e}')} | {r.tolerance_name} = "
                     f"{r.tolerance:g} | {'PASS' if r.passed else 'FAIL'} |")
    lines += ["", "| stage | status | error |", "|---|---|---|"]
    for s in report.stages:
        lines.append(f"| {s['stage']} | {s['status']} | {s['error'] or ''} |")
    return "\n".join(lines) + "\n"


FORMATS = ("json", "csv", "markdown")


def emit_report(report: TheoremReport, out, formats=FORMATS) -> list[Path]:
    """Write ``report.json`` / ``report.csv`` / ``report.md`` and ``timings.json``."""
    out = Path(out)
    written = []
    render = {"json": ("report.json", lambda: dumps(report.to_dict())),
              "csv": ("report.csv", lambda: report_csv(report)),
              "markdown": ("report.md", lambda: report_markdown(report))}
    for f in formats:
        if f not in render:
            raise ValueError(f"unknown format {f!r}; choose from {FORMATS}")
        name, fn = render[f]
        atomic_write(out / name, fn())
        written.append(out / name)
    timings = {k: v for k, v in report.timings.items() if k != "tracebacks"}
    atomic_write(out / "timings.json", dumps({"config_hash": report.config_hash,
                                              "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
                                              "wall_seconds": timings,
                                              "tracebacks": report.timings.get("tracebacks", {})}))
    written.append(out / "timings.json")
    return written
