import json

import numpy as np
import pytest

from speclab import cli, harness
from speclab.harness import ConfigError, ExperimentConfig, TheoremReport, run_experiment


@pytest.mark.parametrize("kwargs", [
    dict(grids=(48,)), dict(grids=(96,)), dict(grids=()),
    dict(eps=(0.01, 0.02)), dict(eps=(0.02, 0.02)), dict(eps=(0.04, -0.01)), dict(eps=()),
    dict(delta=0.0), dict(checks=("eigen", "bogus")), dict(scheme="central"),
])
def test_invalid_configs(kwargs):
    with pytest.raises(ConfigError):
        ExperimentConfig("P0", **kwargs)


def test_config_hash_ignores_output_dir_and_alias():
    a = ExperimentConfig("P4", out="a")
    b = ExperimentConfig("P4_hopf_cycle", out="b")
    assert a.config_hash == b.config_hash
    assert a.config_hash != ExperimentConfig("P4", eps=(0.04, 0.02)).config_hash


@pytest.fixture(scope="module")
def p0_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("p0")
    cfg = ExperimentConfig("P0", grids=(64,), eps=(0.05,), out=str(out))
    return cfg, run_experiment(cfg), out


def test_constant_problem_passes_trivially(p0_run):
    cfg, rep, out = p0_run
    assert rep.passed and rep.exit_code == 0
    (row,) = rep.rows
    assert abs(row["lambda"] - 3) <= 1e-10
    assert row["supW_err"] <= 1e-6
    assert {r.name for r in rep.rules} >= {"eigen_sandwich", "lambda_limit", "W_limit"}
    assert all(r.tolerance_name for r in rep.rules)


def test_artifacts_exist_and_report_round_trips(p0_run):
    cfg, rep, out = p0_run
    data = json.loads((out / "report.json").read_text())
    assert data["config_hash"] == cfg.config_hash
    for name in data["artifacts"]:
        assert (out / name).exists(), name
    assert (out / "timings.json").exists()
    again = TheoremReport.from_dict(data)
    assert harness.dumps(again.to_dict()) == (out / "report.json").read_text()
    # the eigen artifact carries the reported eigenvalue
    meta = json.loads((out / "eigen/n64_eps0.05.json").read_text())
    assert meta["lambda"] == data["rows"][0]["lambda"]


def test_field_csv_layout(p0_run):
    cfg, rep, out = p0_run
    lines = (out / "eigen/n64_eps0.05.csv").read_text().splitlines()
    assert lines[0] == "r,phi,x,y,u,W"
    assert len(lines) == 1 + 64 * 64


def test_csv_and_markdown(p0_run):
    cfg, rep, out = p0_run
    head = (out / "report.csv").read_text().splitlines()[0]
    assert head == ",".join(harness.CSV_COLUMNS)
    md = (out / "report.md").read_text()
    assert "| extrapolated |" in md and "PASS" in md


def test_failed_stage_gives_partial_report(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(harness, "solve", boom)
    rep = run_experiment(ExperimentConfig("P0", grids=(32,), eps=(0.05,), out=str(tmp_path)))
    stages = {s["stage"]: s for s in rep.stages}
    assert stages["eigen"]["status"] == "failed"
    assert "solver exploded" in stages["eigen"]["error"]
    assert stages["flow"]["status"] == "ok"
    assert rep.exit_code != 0
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["passed"] is False and data["sigma"] is not None


def test_monotone_trend_helper():
    assert harness._monotone([0.08, 0.04, 0.02], [1.5, 1.7, 1.9])
    assert harness._monotone([0.08, 0.04, 0.02], [1.9, 1.7, 1.7005])
    assert not harness._monotone([0.08, 0.04, 0.02], [1.5, 1.9, 1.6])


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("SPECLAB_THREADS", "2")
    assert harness.n_threads(8) == 2
    monkeypatch.setenv("SPECLAB_THREADS", "16")
    assert harness.n_threads(3) == 3


def test_atomic_write_replaces(tmp_path):
    f = tmp_path / "x" / "a.txt"
    harness.atomic_write(f, "one")
    harness.atomic_write(f, "two")
    assert f.read_text() == "two"
    assert [p.name for p in f.parent.iterdir()] == ["a.txt"]


def test_cli_catalog(capsys):
    assert cli.main(["catalog"]) == 0
    assert "P4_hopf_cycle" in capsys.readouterr().out
    assert cli.main(["catalog", "--problem", "P2"]) == 0
    assert json.loads(capsys.readouterr().out)["name"] == "P2_spiral_source"


def test_cli_eigen_and_report(tmp_path, capsys):
    code = cli.main(["eigen", "--problem", "P0", "--eps", "0.08,0.02", "--grid", "32",
                     "--out", str(tmp_path)])
    assert code == 0
    capsys.readouterr()
    assert cli.main(["report", "--out", str(tmp_path), "--format", "csv"]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert len(rows) == 3 and rows[1].startswith("P0_constant,0.08,32,")


def test_cli_rejects_bad_config(tmp_path, capsys):
    assert cli.main(["eigen", "--eps", "0.01,0.02", "--out", str(tmp_path)]) == 2
    assert "strictly decreasing" in capsys.readouterr().err


def test_cli_analyze_boundary_drift(tmp_path, capsys):
    assert cli.main(["analyze", "--problem", "P3", "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "sigma.json").read_text())
    assert data["lambda0"] == pytest.approx(1.0, abs=1e-8)
