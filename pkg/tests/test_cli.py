"""Command-line interface: artifacts, exit codes, scenario loading."""

import json

import pytest

from ofmpc.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main
from ofmpc.simulator import Scenario, trajectory_columns
from ofmpc.models import get_benchmark


def scenario_file(tmp_path, **overrides):
    scn = Scenario(
        name="cli-short",
        benchmark="pendulum",
        controller="ofmpc",
        steps=25,
        setpoint={"breakpoints": [[0, 1.0]]},
        x0=(1.2, 0.0),
    )
    blob = scn.to_json()
    blob.update(overrides)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(blob))
    return path


def test_run_writes_trajectory_and_summary(tmp_path, capsys):
    path = scenario_file(tmp_path)
    out = tmp_path / "out"
    code = main(["run", str(path), "--out", str(out)])
    assert code == EXIT_OK
    csv_path = out / "trajectory.csv"
    summary_path = out / "summary.json"
    assert csv_path.exists() and summary_path.exists()
    model, _ = get_benchmark("pendulum")
    header = csv_path.read_text().splitlines()[0]
    assert header == ",".join(trajectory_columns(model))
    summary = json.loads(summary_path.read_text())
    assert summary["scenario"] == "cli-short"
    assert summary["failure"] is None
    assert "cli-short" in capsys.readouterr().out


def test_run_reports_config_error_for_missing_file(tmp_path):
    assert main(["run", str(tmp_path / "absent.json"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_run_reports_config_error_for_bad_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_run_reports_config_error_for_unknown_builtin(tmp_path):
    assert main(["run", "not_a_scenario", "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_run_reports_solver_failure_with_partial_logs(tmp_path, capsys):
    path = scenario_file(
        tmp_path, channels={"0": {"type": "constant", "value": -1e200}}
    )
    out = tmp_path / "out"
    code = main(["run", str(path), "--out", str(out), "--skip-mismatch"])
    assert code == EXIT_SOLVER
    assert (out / "trajectory.csv").exists()
    assert json.loads((out / "summary.json").read_text())["failure"] is not None
    assert "FAILED" in capsys.readouterr().out


def test_bad_usage_exits_2(capsys):
    assert main(["run"]) == 2
    assert main(["--no-such-flag"]) == 2
    assert main(["verify-terminal", "tank"]) == 2
    capsys.readouterr()


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == EXIT_OK
    out = capsys.readouterr().out.split()
    assert "pendulum_exp1_ofmpc" in out and "cstr_b_tmpc" in out


def test_rank_check_both_benchmarks(capsys):
    assert main(["rank-check", "pendulum"]) == EXIT_OK
    assert main(["rank-check", "cstr"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "M1 full row rank: true" in out
    assert "M2 invertible: true" in out


def test_verify_terminal_pendulum(capsys):
    assert main(["verify-terminal", "pendulum", "--samples", "100"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "decrease violations: 0" in out
    assert "invariance violations: 0" in out


def test_sweep_runs_multiple_and_propagates_worst_code(tmp_path):
    good = scenario_file(tmp_path)
    bad = tmp_path / "bad.json"
    blob = json.loads(good.read_text())
    blob["name"] = "cli-bad"
    blob["channels"] = {"0": {"type": "constant", "value": -1e200}}
    bad.write_text(json.dumps(blob))
    out = tmp_path / "sweep"
    code = main(["sweep", str(good), str(bad), "--out", str(out), "--skip-mismatch"])
    assert code == EXIT_SOLVER
    assert (out / "scenario" / "trajectory.csv").exists()
    assert (out / "bad" / "trajectory.csv").exists()


def test_sweep_validates_configs_before_running(tmp_path):
    good = scenario_file(tmp_path)
    out = tmp_path / "sweep"
    code = main(["sweep", str(good), "no_such_builtin", "--out", str(out)])
    assert code == EXIT_CONFIG
    assert not out.exists()  # nothing ran
