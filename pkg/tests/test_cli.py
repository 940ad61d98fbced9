import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from reachopt import cli

SMALL = {"task": {"A": 0.3, "W": 0.12, "n_nodes": 10}, "sweep": {"n_nodes": 10}}


def write_config(tmp_path, data, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_missing_config_is_usage_error(tmp_path):
    assert run("plan", "--config", tmp_path / "nope.yaml", "--out", tmp_path) == cli.EXIT_USAGE


def test_unknown_section_is_usage_error(tmp_path):
    cfg = write_config(tmp_path, {"bogus": 1})
    assert run("plan", "--config", cfg, "--out", tmp_path) == cli.EXIT_USAGE


def test_bad_subcommand():
    assert run("launch") == cli.EXIT_USAGE


def test_plan_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "plan"
    assert run("plan", "--config", write_config(tmp_path, SMALL), "--out", out) == cli.EXIT_OK
    for name in ("trajectory.csv", "velocity.csv", "activations.svg", "path.svg", "plan.yaml"):
        assert (out / name).is_file()
    summary = yaml.safe_load((out / "plan.yaml").read_text())
    assert 0.1 < summary["t_f"] < 5.0
    rows = np.loadtxt(out / "trajectory.csv", delimiter=",", skiprows=1)
    assert rows.shape == (10, 19)
    assert (out / "activations.svg").read_text().startswith("<svg")
    assert "t_f" in capsys.readouterr().out
    assert not list(out.glob(".*.tmp"))


def test_unreachable_target_exit_code(tmp_path):
    cfg = write_config(tmp_path, {"task": {"A": 0.9, "W": 0.1, "n_nodes": 10}})
    assert run("plan", "--config", cfg, "--out", tmp_path) == cli.EXIT_INFEASIBLE


def test_solver_failure_exit_code(tmp_path):
    cfg = write_config(tmp_path, {**SMALL, "solver": {"max_iterations": 1}})
    assert run("plan", "--config", cfg, "--out", tmp_path) == cli.EXIT_SOLVER


def test_task_file_and_arm_file(tmp_path):
    (tmp_path / "arm.yaml").write_text("arm: {l1: 0.31}\nnoise: {sigma: 0.02}\n")
    (tmp_path / "task.yaml").write_text(yaml.safe_dump({"task": {
        "x0": [0.2, 1.6, 0.0, 0.0], "p_target": [0.0, 0.45], "width": 0.15, "n_nodes": 8}}))
    cfg = cli.load_config(write_config(tmp_path, {"arm_file": "arm.yaml", "task_file": "task.yaml"}), tmp_path, None)
    assert cfg.params.l1 == 0.31
    assert cfg.noise.sigma_w[0, 0] == pytest.approx(4e-4)
    assert cfg.task.n_nodes == 8


def test_seed_flag_overrides_config(tmp_path):
    cfg = cli.load_config(write_config(tmp_path, {"seed": 4}), tmp_path, 11)
    assert cfg.seed == cfg.mpc.seed == cfg.sweep.seed == 11


def test_mpc_timeout_and_determinism(tmp_path):
    cfg = write_config(tmp_path, {**SMALL, "mpc": {"max_replans": 1}})
    assert run("mpc", "--config", cfg, "--out", tmp_path / "a", "--seed", 5) == cli.EXIT_TIMEOUT
    assert run("mpc", "--config", cfg, "--out", tmp_path / "b", "--seed", 5) == cli.EXIT_TIMEOUT
    a = (tmp_path / "a" / "trace.csv").read_bytes()
    assert a == (tmp_path / "b" / "trace.csv").read_bytes()
    assert a.splitlines()[0].decode().startswith("t,theta_s")


def test_mpc_success(tmp_path, capsys):
    assert run("mpc", "--config", write_config(tmp_path, SMALL), "--out", tmp_path) == cli.EXIT_OK
    assert (tmp_path / "velocity.svg").is_file()
    assert "replans" in capsys.readouterr().out


def test_fitts_single_cell_is_degenerate(tmp_path, capsys):
    cfg = write_config(tmp_path, {"sweep": {"grid": [[0.3, 0.12]], "n_nodes": 8}})
    assert run("fitts", "--config", cfg, "--out", tmp_path) == cli.EXIT_USAGE
    assert "two trials" in capsys.readouterr().err
    assert (tmp_path / "trials_offline.csv").is_file()


def test_fitts_both_modes(tmp_path):
    cfg = write_config(tmp_path, {"sweep": {"grid": [[0.3, 0.16], [0.4, 0.12]], "n_nodes": 8, "repeats": 1}})
    assert run("fitts", "--config", cfg, "--out", tmp_path, "--mode", "both") == cli.EXIT_OK
    svg = (tmp_path / "fitts.svg").read_text()
    assert svg.count("<polyline") == 2
    for mode in ("offline", "mpc"):
        fit = yaml.safe_load((tmp_path / f"fit_{mode}.yaml").read_text())
        assert fit["trial_count"] == 2 and fit["mode"] == mode


def test_fitts_empty_sweep(tmp_path):
    cfg = write_config(tmp_path, {"sweep": {"grid": [[0.9, 0.1]], "n_nodes": 8}})
    assert run("fitts", "--config", cfg, "--out", tmp_path) == cli.EXIT_SOLVER


@pytest.fixture(scope="module")
def quick_validate(tmp_path_factory):
    path = tmp_path_factory.mktemp("v")
    (path / "v.yaml").write_text("validate: {n_points: 5}\n")
    return path


def test_validate_passes_on_defaults(quick_validate):
    assert run("validate", "--config", quick_validate / "v.yaml", "--out", quick_validate) == cli.EXIT_OK
    report = json.loads((quick_validate / "validation.json").read_text())
    assert report["passed"] and {c["family"] for c in report["checks"]} >= {
        "invariants", "gradients", "exactness", "psd", "covariance", "regression"}


def test_validate_reports_injected_noise_fault(quick_validate, tmp_path):
    code = run("validate", "--config", quick_validate / "v.yaml", "--out", tmp_path, "--inject", "asymmetric-noise")
    assert code == cli.EXIT_VALIDATION
    report = json.loads((tmp_path / "validation.json").read_text())
    failed = [c["name"] for c in report["checks"] if not c["passed"]]
    assert failed == ["noise-model"]


def test_validate_tight_tolerance_keeps_exact_checks(tmp_path):
    cfg = write_config(tmp_path, {"validate": {"n_points": 3, "gradient_tol": 1e-14}})
    assert run("validate", "--config", cfg, "--out", tmp_path) == cli.EXIT_VALIDATION
    checks = json.loads((tmp_path / "validation.json").read_text())["checks"]
    exact = [c for c in checks if c["family"] == "exactness"]
    assert exact and all(c["passed"] for c in exact)


def test_atomic_write_replaces_file(tmp_path):
    target = tmp_path / "x.csv"
    cli.write_atomic(target, "a\n")
    cli.write_atomic(target, "b\n")
    assert target.read_text() == "b\n"
    assert [p.name for p in tmp_path.iterdir()] == ["x.csv"]


@pytest.mark.parametrize("name", ["default.yaml", "quick.yaml"])
def test_shipped_configs_load(name):
    path = Path(__file__).resolve().parents[1] / "configs" / name
    cfg = cli.load_config(str(path), None, None)
    assert cfg.task.n_nodes == cfg.sweep.n_nodes
    assert len(cfg.sweep.grid) >= 2
