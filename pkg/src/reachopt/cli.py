"""Command-line interface: ``reachopt plan|mpc|fitts|validate``.

All commands read one optional YAML config (``--config``) whose sections
mirror the library objects::

    seed: 0
    arm: {l1: 0.30, f_max: [...], ...}       # or arm_file: params.yaml
    noise: {sigma: 0.03}                     # or {sigma_w: 6x6 matrix}
    task: {start_hand: [0.25, 0.35], A: 0.475, W: 0.12, k_t: 100}
                                             # or x0/p_target/width, or task_file
    solver: {max_iterations: 3000, verbosity: 0}
    mpc: {t_iter: 0.1, max_replans: 50, noise_scaling: literal}
    sweep: {grid: [[0.35, 0.16], ...], repeats: 5, workers: 1}
    validate: {n_points: 100, gradient_tol: 1.0e-6, inject: []}

Outputs go to ``--out`` and are written atomically.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import arm, lab, mpc, plots, transcribe, validation
from .errors import DegenerateDesignError, EmptySweepError, InfeasibleTaskError, ReachError
from .nlp import SolverOptions, solve

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4
EXIT_TIMEOUT = 5
EXIT_VALIDATION = 6

log = logging.getLogger("reachopt")


class UsageError(Exception):
    pass


# -- configuration ----------------------------------------------------------
@dataclass
class RunConfig:
    params: arm.ArmParams
    noise: arm.NoiseModel
    task: transcribe.ReachTask | None
    solver: SolverOptions
    mpc: mpc.MpcConfig
    sweep: lab.SweepConfig
    out: Path
    seed: int = 0
    workers: int = 1
    raw: dict = field(default_factory=dict)


def _read_yaml(path: Path) -> dict:
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise UsageError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected a mapping at top level")
    return data


def _options(cls, data: dict, what: str, **extra):
    data = dict(data or {})
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise UsageError(f"unknown {what} settings: {sorted(unknown)}")
    data.update(extra)
    return cls(**data)


def _task_from(data: dict, p: arm.ArmParams, sweep: lab.SweepConfig) -> transcribe.ReachTask:
    data = dict(data)
    if "A" in data or "W" in data or "start_hand" in data:
        # geometric form: a reach of length A along the sweep direction
        A, W = float(data.pop("A", 0.475)), float(data.pop("W", data.pop("width", 0.12)))
        start = data.pop("start_hand", sweep.start_hand)
        direction = data.pop("direction", sweep.direction)
        base = lab.SweepConfig(grid=((A, W),), start_hand=tuple(start), direction=tuple(direction),
                               k_u=float(data.pop("k_u", sweep.k_u)), k_t=float(data.pop("k_t", sweep.k_t)),
                               n_nodes=int(data.pop("n_nodes", sweep.n_nodes)))
        if data:
            raise UsageError(f"unknown task settings: {sorted(data)}")
        return base.task(A, W, p)
    try:
        return transcribe.ReachTask(**data)
    except TypeError as exc:
        raise UsageError(f"bad task section: {exc}") from exc


def load_config(path: str | None, out: str | None, seed: int | None) -> RunConfig:
    raw = _read_yaml(Path(path)) if path else {}
    base = Path(path).parent if path else Path(".")
    known = {"seed", "arm", "noise", "arm_file", "task", "task_file", "solver", "mpc", "sweep", "validate"}
    unknown = set(raw) - known
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    seed = int(raw.get("seed", 0) if seed is None else seed)
    pdata = {}
    if "arm_file" in raw:
        pdata = _read_yaml(base / raw["arm_file"])
    pdata = {"arm": {**pdata.get("arm", {}), **(raw.get("arm") or {})},
             "noise": raw.get("noise") or pdata.get("noise") or {}}
    p, nm = arm.params_from_dict(pdata)

    sweep_raw = dict(raw.get("sweep") or {})
    workers = int(sweep_raw.pop("workers", 1))
    if "grid" in sweep_raw:
        sweep_raw["grid"] = tuple(tuple(float(v) for v in cell) for cell in sweep_raw["grid"])
    for key in ("start_hand", "direction"):
        if key in sweep_raw:
            sweep_raw[key] = tuple(sweep_raw[key])
    mpc_raw = dict(raw.get("mpc") or {})
    for key in ("t_iter", "max_replans", "noise_scaling"):
        if key in mpc_raw:
            sweep_raw.setdefault(key, mpc_raw[key])
    sweep = _options(lab.SweepConfig, sweep_raw, "sweep", seed=seed)

    task = None
    if "task_file" in raw:
        task = transcribe.load_task(base / raw["task_file"])
    elif raw.get("task"):
        task = _task_from(raw["task"], p, sweep)
    else:
        A, W = lab.DEFAULT_GRID[3]
        task = sweep.task(A, W, p)

    return RunConfig(
        params=p, noise=nm, task=task,
        solver=_options(SolverOptions, raw.get("solver"), "solver"),
        mpc=_options(mpc.MpcConfig, mpc_raw, "mpc", seed=seed),
        sweep=sweep, out=Path(out or "."), seed=seed, workers=workers, raw=raw,
    )


# -- output -----------------------------------------------------------------
def write_atomic(path: Path, text: str):
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


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(v if isinstance(v, str) else f"{v:.10g}" for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def trajectory_csv(traj, p: arm.ArmParams) -> str:
    fk = arm.forward_kinematics(traj.means, p)
    H = arm.kinematics_jacobian(traj.means, p)[:, :2, :]
    var = np.einsum("nij,njk,nik->ni", H, traj.covs, H)
    header = (["t"] + [f"u{i}" for i in range(1, 7)] + ["theta_s", "theta_e", "dtheta_s", "dtheta_e"]
              + [f"P{i}{i}" for i in range(1, 5)] + ["hand_x", "hand_y", "hand_var_x", "hand_var_y"])
    diag = np.diagonal(traj.covs, axis1=1, axis2=2)
    rows = np.column_stack([traj.times, traj.controls, traj.means, diag, fk[:, :2], var])
    return _csv(header, rows)


def velocity_csv(times, speed) -> str:
    times = np.asarray(times)
    span = times[-1] - times[0]
    norm = (times - times[0]) / span if span > 0 else np.zeros_like(times)
    return _csv(["t", "t_norm", "hand_speed"], np.column_stack([times, norm, speed]))


def _plan(cfg: RunConfig, task: transcribe.ReachTask):
    transcribe.check_reachable(task, cfg.params)
    tx = transcribe.Transcription(task, cfg.params, cfg.noise)
    sol = solve(tx.problem(), transcribe.initial_guess(task, tx.layout), cfg.solver)
    return sol, transcribe.extract_trajectory(sol, tx.layout)


# -- commands -----------------------------------------------------------------
def cmd_plan(cfg: RunConfig) -> int:
    sol, traj = _plan(cfg, cfg.task)
    print(f"status {sol.status}  iterations {sol.iterations}  objective {sol.objective_value:.6g}  "
          f"max violation {sol.max_violation:.2e}")
    if not sol.converged:
        print(f"error: planning failed ({sol.status})", file=sys.stderr)
        return EXIT_SOLVER
    p = cfg.params
    speed = lab.plan_speed(traj, p)
    m = lab.velocity_metrics(speed, traj.t_f)
    fk = arm.forward_kinematics(traj.means, p)
    out = cfg.out
    write_atomic(out / "trajectory.csv", trajectory_csv(traj, p))
    write_atomic(out / "velocity.csv", velocity_csv(traj.times, speed))
    write_atomic(out / "activations.svg", plots.chart(
        [plots.Series(traj.times, traj.controls[:, j], name) for j, name in enumerate(arm.MUSCLES)],
        "Muscle activations", "time (s)", "activation"))
    write_atomic(out / "path.svg", plots.chart(
        [plots.Series(fk[:, 0], fk[:, 1], "hand path"),
         plots.Series(*[[v] for v in cfg.task.p_target], "target", "points")],
        "End effector path", "x (m)", "y (m)"))
    write_atomic(out / "plan.yaml", yaml.safe_dump({
        "status": sol.status, "iterations": int(sol.iterations), "t_f": float(traj.t_f),
        "v_max": m.v_max, "t_max_norm": m.t_max_normalized,
        "task": transcribe.task_to_dict(cfg.task)}, sort_keys=False))
    print(f"t_f {traj.t_f:.4f} s  peak speed {m.v_max:.3f} m/s at normalized time {m.t_max_normalized:.3f}")
    return EXIT_OK


def cmd_mpc(cfg: RunConfig) -> int:
    p = cfg.params
    transcribe.check_reachable(cfg.task, p)
    trace = mpc.run_mpc(cfg.task, cfg.mpc, p, cfg.noise, cfg.solver)
    out = cfg.out
    write_atomic(out / "trace.csv", trace.to_csv(p))
    write_atomic(out / "replans.csv", _csv(
        ["time", "step", "status", "iterations", "t_f", "dt", "executed", "cold_retry"],
        [[e.time, float(e.step), e.status, float(e.iterations), e.t_f, e.dt, float(e.executed),
          str(int(e.cold_retry))]
         for e in trace.replans]))
    write_atomic(out / "velocity.svg", plots.chart(
        [plots.Series(trace.times, trace.hand_speed(p), "hand speed")],
        "Realized hand speed", "time (s)", "speed (m/s)"))
    print(f"status {trace.status}  MD {trace.md:.4f} s  replans {trace.n_replans}")
    if trace.status == mpc.SUCCESS:
        return EXIT_OK
    print(f"error: {trace.message}", file=sys.stderr)
    return EXIT_TIMEOUT if trace.status == mpc.TIMEOUT else EXIT_SOLVER


def cmd_fitts(cfg: RunConfig, mode: str) -> int:
    modes = [lab.OFFLINE, lab.MPC] if mode == "both" else [mode]
    series, status = [], EXIT_OK
    for m in modes:
        try:
            res = lab.run_sweep(cfg.sweep, m, cfg.params, cfg.noise, cfg.solver, cfg.workers)
        except EmptySweepError as exc:
            print(f"error: {m} sweep: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        write_atomic(cfg.out / f"trials_{m}.csv", res.to_csv())
        write_atomic(cfg.out / f"fit_{m}.yaml", res.summary_yaml())
        ok = [t for t in res.trials if t.ok]
        series.append(plots.Series([t.ID for t in ok], [t.MD for t in ok], f"{m} trials", "points"))
        if res.fit is None:
            print(f"error: {m} fit: {res.fit_error}", file=sys.stderr)
            status = EXIT_USAGE
            continue
        ids = np.array([min(t.ID for t in ok), max(t.ID for t in ok)])
        series.append(plots.Series(ids, res.fit.predict(ids), f"{m} fit"))
        print(f"{m}: MD = {res.fit.a:.4f} + {res.fit.b:.4f} ID  R^2 {res.fit.r_squared:.3f}  "
              f"({res.fit.n_trials} trials)")
    write_atomic(cfg.out / "fitts.svg", plots.chart(series, "Fitts' law", "ID (bits)", "MD (s)"))
    return status


def cmd_validate(raw: dict, out: Path, seed: int, inject: list[str]) -> int:
    vcfg = dict(raw.get("validate") or {})
    faults = list(vcfg.pop("inject", [])) + list(inject)
    try:
        checks = validation.run_all(raw.get("arm"), raw.get("noise"), seed=seed, faults=faults, **vcfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad validate settings: {exc}") from exc
    report = {"passed": all(c.passed for c in checks), "seed": seed, "faults": faults,
              "checks": [c.to_dict() for c in checks]}
    write_atomic(out / "validation.json", json.dumps(report, indent=2) + "\n")
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  {c.detail}")
    if report["passed"]:
        return EXIT_OK
    print("failed: " + ", ".join(c.name for c in checks if not c.passed), file=sys.stderr)
    return EXIT_VALIDATION


# -- entry point --------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="reachopt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("plan", parents=[common], help="plan one reach offline")
    sub.add_parser("mpc", parents=[common], help="execute one reach under replanning")
    fitts = sub.add_parser("fitts", parents=[common], help="sweep targets and fit Fitts' law")
    fitts.add_argument("--mode", choices=["offline", "mpc", "both"], default="offline")
    val = sub.add_parser("validate", parents=[common], help="run the self-check suite")
    val.add_argument("--inject", action="append", default=[], choices=validation.FAULTS,
                     help="inject a fault to exercise the report")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "validate":
            raw = _read_yaml(Path(args.config)) if args.config else {}
            seed = int(raw.get("seed", 0) if args.seed is None else args.seed)
            return cmd_validate(raw, Path(args.out), seed, args.inject)
        cfg = load_config(args.config, args.out, args.seed)
        if args.verbose:
            cfg.solver = replace(cfg.solver, verbosity=max(cfg.solver.verbosity, 1))
        if args.command == "plan":
            return cmd_plan(cfg)
        if args.command == "mpc":
            return cmd_mpc(cfg)
        return cmd_fitts(cfg, args.mode)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleTaskError as exc:
        print(f"infeasible task: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DegenerateDesignError as exc:
        print(f"degenerate design: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ReachError as exc:
        # argument and domain errors in the config are usage problems
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, ValueError) else EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
