"""Fitts'-law experiments: velocity metrics, sweeps over (A, W) and regression."""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from . import arm, mpc, transcribe
from .errors import DegenerateDesignError, DomainError, EmptySweepError, InvalidArgumentError, ReachError
from .nlp import SolverOptions, solve

log = logging.getLogger(__name__)

OFFLINE = "offline"
MPC = "mpc"

SWEEP_COLUMNS = ["A", "W", "ID", "mode", "repeat", "MD", "status", "v_max", "t_max_norm"]

# A in {0.35, 0.475, 0.60} m and W in {0.16, 0.12} m: ID from 2.13 to 3.32 bits
DEFAULT_GRID = tuple((A, W) for A in (0.35, 0.475, 0.60) for W in (0.16, 0.12))


def compute_id(A, W):
    """Index of difficulty ``log2(2A/W)`` in bits."""
    A = np.asarray(A, dtype=float)
    W = np.asarray(W, dtype=float)
    if np.any(~(A > 0)) or np.any(~(W > 0)):
        raise DomainError("target distance and width must be positive")
    out = np.log2(2.0 * A / W)
    return float(out) if out.ndim == 0 else out


# -- velocity profiles ------------------------------------------------------
@dataclass(frozen=True, eq=False)
class VelocityMetrics:
    v_max: float
    t_max_normalized: float
    profile: np.ndarray


def velocity_metrics(profile, t_f: float | None = None, times=None) -> VelocityMetrics:
    """Peak speed and its time as a fraction of the movement duration.

    Samples are taken as uniformly spaced over ``[0, t_f]`` unless explicit
    ``times`` are given. Ties resolve to the earliest sample.
    """
    v = np.abs(np.asarray(profile, dtype=float).reshape(-1))
    if v.size < 2:
        raise InvalidArgumentError("need at least two speed samples")
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("speed samples must be finite")
    k = int(np.argmax(v))
    if times is None:
        t_norm = k / (v.size - 1)
    else:
        times = np.asarray(times, dtype=float)
        if times.shape != v.shape:
            raise InvalidArgumentError("times and profile differ in length")
        span = times[-1] - times[0]
        if not span > 0:
            raise InvalidArgumentError("times must span a positive interval")
        t_norm = (times[k] - times[0]) / span
    return VelocityMetrics(float(v[k]), float(t_norm), v)


def peak_delay(large: VelocityMetrics, small: VelocityMetrics) -> float:
    """Normalized peak-time difference, large target minus small target."""
    return large.t_max_normalized - small.t_max_normalized


def plan_speed(traj, p: arm.ArmParams) -> np.ndarray:
    fk = arm.forward_kinematics(traj.means, p)
    return np.hypot(fk[:, 2], fk[:, 3])


# -- regression -------------------------------------------------------------
@dataclass(frozen=True)
class FittsTrial:
    """One sweep cell: movement duration averaged over its successful repeats."""

    A: float
    W: float
    MD: float
    mode: str = OFFLINE
    repeats: int = 1
    status: str = "ok"

    @property
    def ID(self) -> float:
        return compute_id(self.A, self.W)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class FittsFit:
    a: float
    b: float
    r_squared: float
    n_trials: int

    def predict(self, ID):
        return self.a + self.b * np.asarray(ID, dtype=float)


def fit_fitts(trials) -> FittsFit:
    """Ordinary least squares of MD on ID, with the coefficient of determination."""
    trials = sorted(trials, key=lambda t: (t.A, t.W))
    if len(trials) < 2:
        raise DegenerateDesignError("need at least two trials")
    x = np.array([t.ID for t in trials])
    y = np.array([t.MD for t in trials], dtype=float)
    if not np.all(np.isfinite(y)):
        raise InvalidArgumentError("movement durations must be finite")
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx <= 1e-24 * max(1.0, xm * xm):
        raise DegenerateDesignError("all trials share the same index of difficulty")
    b = np.sum((x - xm) * (y - ym)) / sxx
    a = ym - b * xm
    ss_res = np.sum((y - a - b * x) ** 2)
    ss_tot = np.sum((y - ym) ** 2)
    r2 = 1.0 if ss_tot == 0.0 else float(np.clip(1.0 - ss_res / ss_tot, 0.0, 1.0))
    return FittsFit(float(a), float(b), r2, len(trials))


# -- sweeps -----------------------------------------------------------------
@dataclass(frozen=True)
class SweepConfig:
    """Geometry and weights shared by every cell of a sweep.

    Targets lie at ``start_hand + A * direction``; the start posture is
    the elbow-flexed inverse kinematics solution at rest.
    """

    grid: tuple = DEFAULT_GRID
    start_hand: tuple = (0.25, 0.35)
    direction: tuple = (-1.0, 0.0)
    k_u: float = 1.0
    k_t: float = 100.0
    n_nodes: int = 40
    repeats: int = 5
    seed: int = 0
    t_iter: float = 0.1
    max_replans: int = 50
    noise_scaling: str = mpc.LITERAL

    def __post_init__(self):
        if len(self.grid) == 0:
            raise InvalidArgumentError("sweep grid is empty")
        if self.repeats < 1:
            raise InvalidArgumentError("repeats must be at least 1")
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (2,) or not np.linalg.norm(d) > 0:
            raise InvalidArgumentError("direction must be a nonzero 2-vector")

    def task(self, A: float, W: float, p: arm.ArmParams) -> transcribe.ReachTask:
        d = np.asarray(self.direction, dtype=float)
        d = d / np.linalg.norm(d)
        start = np.asarray(self.start_hand, dtype=float)
        q0 = arm.inverse_kinematics(start, p)
        return transcribe.ReachTask(
            x0=np.r_[q0, 0.0, 0.0], p_target=start + A * d, width=W,
            k_u=self.k_u, k_t=self.k_t, n_nodes=self.n_nodes,
        )

    def repeat_seed(self, cell: int, repeat: int) -> int:
        ss = np.random.SeedSequence([self.seed, cell, repeat])
        return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class SweepRecord:
    A: float
    W: float
    ID: float
    mode: str
    repeat: int
    MD: float
    status: str
    v_max: float
    t_max_norm: float


@dataclass
class SweepResult:
    records: list[SweepRecord]
    trials: list[FittsTrial]
    fit: FittsFit | None
    fit_error: str = ""
    extras: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in self.records:
            w.writerow([_fmt(r.A), _fmt(r.W), _fmt(r.ID), r.mode, r.repeat, _fmt(r.MD), r.status,
                        _fmt(r.v_max), _fmt(r.t_max_norm)])
        return buf.getvalue()

    def summary(self) -> dict:
        out = {"mode": self.trials[0].mode if self.trials else None,
               "trial_count": sum(t.ok for t in self.trials)}
        if self.fit is not None:
            out.update(a=self.fit.a, b=self.fit.b, r_squared=self.fit.r_squared)
        else:
            out.update(a=None, b=None, r_squared=None, error=self.fit_error)
        return out

    def summary_yaml(self) -> str:
        return yaml.safe_dump(self.summary(), sort_keys=False)


def _fmt(v) -> str:
    return "nan" if v is None or not np.isfinite(v) else f"{v:.10g}"


def _offline_cell(args):
    cfg, _, _, A, W, p, nm, options = args
    task = cfg.task(A, W, p)
    tx = transcribe.Transcription(task, p, nm)
    sol = solve(tx.problem(), transcribe.initial_guess(task, tx.layout), options)
    ID = compute_id(A, W)
    if not sol.converged:
        return SweepRecord(A, W, ID, OFFLINE, 0, np.nan, sol.status, np.nan, np.nan), None
    traj = transcribe.extract_trajectory(sol, tx.layout)
    m = velocity_metrics(plan_speed(traj, p), traj.t_f)
    return SweepRecord(A, W, ID, OFFLINE, 0, traj.t_f, "ok", m.v_max, m.t_max_normalized), traj


def _mpc_cell(args):
    cfg, cell, repeat, A, W, p, nm, options = args
    task = cfg.task(A, W, p)
    mcfg = mpc.MpcConfig(t_iter=cfg.t_iter, max_replans=cfg.max_replans,
                         seed=cfg.repeat_seed(cell, repeat), noise_scaling=cfg.noise_scaling)
    trace = mpc.run_mpc(task, mcfg, p, nm, options)
    ID = compute_id(A, W)
    if trace.status != mpc.SUCCESS:
        return SweepRecord(A, W, ID, MPC, repeat, np.nan, trace.status, np.nan, np.nan), trace
    if len(trace.times) < 2:
        return SweepRecord(A, W, ID, MPC, repeat, trace.md, "ok", 0.0, 0.0), trace
    m = velocity_metrics(trace.hand_speed(p), times=trace.times)
    return SweepRecord(A, W, ID, MPC, repeat, trace.md, "ok", m.v_max, m.t_max_normalized), trace


def run_sweep(cfg: SweepConfig, mode: str, p: arm.ArmParams, nm: arm.NoiseModel,
              options: SolverOptions | None = None, workers: int = 1) -> SweepResult:
    """Run every cell of ``cfg.grid`` offline or under MPC and fit Fitts' law.

    Failed cells are kept in the records with their status and left out of
    the fit. Results do not depend on ``workers``. ``extras`` holds the
    planned trajectories (offline, keyed by ``(A, W)``) or the simulation
    traces (MPC, keyed by ``(A, W, repeat)``).
    """
    if mode not in (OFFLINE, MPC):
        raise InvalidArgumentError(f"mode must be {OFFLINE!r} or {MPC!r}")
    cells = sorted(enumerate(cfg.grid), key=lambda c: (c[1][0], c[1][1]))
    for _, (A, W) in cells:
        compute_id(A, W)
    repeats = 1 if mode == OFFLINE else cfg.repeats
    jobs = [(cfg, i, r, A, W, p, nm, options) for i, (A, W) in cells for r in range(repeats)]
    fn = _Guarded(_offline_cell if mode == OFFLINE else _mpc_cell, mode)
    if workers <= 1:
        out = [fn(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(fn, jobs))
    records = [rec for rec, _ in out]
    extras = {}
    for rec, art in out:
        if art is not None:
            extras[(rec.A, rec.W) if mode == OFFLINE else (rec.A, rec.W, rec.repeat)] = art

    trials = []
    for _, (A, W) in cells:
        rows = [r for r in records if r.A == A and r.W == W]
        good = [r.MD for r in rows if r.status == "ok"]
        if good:
            trials.append(FittsTrial(A, W, float(np.mean(good)), mode, len(good)))
        else:
            trials.append(FittsTrial(A, W, float("nan"), mode, 0, rows[0].status))
    ok = [t for t in trials if t.ok]
    if not ok:
        raise EmptySweepError("every trial of the sweep failed")
    try:
        fit, err = fit_fitts(ok), ""
    except DegenerateDesignError as exc:
        fit, err = None, str(exc)
    return SweepResult(records, trials, fit, err, extras)


class _Guarded:
    """Picklable wrapper recording failures instead of raising."""

    def __init__(self, fn, mode):
        self.fn = fn
        self.mode = mode

    def __call__(self, job):
        try:
            return self.fn(job)
        except ReachError as exc:
            log.warning("sweep cell failed: %s", exc)
            _, _, rep, A, W = job[:5]
            return SweepRecord(A, W, compute_id(A, W), self.mode, rep, np.nan, type(exc).__name__,
                               np.nan, np.nan), None


def config_to_dict(cfg: SweepConfig) -> dict:
    d = asdict(cfg)
    d["grid"] = [list(map(float, c)) for c in cfg.grid]
    d["start_hand"] = list(map(float, cfg.start_hand))
    d["direction"] = list(map(float, cfg.direction))
    return d
