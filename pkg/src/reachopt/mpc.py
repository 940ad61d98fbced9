"""Receding-horizon execution of planned reaches on the noisy plant.

Each outer iteration re-solves the reaching problem from the current true
state, applies the first ``ceil(t_iter / dt)`` planned controls with fresh
activation noise per Euler step, and stops once the hand is within
``sigma_target`` of the target.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import arm, transcribe
from .errors import DivergenceError, InvalidArgumentError, ReachError
from .nlp import SolverOptions, max_violation, solve

LITERAL = "literal"
SQRT_DT = "sqrt-dt"
DIVERGENCE_MARGIN = 0.2

SUCCESS = "success"
TIMEOUT = "timeout"
FAILED = "failed"
DIVERGED = "diverged"

TRACE_COLUMNS = (
    ["t", "theta_s", "theta_e", "dtheta_s", "dtheta_e"]
    + [f"u{i}" for i in range(1, 7)]
    + ["hand_x", "hand_y", "hand_speed", "replan"]
)

WARM_OPTIONS = SolverOptions(mu_init=1e-3, bound_push=1e-4, bound_frac=1e-4)


@dataclass(frozen=True)
class MpcConfig:
    t_iter: float = 0.1
    max_replans: int = 50
    seed: int = 0
    noise_scaling: str = LITERAL
    warm_start: bool = True

    def __post_init__(self):
        if not self.t_iter > 0:
            raise InvalidArgumentError("t_iter must be positive")
        if int(self.max_replans) != self.max_replans or self.max_replans < 1:
            raise InvalidArgumentError("max_replans must be a positive integer")
        if self.noise_scaling not in (LITERAL, SQRT_DT):
            raise InvalidArgumentError(f"noise_scaling must be {LITERAL!r} or {SQRT_DT!r}")


@dataclass
class ReplanEvent:
    time: float
    step: int
    status: str
    iterations: int
    t_f: float
    dt: float
    executed: int
    seconds: float
    guess_violation: float
    cold_retry: bool = False


@dataclass
class SimulationTrace:
    """Executed states and controls on a strictly increasing time grid.

    Row ``k`` of ``controls`` and ``noise`` is what was applied on
    ``[times[k], times[k+1])``; the last row is padding (zeros).
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    noise: np.ndarray
    replan_flags: np.ndarray
    replans: list[ReplanEvent] = field(default_factory=list)
    status: str = SUCCESS
    message: str = ""

    @property
    def md(self) -> float:
        return float(self.times[-1])

    @property
    def n_replans(self) -> int:
        return len(self.replans)

    def hand(self, p: arm.ArmParams) -> np.ndarray:
        return arm.forward_kinematics(self.states, p)

    def hand_speed(self, p: arm.ArmParams) -> np.ndarray:
        fk = self.hand(p)
        return np.hypot(fk[:, 2], fk[:, 3])

    def to_csv(self, p: arm.ArmParams) -> str:
        fk = self.hand(p)
        speed = np.hypot(fk[:, 2], fk[:, 3])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for k in range(len(self.times)):
            row = [self.times[k], *self.states[k], *self.controls[k], fk[k, 0], fk[k, 1], speed[k]]
            w.writerow([f"{v:.10g}" for v in row] + [int(self.replan_flags[k])])
        return buf.getvalue()


# -- noisy plant ----------------------------------------------------------
def noise_factor(nm: arm.NoiseModel) -> np.ndarray:
    """Matrix ``L`` with ``L L^T = sigma_w`` (exactly zero for a zero covariance)."""
    lam, V = np.linalg.eigh(nm.sigma_w)
    return V * np.sqrt(np.clip(lam, 0.0, None))


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def rollout_noisy(x, controls, dt, seed, p: arm.ArmParams, nm: arm.NoiseModel,
                  noise_scaling: str = LITERAL):
    """Euler-Maruyama style rollout; returns ``(states (k+1, 4), draws (k, 6))``.

    ``seed`` may be an integer or a ``numpy.random.Generator`` (consumed in
    place, which lets a caller chain rollouts on one stream).
    """
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    if noise_scaling not in (LITERAL, SQRT_DT):
        raise InvalidArgumentError(f"unknown noise scaling {noise_scaling!r}")
    rng = _rng(seed)
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    L = noise_factor(nm)
    gain = 1.0 if noise_scaling == LITERAL else 1.0 / math.sqrt(dt)
    states = np.empty((len(controls) + 1, 4))
    draws = np.empty((len(controls), 6))
    states[0] = np.asarray(x, dtype=float)
    for k, u in enumerate(controls):
        w = L @ rng.standard_normal(6) * gain
        draws[k] = w
        nxt = states[k] + arm.dynamics(states[k], u, w, p) * dt
        q = nxt[:2]
        if not np.all(np.isfinite(nxt)) or np.any(q < -DIVERGENCE_MARGIN) or np.any(q > np.pi + DIVERGENCE_MARGIN):
            raise DivergenceError(f"state left the joint range at step {k + 1}: {nxt}")
        states[k + 1] = nxt
    return states, draws


# -- receding horizon loop --------------------------------------------------
def steps_per_replan(t_iter: float, dt: float, n_nodes: int) -> int:
    return int(min(math.ceil(t_iter / dt - 1e-9), n_nodes))


def run_mpc(task: transcribe.ReachTask, cfg: MpcConfig, p: arm.ArmParams, nm: arm.NoiseModel,
            options: SolverOptions | None = None, warm_options: SolverOptions | None = None,
            on_replan=None) -> SimulationTrace:
    """Simulate closed-loop execution of ``task``.

    A warm-started solve that fails is retried once from the cold guess;
    ``event.iterations`` then counts both attempts.
    ``on_replan(event, problem, guess, subtask)`` is called after every
    solve; the warm-start experiments use it to re-solve the same
    subproblems cold.
    """
    cold_opts = options or SolverOptions()
    warm_opts = warm_options or WARM_OPTIONS
    rng = np.random.default_rng(cfg.seed)
    sigma = task.sigma_target
    x = task.x0.copy()
    t = 0.0
    times, states, controls, noise, flags = [0.0], [x.copy()], [], [], []
    events: list[ReplanEvent] = []
    status, message = SUCCESS, ""
    prev = None
    executed = 0
    while np.linalg.norm(arm.hand_position(x, p) - task.p_target) > sigma:
        if len(events) >= cfg.max_replans:
            status, message = TIMEOUT, f"target not reached after {cfg.max_replans} replans"
            break
        try:
            sub = task if prev is None else task.replace(x0=x, start_at_rest=False)
            tx = transcribe.Transcription(sub, p, nm)
        except ReachError as exc:
            status, message = FAILED, f"replan from the current state is not admissible: {exc}"
            break
        problem = tx.problem()
        warm = prev is not None and cfg.warm_start
        if warm:
            guess = transcribe.shift_guess(prev, min(executed, task.n_nodes - 1), x, sub.P0, p, nm)
        else:
            guess = transcribe.initial_guess(sub, tx.layout)
        clock = time.perf_counter()
        sol = solve(problem, guess, warm_opts if warm else cold_opts)
        retried = warm and not sol.converged
        if retried:
            # a warm start can stall near the end of a reach; fall back to cold
            first = sol.iterations
            sol = solve(problem, transcribe.initial_guess(sub, tx.layout), cold_opts)
            sol.iterations += first
        seconds = time.perf_counter() - clock
        plan = transcribe.extract_trajectory(sol, tx.layout)
        n_exec = steps_per_replan(cfg.t_iter, plan.dt, task.n_nodes) if sol.converged else 0
        event = ReplanEvent(t, len(times) - 1, sol.status, sol.iterations, plan.t_f, plan.dt, n_exec,
                            seconds, _violation(problem, guess), retried)
        events.append(event)
        if on_replan is not None:
            on_replan(event, problem, guess, sub)
        if not sol.converged:
            status, message = FAILED, f"solver returned {sol.status} at t = {t:.3f} s"
            break
        try:
            xs, ws = rollout_noisy(x, plan.controls[:n_exec], plan.dt, rng, p, nm, cfg.noise_scaling)
        except DivergenceError as exc:
            status, message = DIVERGED, str(exc)
            break
        for k in range(n_exec):
            controls.append(plan.controls[k])
            noise.append(ws[k])
            flags.append(k == 0)
            t += plan.dt
            times.append(t)
            states.append(xs[k + 1])
        x = xs[-1]
        prev, executed = plan, n_exec

    controls.append(np.zeros(6))
    noise.append(np.zeros(6))
    flags.append(False)
    return SimulationTrace(np.array(times), np.array(states), np.array(controls), np.array(noise),
                           np.array(flags, dtype=bool), events, status, message)


def _violation(problem, x):
    return max_violation(problem, np.clip(x, problem.lower, problem.upper))
