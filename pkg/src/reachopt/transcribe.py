"""Direct-collocation transcription of the stochastic reaching problem.

The design vector stacks the controls, the mean states, the packed
covariances and the free final time::

    v = [u_1 .. u_N, x_1 .. x_N, vech(P_1) .. vech(P_N), t_f]

Consecutive nodes are tied together by explicit Euler defects on the mean
and by the congruence-form covariance update of :mod:`reachopt.belief`.
Derivatives are assembled from small per-node blocks: dual numbers give
exact local Jacobians, and the Lagrangian Hessian comes from central
differences of those exact Jacobians.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import yaml

from . import arm, belief
from . import derivs as ad
from .errors import InfeasibleTaskError, InvalidArgumentError
from .nlp import NlpProblem, NlpSolution

Z95 = 1.96
ANGLE_MARGIN = 0.001
VEL_LIMIT = 20.0
TF_MIN, TF_MAX = 0.1, 5.0
TF_GUESS = 1.0
U_GUESS = 0.01

NX, NU, NP = 4, 6, 10
NZ = NU + NX + NP + 1  # per-pair local variables


def sigma_from_width(width: float) -> float:
    """Per-axis standard deviation whose 95% interval spans the target width."""
    if not width > 0:
        raise InvalidArgumentError("target width must be positive")
    return width / (2.0 * Z95)


@dataclass(frozen=True, eq=False)
class ReachTask:
    """Start belief, target and cost weights of one reach.

    ``start_at_rest`` adds the zero-acceleration condition at the first
    node; replans that begin from a moving state switch it off.
    """

    x0: np.ndarray
    p_target: np.ndarray
    width: float
    P0: np.ndarray = field(default_factory=lambda: np.zeros((4, 4)))
    k_u: float = 1.0
    k_t: float = 100.0
    n_nodes: int = 40
    start_at_rest: bool = True

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "p_target", np.asarray(self.p_target, dtype=float))
        object.__setattr__(self, "P0", np.asarray(self.P0, dtype=float))
        if self.x0.shape != (4,) or self.p_target.shape != (2,) or self.P0.shape != (4, 4):
            raise InvalidArgumentError("x0 needs 4 entries, p_target 2, P0 4x4")
        if not (np.all(np.isfinite(self.x0)) and np.all(np.isfinite(self.p_target))):
            raise InvalidArgumentError("task vectors must be finite")
        if not self.width > 0:
            raise InvalidArgumentError("target width must be positive")
        if not (self.k_u >= 0 and self.k_t >= 0):
            raise InvalidArgumentError("cost weights must be nonnegative")
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 2:
            raise InvalidArgumentError("need at least two nodes")
        q = self.x0[:2]
        if np.any(q < ANGLE_MARGIN) or np.any(q > np.pi - ANGLE_MARGIN):
            raise InvalidArgumentError("start angles outside the joint range")
        if np.any(np.abs(self.x0[2:]) > VEL_LIMIT):
            raise InvalidArgumentError("start velocities outside the bounds")
        belief.check_psd(self.P0)

    @property
    def sigma_target(self) -> float:
        return sigma_from_width(self.width)

    def replace(self, **changes) -> ReachTask:
        kw = dict(x0=self.x0, p_target=self.p_target, width=self.width, P0=self.P0,
                  k_u=self.k_u, k_t=self.k_t, n_nodes=self.n_nodes,
                  start_at_rest=self.start_at_rest)
        kw.update(changes)
        return ReachTask(**kw)


@dataclass(frozen=True)
class DesignLayout:
    n_nodes: int

    @property
    def size(self) -> int:
        return 20 * self.n_nodes + 1

    @property
    def u(self) -> slice:
        return slice(0, NU * self.n_nodes)

    @property
    def x(self) -> slice:
        return slice(NU * self.n_nodes, (NU + NX) * self.n_nodes)

    @property
    def P(self) -> slice:
        return slice((NU + NX) * self.n_nodes, 20 * self.n_nodes)

    @property
    def tf(self) -> int:
        return 20 * self.n_nodes

    def index(self):
        """Global indices as arrays ``(N, 6)``, ``(N, 4)``, ``(N, 10)`` and the t_f index."""
        ar = np.arange(self.size)
        return (ar[self.u].reshape(-1, NU), ar[self.x].reshape(-1, NX),
                ar[self.P].reshape(-1, NP), self.tf)

    def pack(self, controls, means, cov_vech, t_f) -> np.ndarray:
        v = np.empty(self.size)
        v[self.u] = np.asarray(controls, float).reshape(-1)
        v[self.x] = np.asarray(means, float).reshape(-1)
        v[self.P] = np.asarray(cov_vech, float).reshape(-1)
        v[self.tf] = t_f
        return v

    def unpack(self, v):
        """Split ``v`` into controls, means, packed covariances and t_f (works on duals)."""
        if len(v) != self.size:
            raise InvalidArgumentError(f"design vector has length {len(v)}, expected {self.size}")
        n = self.n_nodes
        return (v[self.u].reshape((n, NU)), v[self.x].reshape((n, NX)),
                v[self.P].reshape((n, NP)), v[self.tf])


# -- workspace ------------------------------------------------------------
def check_reachable(task: ReachTask, p: arm.ArmParams):
    r = float(np.hypot(*task.p_target))
    if r > p.l1 + p.l2 or r < abs(p.l1 - p.l2):
        raise InfeasibleTaskError(f"target at distance {r:.3f} m is outside the arm workspace")
    q = arm.inverse_kinematics(task.p_target, p)
    if np.any(q < ANGLE_MARGIN) or np.any(q > np.pi - ANGLE_MARGIN):
        raise InfeasibleTaskError("target requires joint angles outside the admissible range")


# -- local pieces (all vectorized over leading axes, dual-compatible) ------
def _pair_image(z, p, sigma_w, n_nodes):
    u, x, pv, tf = z[..., 0:6], z[..., 6:10], z[..., 10:20], z[..., 20]
    dt = tf * (1.0 / (n_nodes - 1))
    A, C = arm.linearize(x, u, p)
    xn = x + arm.rhs(x, u, p) * dt[..., None]
    Pn = belief.cov_update(belief.unvech(pv), A, C, sigma_w, dt)
    return ad.concat([xn, belief.vech(Pn)])


def _end_terms(z, p, task, sigma2):
    """Rest (4), target (2) and normalized variance (2) at the last node."""
    u, x, pv = z[..., 0:6], z[..., 6:10], z[..., 10:20]
    rest = arm.rhs(x, u, p)
    pos = arm.hand_position(x, p) - task.p_target
    H = arm.kinematics_jacobian(x, p)[..., 0:2, :]
    HP = ad.matmul(H, belief.unvech(pv))
    var = (HP * H).sum(axis=-1)
    return rest, pos, var * (1.0 / sigma2) - 1.0


def _start_terms(z, p):
    u, x = z[..., 0:6], z[..., 6:10]
    return arm.rhs(x, u, p)[..., 2:4]


def _jac(fun, z):
    """Value and Jacobian of ``fun`` over the last axis of ``z`` (batched)."""
    out = fun(ad.seed(z))
    return out.val, out.der


def _lag_hessian(fun, z, lam, dirs=None):
    """Hessian of ``lam . fun(z)`` by forward differences of exact Jacobians.

    Only the columns in ``dirs`` are differenced; the remaining block is
    taken to be zero (the function is linear in those variables). One-sided
    steps keep the cost at ``len(dirs) + 1`` Jacobians with an error near
    ``sqrt(eps)``, ample for Newton steps.
    """
    nz = z.shape[-1]
    dirs = np.arange(nz) if dirs is None else np.asarray(dirs)
    k = len(dirs)
    h = np.sqrt(np.finfo(float).eps) * np.maximum(1.0, np.abs(z[..., dirs]))  # (..., k)
    zb = np.broadcast_to(z, (k + 1,) + z.shape).copy()
    for j, d in enumerate(dirs):
        zb[j, ..., d] += h[..., j]
    _, J = _jac(fun, zb)  # (k + 1, ..., m, nz)
    g = np.einsum("k...m,k...mz->k...z", np.broadcast_to(lam, (k + 1,) + lam.shape), J)
    cols = (g[:k] - g[k]) / np.moveaxis(h, -1, 0)[..., None]  # (k, ..., nz)
    cols = np.moveaxis(cols, 0, -1)  # (..., nz, k): d grad / d z_dirs
    H = np.zeros(z.shape + (nz,))
    H[..., :, dirs] = cols
    H[..., dirs, :] = np.swapaxes(cols, -1, -2)
    sub = cols[..., dirs, :]
    H[..., dirs[:, None], dirs[None, :]] = 0.5 * (sub + np.swapaxes(sub, -1, -2))
    return H


# -- problem assembly ----------------------------------------------------
class Transcription:
    """Evaluation callbacks for one :class:`ReachTask` (stateless, reentrant)."""

    def __init__(self, task: ReachTask, p: arm.ArmParams, nm: arm.NoiseModel):
        check_reachable(task, p)
        self.task, self.p, self.nm = task, p, nm
        self.layout = DesignLayout(task.n_nodes)
        self.sigma2 = task.sigma_target**2
        n = task.n_nodes
        iu, ix, ip, it = self.layout.index()
        self.iu, self.ix, self.ip, self.it = iu, ix, ip, it
        tcol = np.full((n - 1, 1), it)
        self.pair_idx = np.hstack([iu[:-1], ix[:-1], ip[:-1], tcol])  # (n-1, 21)
        self.next_idx = np.hstack([ix[1:], ip[1:]])  # (n-1, 14)
        self.end_idx = np.concatenate([iu[-1], ix[-1], ip[-1]])  # 20
        self.start_idx = np.concatenate([iu[0], ix[0]])  # 10
        m_def = 4 * (n - 1)
        c_def = 10 * (n - 1)
        self.n_start = 2 if task.start_at_rest else 0
        self.rows = {
            "mean": np.arange(m_def).reshape(n - 1, 4),
            "cov": m_def + np.arange(c_def).reshape(n - 1, 10),
        }
        r = m_def + c_def
        self.rows["x1"] = np.arange(r, r + 4)
        self.rows["P1"] = np.arange(r + 4, r + 14)
        r += 14
        self.rows["start"] = np.arange(r, r + self.n_start)
        r += self.n_start
        self.rows["rest"] = np.arange(r, r + 4)
        self.rows["target"] = np.arange(r + 4, r + 6)
        self.n_eq = r + 6
        self.n_ineq = 2
        # rows of the (mean, cov) pair defects, matching the 14 local outputs
        self.pair_rows = np.hstack([self.rows["mean"], self.rows["cov"]])
        self._fixed_jacobian()

    # -- helpers ----------------------------------------------------------
    def _pairs(self, v):
        return v[self.pair_idx], v[self.next_idx]

    def _pair_fun(self, z):
        return _pair_image(z, self.p, self.nm.sigma_w, self.task.n_nodes)

    def _end_fun(self, z):
        rest, pos, _ = _end_terms(z, self.p, self.task, self.sigma2)
        return ad.concat([rest, pos])

    def _var_fun(self, z):
        return _end_terms(z, self.p, self.task, self.sigma2)[2]

    def _start_fun(self, z):
        return _start_terms(z, self.p)

    def _fixed_jacobian(self):
        # constant entries: +I on next-node defects, x1 and P1 identities
        rows = [self.pair_rows.reshape(-1), self.rows["x1"], self.rows["P1"]]
        cols = [self.next_idx.reshape(-1), self.ix[0], self.ip[0]]
        self._const_rows = np.concatenate(rows)
        self._const_cols = np.concatenate(cols)
        pr = np.broadcast_to(self.pair_rows[:, :, None], self.pair_rows.shape + (NZ,))
        pc = np.broadcast_to(self.pair_idx[:, None, :], pr.shape)
        er = np.concatenate([self.rows["rest"], self.rows["target"]])
        self._var_rows = [pr.reshape(-1),
                          np.repeat(er, 20),
                          np.repeat(self.rows["start"], 10)]
        self._var_cols = [pc.reshape(-1),
                          np.tile(self.end_idx, len(er)),
                          np.tile(self.start_idx, self.n_start)]

    # -- callbacks ----------------------------------------------------------
    def objective(self, v):
        U = v[self.layout.u]
        tf = v[self.it]
        return self.task.k_u * float(U @ U) * tf / (self.task.n_nodes - 1) + self.task.k_t * tf

    def gradient(self, v):
        g = np.zeros(self.layout.size)
        U = v[self.layout.u]
        dt = v[self.it] / (self.task.n_nodes - 1)
        g[self.layout.u] = 2.0 * self.task.k_u * U * dt
        g[self.it] = self.task.k_u * float(U @ U) / (self.task.n_nodes - 1) + self.task.k_t
        return g

    def eq_constraints(self, v):
        v = np.asarray(v, dtype=float)
        z, nxt = self._pairs(v)
        img = self._pair_fun(z)
        c = np.empty(self.n_eq)
        d = nxt - img
        c[self.rows["mean"]] = d[:, :4]
        c[self.rows["cov"]] = d[:, 4:]
        c[self.rows["x1"]] = v[self.ix[0]] - self.task.x0
        c[self.rows["P1"]] = v[self.ip[0]] - belief.vech(self.task.P0)
        if self.n_start:
            c[self.rows["start"]] = self._start_fun(v[self.start_idx])
        end = self._end_fun(v[self.end_idx])
        c[self.rows["rest"]] = end[:4]
        c[self.rows["target"]] = end[4:]
        return c

    def ineq_constraints(self, v):
        return self._var_fun(np.asarray(v, float)[self.end_idx])

    def eq_jacobian(self, v):
        v = np.asarray(v, dtype=float)
        z, _ = self._pairs(v)
        _, Jp = _jac(self._pair_fun, z)  # (n-1, 14, 21)
        _, Je = _jac(self._end_fun, v[self.end_idx])  # (6, 20)
        data = [-Jp.reshape(-1), Je.reshape(-1)]
        if self.n_start:
            _, Js = _jac(self._start_fun, v[self.start_idx])
            data.append(Js.reshape(-1))
        else:
            data.append(np.zeros(0))
        rows = np.concatenate([self._const_rows] + self._var_rows)
        cols = np.concatenate([self._const_cols] + self._var_cols)
        vals = np.concatenate([np.ones(len(self._const_rows))] + data)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_eq, self.layout.size))

    def ineq_jacobian(self, v):
        _, J = _jac(self._var_fun, np.asarray(v, float)[self.end_idx])
        out = np.zeros((2, self.layout.size))
        out[:, self.end_idx] = J
        return out

    def hessian(self, v, obj_factor, lam_eq, lam_ineq):
        v = np.asarray(v, dtype=float)
        lam_eq = np.asarray(lam_eq, dtype=float)
        N = self.task.n_nodes
        rows, cols, vals = [], [], []

        def add(idx, block):
            rows.append(np.broadcast_to(idx[..., :, None], block.shape).reshape(-1))
            cols.append(np.broadcast_to(idx[..., None, :], block.shape).reshape(-1))
            vals.append(block.reshape(-1))

        # objective
        ku = obj_factor * self.task.k_u
        iu = self.iu.reshape(-1)
        it = np.full_like(iu, self.it)
        cross = 2.0 * ku * v[iu] / (N - 1)
        rows += [iu, iu, it]
        cols += [iu, it, iu]
        vals += [np.full(iu.size, 2.0 * ku * v[self.it] / (N - 1)), cross, cross]
        # pair defects: d = next - image, so the image is weighted by -lambda
        z, _ = self._pairs(v)
        dirs = np.r_[0:10, 20]  # the image is linear in the packed covariance
        add(self.pair_idx, _lag_hessian(self._pair_fun, z, -lam_eq[self.pair_rows], dirs))
        # terminal conditions
        le = lam_eq[np.concatenate([self.rows["rest"], self.rows["target"]])]
        He = _lag_hessian(self._end_fun, v[self.end_idx], le)
        He += _lag_hessian(self._var_fun, v[self.end_idx], np.asarray(lam_ineq, float))
        add(self.end_idx, He)
        if self.n_start:
            ls = lam_eq[self.rows["start"]]
            add(self.start_idx, _lag_hessian(self._start_fun, v[self.start_idx], ls))
        n = self.layout.size
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        ).tocsr()

    def bounds(self):
        lo = np.full(self.layout.size, -np.inf)
        hi = np.full(self.layout.size, np.inf)
        lo[self.layout.u], hi[self.layout.u] = arm.U_MIN, arm.U_MAX
        q = self.ix[:, :2].reshape(-1)
        w = self.ix[:, 2:].reshape(-1)
        lo[q], hi[q] = ANGLE_MARGIN, np.pi - ANGLE_MARGIN
        lo[w], hi[w] = -VEL_LIMIT, VEL_LIMIT
        lo[self.it], hi[self.it] = TF_MIN, TF_MAX
        return lo, hi

    def problem(self) -> NlpProblem:
        lo, hi = self.bounds()
        return NlpProblem(
            n=self.layout.size,
            objective=self.objective,
            eq_constraints=self.eq_constraints,
            ineq_constraints=self.ineq_constraints,
            lower=lo,
            upper=hi,
            gradient=self.gradient,
            eq_jacobian=self.eq_jacobian,
            ineq_jacobian=self.ineq_jacobian,
            hessian=self.hessian,
        )


def build_nlp(task: ReachTask, p: arm.ArmParams, nm: arm.NoiseModel) -> NlpProblem:
    """Transcribe ``task`` into an :class:`NlpProblem` (raises for unreachable targets)."""
    return Transcription(task, p, nm).problem()


# -- design vectors ------------------------------------------------------
def extract_trajectory(solution, layout: DesignLayout) -> belief.BeliefTrajectory:
    x = solution.x if isinstance(solution, NlpSolution) else solution
    x = np.asarray(x, dtype=float)
    if x.shape != (layout.size,):
        raise InvalidArgumentError(f"design vector has shape {x.shape}, expected ({layout.size},)")
    U, X, Pv, tf = layout.unpack(x)
    return belief.BeliefTrajectory(X.copy(), belief.unvech(Pv), U.copy(), float(tf))


def pack_trajectory(traj: belief.BeliefTrajectory) -> np.ndarray:
    layout = DesignLayout(traj.n_nodes)
    return layout.pack(traj.controls, traj.means, belief.vech(traj.covs), traj.t_f)


def initial_guess(task: ReachTask, layout: DesignLayout | None = None) -> np.ndarray:
    """Constant guess: small activations, the arm held at the start, one second."""
    layout = layout or DesignLayout(task.n_nodes)
    n = layout.n_nodes
    return layout.pack(
        np.full((n, NU), U_GUESS),
        np.tile(task.x0, (n, 1)),
        np.tile(belief.vech(task.P0), (n, 1)),
        TF_GUESS,
    )


def shift_guess(previous: belief.BeliefTrajectory, steps_executed: int, new_x0, new_P0=None,
                p: arm.ArmParams | None = None, nm: arm.NoiseModel | None = None) -> np.ndarray:
    """Warm start for a replan after ``steps_executed`` nodes have been applied.

    The unexecuted part of the plan is resampled onto ``N`` uniform nodes
    over the remaining time, holding each control over its original
    interval. Given ``p`` and ``nm`` the belief is re-propagated from the new
    start, so every defect constraint holds exactly; otherwise means and
    covariances are interpolated and only the first node is replaced.
    """
    n = previous.n_nodes
    k = int(steps_executed)
    if not 0 <= k < n:
        raise InvalidArgumentError("steps_executed must lie in [0, N)")
    x0 = np.asarray(new_x0, dtype=float)
    P0 = np.zeros((4, 4)) if new_P0 is None else np.asarray(new_P0, dtype=float)
    tf = max(previous.t_f * (n - 1 - k) / (n - 1), TF_MIN)
    s = k * previous.dt + np.linspace(0.0, tf, n)
    held = np.minimum(np.floor(s / previous.dt + 1e-9).astype(int), n - 1)
    U = previous.controls[held]
    if p is not None and nm is not None:
        return pack_trajectory(belief.propagate(x0, P0, U, tf, p, nm))
    t = previous.times
    X = np.column_stack([np.interp(s, t, col) for col in previous.means.T])
    Pv = np.column_stack([np.interp(s, t, col) for col in belief.vech(previous.covs).T])
    X[0] = x0
    Pv[0] = belief.vech(P0)
    return DesignLayout(n).pack(U, X, Pv, tf)


# -- task files ----------------------------------------------------------
def load_task(path) -> ReachTask:
    data = yaml.safe_load(Path(path).read_text())
    if not isinstance(data, dict):
        raise InvalidArgumentError(f"{path}: expected a mapping")
    data = dict(data.get("task", data))
    known = {"x0", "p_target", "width", "P0", "k_u", "k_t", "n_nodes", "start_at_rest"}
    extra = set(data) - known
    if extra:
        raise InvalidArgumentError(f"{path}: unknown task fields {sorted(extra)}")
    return ReachTask(**data)


def task_to_dict(task: ReachTask) -> dict:
    return {
        "x0": task.x0.tolist(),
        "p_target": task.p_target.tolist(),
        "width": float(task.width),
        "P0": task.P0.tolist(),
        "k_u": float(task.k_u),
        "k_t": float(task.k_t),
        "n_nodes": int(task.n_nodes),
        "start_at_rest": bool(task.start_at_rest),
    }


def save_task(task: ReachTask, path):
    Path(path).write_text(yaml.safe_dump({"task": task_to_dict(task)}, sort_keys=False))
