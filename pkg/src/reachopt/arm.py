"""Planar two-link arm driven by six Hill-type muscles.

State ``x = [theta_s, theta_e, dtheta_s, dtheta_e]`` and activations
``u`` (6 muscles) are arrays whose last axis holds the components; any
leading axes are a batch. Every function is written with the elementwise
primitives of :mod:`reachopt.derivs`, so it accepts plain arrays as well as
(nested) dual numbers.

Muscle order: brachialis, lateral triceps, anterior deltoid, posterior
deltoid, biceps, long triceps.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np
import yaml

from . import derivs as ad
from .errors import DomainError, InvalidArgumentError

MUSCLES = ("brachialis", "lat_triceps", "ant_deltoid", "post_deltoid", "biceps", "long_triceps")
U_MIN = 0.001
U_MAX = 1.0
# per-channel noise level; see the README for how it was calibrated
DEFAULT_SIGMA = 0.025


def _default_moment_arms():
    # rows: muscles, columns: (shoulder, elbow); metres, flexion positive
    return np.array(
        [
            [0.0, 0.02],
            [0.0, -0.02],
            [0.02, 0.0],
            [-0.02, 0.0],
            [0.015, 0.02],
            [-0.02, -0.015],
        ]
    )


def _default_f_max():
    return np.array([60.0, 60.0, 48.0, 48.0, 36.0, 36.0])


@dataclass(frozen=True, eq=False)
class ArmParams:
    """Segment and muscle constants (SI units)."""

    l1: float = 0.30
    l2: float = 0.33
    m1: float = 1.4
    m2: float = 1.0
    s1: float = 0.11
    s2: float = 0.16
    I1: float = 0.025
    I2: float = 0.045
    moment_arms: np.ndarray = field(default_factory=_default_moment_arms)
    f_max: np.ndarray = field(default_factory=_default_f_max)
    damping: np.ndarray = field(default_factory=lambda: np.array([0.05, 0.05]))
    # Hill curves: constant 1 unless enabled
    hill_curves: bool = False
    optimal_length: np.ndarray = field(default_factory=lambda: np.full(6, 0.1))
    v_max: float = 10.0

    def __post_init__(self):
        for name in ("moment_arms", "f_max", "damping", "optimal_length"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        scalars = [self.l1, self.l2, self.m1, self.m2, self.s1, self.s2, self.I1, self.I2]
        if not all(np.isfinite(v) and v > 0 for v in scalars):
            raise InvalidArgumentError("lengths, masses and inertias must be positive")
        if self.moment_arms.shape != (6, 2) or not np.all(np.isfinite(self.moment_arms)):
            raise InvalidArgumentError("moment_arms must be a finite 6x2 matrix")
        if np.any(np.all(self.moment_arms == 0.0, axis=1)):
            raise InvalidArgumentError("every muscle needs a nonzero moment arm")
        if self.f_max.shape != (6,) or np.any(self.f_max <= 0):
            raise InvalidArgumentError("f_max must be six positive forces")
        if self.damping.shape != (2,) or np.any(self.damping < 0):
            raise InvalidArgumentError("damping must be two nonnegative coefficients")

    @property
    def inertia_constants(self):
        a1 = self.I1 + self.I2 + self.m2 * self.l1**2
        a2 = self.m2 * self.l1 * self.s2
        a3 = self.I2
        return a1, a2, a3

    def replace(self, **changes) -> ArmParams:
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return ArmParams(**kw)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Covariance of the multiplicative activation noise ``w``."""

    sigma_w: np.ndarray = field(default_factory=lambda: DEFAULT_SIGMA**2 * np.eye(6))

    def __post_init__(self):
        s = np.asarray(self.sigma_w, dtype=float)
        object.__setattr__(self, "sigma_w", s)
        if s.shape != (6, 6) or not np.all(np.isfinite(s)):
            raise InvalidArgumentError("sigma_w must be a finite 6x6 matrix")
        if not np.allclose(s, s.T, rtol=0, atol=1e-12):
            raise InvalidArgumentError("sigma_w must be symmetric")
        if np.linalg.eigvalsh(s).min() < -1e-12:
            raise InvalidArgumentError("sigma_w must be positive semidefinite")

    @classmethod
    def isotropic(cls, sigma: float) -> NoiseModel:
        return cls(sigma**2 * np.eye(6))


class ArmState(NamedTuple):
    theta_s: float
    theta_e: float
    dtheta_s: float = 0.0
    dtheta_e: float = 0.0


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(ad.value(a))):
            raise InvalidArgumentError("non-finite input")


def check_activation(u):
    """Raise :class:`DomainError` unless every activation lies in [0, 1]."""
    v = np.asarray(ad.value(u))
    if v.shape[-1:] != (6,):
        raise InvalidArgumentError("activation vector must have 6 components")
    if np.any(v < 0.0) or np.any(v > 1.0) or not np.all(np.isfinite(v)):
        raise DomainError("muscle activation outside [0, 1]")


# -- rigid-body terms -----------------------------------------------------
def mass_matrix(q, p: ArmParams):
    """Inertia matrix ``M(q)``, shape ``(..., 2, 2)``."""
    _check_finite(q)
    a1, a2, a3 = p.inertia_constants
    c = ad.cos(q[..., 1])
    m11 = a1 + 2.0 * a2 * c
    m12 = a3 + a2 * c
    m22 = a3 + 0.0 * c
    return ad.stack([ad.stack([m11, m12]), ad.stack([m12, m22])], axis=-2)


def coriolis(q, qdot, p: ArmParams):
    """Velocity-dependent generalized force (Coriolis/centripetal plus viscous damping).

    Returned with the sign it takes on the right-hand side of
    ``M qddot = coriolis + muscle_torque``.
    """
    _check_finite(q, qdot)
    _, a2, _ = p.inertia_constants
    se = a2 * ad.sin(q[..., 1])
    ws, we = qdot[..., 0], qdot[..., 1]
    cs = se * we * (2.0 * ws + we) - p.damping[0] * ws
    ce = -se * ws * ws - p.damping[1] * we
    return ad.stack([cs, ce])


# -- muscles -------------------------------------------------------------
def force_length(q, p: ArmParams):
    """Active force-length factor per muscle, shape ``(..., 6)``."""
    if not p.hill_curves:
        return np.ones(6)
    # fibre length change is moment arm times joint excursion from mid-range
    dl = -_joint_dot(q - np.pi / 2, p.moment_arms)
    lt = 1.0 + dl / p.optimal_length
    d = (lt - 1.0) / 0.45
    return ad.exp(-(d * d))


def force_velocity(qdot, p: ArmParams):
    """Force-velocity factor per muscle (>1 lengthening, <1 shortening)."""
    if not p.hill_curves:
        return np.ones(6)
    v = -_joint_dot(qdot, p.moment_arms) / (p.optimal_length * p.v_max)
    return 1.0 + 0.8 * ad.tanh(2.5 * v)


def _joint_dot(q, r):
    # q: (..., 2) -> (..., 6) = r @ q per muscle
    return q[..., None, 0] * r[:, 0] + q[..., None, 1] * r[:, 1]


def muscle_force(u, q, qdot, p: ArmParams):
    return u * (p.f_max * force_length(q, p) * force_velocity(qdot, p))


def muscle_torque(u, q, qdot, p: ArmParams, check: bool = True):
    """Joint torques ``moment_arms.T @ (f_max * u * f_l * f_v)``, shape ``(..., 2)``."""
    if check:
        check_activation(u)
    f = muscle_force(u, q, qdot, p)
    r = p.moment_arms
    ts = (f * r[:, 0]).sum(axis=-1)
    te = (f * r[:, 1]).sum(axis=-1)
    return ad.stack([ts, te])


# -- dynamics ------------------------------------------------------------
def noisy_activation(u, w):
    """``u + diag(u) w`` clamped to [0, 1]."""
    return ad.clip(u + u * w, 0.0, 1.0)


def accel(q, qdot, u, p: ArmParams):
    """Joint accelerations ``M^-1 (coriolis + tau)`` without validation."""
    a1, a2, a3 = p.inertia_constants
    te = q[..., 1]
    c = ad.cos(te)
    se = a2 * ad.sin(te)
    ws, we = qdot[..., 0], qdot[..., 1]
    f = muscle_force(u, q, qdot, p)
    r = p.moment_arms
    bs = se * we * (2.0 * ws + we) - p.damping[0] * ws + (f * r[:, 0]).sum(axis=-1)
    be = -se * ws * ws - p.damping[1] * we + (f * r[:, 1]).sum(axis=-1)
    m11 = a1 + 2.0 * a2 * c
    m12 = a3 + a2 * c
    det = m11 * a3 - m12 * m12
    return (a3 * bs - m12 * be) / det, (m11 * be - m12 * bs) / det


def dynamics(x, u, w, p: ArmParams, nm: NoiseModel | None = None):
    """State derivative ``[qdot, M^-1 (C + T_M(u + diag(u) w))]``.

    ``w`` may be ``None`` for the noiseless model. ``nm`` is accepted for
    signature symmetry; the noise draw itself is supplied by the caller.
    """
    _check_finite(x, u)
    check_activation(u)
    if w is not None:
        _check_finite(w)
        u = noisy_activation(u, w)
    return _rhs(x, u, p)


def _rhs(x, u, p):
    qd = x[..., 2:4]
    dds, dde = accel(x[..., 0:2], qd, u, p)
    return ad.stack([x[..., 2], x[..., 3], dds, dde])


def rhs(x, u, p: ArmParams):
    """Noiseless dynamics without input validation (used inside solvers)."""
    return _rhs(x, u, p)


# -- kinematics ----------------------------------------------------------
def forward_kinematics(x, p: ArmParams):
    """Hand position and velocity ``[px, py, vx, vy]``."""
    ts, te, ws, we = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    c1, s1 = ad.cos(ts), ad.sin(ts)
    c12, s12 = ad.cos(ts + te), ad.sin(ts + te)
    px = p.l1 * c1 + p.l2 * c12
    py = p.l1 * s1 + p.l2 * s12
    vx = -p.l1 * s1 * ws - p.l2 * s12 * (ws + we)
    vy = p.l1 * c1 * ws + p.l2 * c12 * (ws + we)
    return ad.stack([px, py, vx, vy])


def hand_position(x, p: ArmParams):
    return forward_kinematics(x, p)[..., :2]


def kinematics_jacobian(x, p: ArmParams):
    """Exact ``d forward_kinematics / dx`` in closed form, shape ``(..., 4, 4)``."""
    ts, te, ws, we = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    c1, s1 = ad.cos(ts), ad.sin(ts)
    c12, s12 = ad.cos(ts + te), ad.sin(ts + te)
    l1, l2 = p.l1, p.l2
    w12 = ws + we
    zero = 0.0 * ts
    # position rows
    j00 = -l1 * s1 - l2 * s12
    j01 = -l2 * s12
    j10 = l1 * c1 + l2 * c12
    j11 = l2 * c12
    # velocity rows: d/dq of (J_pos qdot), then J_pos
    h20 = -l1 * c1 * ws - l2 * c12 * w12
    h21 = -l2 * c12 * w12
    h30 = -l1 * s1 * ws - l2 * s12 * w12
    h31 = -l2 * s12 * w12
    rows = [
        ad.stack([j00, j01, zero, zero]),
        ad.stack([j10, j11, zero, zero]),
        ad.stack([h20, h21, j00, j01]),
        ad.stack([h30, h31, j10, j11]),
    ]
    return ad.stack(rows, axis=-2)


def inverse_kinematics(pos, p: ArmParams, elbow_up: bool = True):
    """Joint angles placing the hand at ``pos`` with the elbow flexed (theta_e > 0)."""
    px, py = float(pos[0]), float(pos[1])
    r2 = px * px + py * py
    ce = (r2 - p.l1**2 - p.l2**2) / (2 * p.l1 * p.l2)
    if abs(ce) > 1:
        raise DomainError("position outside the workspace")
    te = np.arccos(ce)
    if not elbow_up:
        te = -te
    ts = np.arctan2(py, px) - np.arctan2(p.l2 * np.sin(te), p.l1 + p.l2 * np.cos(te))
    # wrap into [-pi/2, 3pi/2) so the admissible range (0, pi) is contiguous
    ts = (ts + np.pi / 2) % (2 * np.pi) - np.pi / 2
    return np.array([ts, te])


# -- linearization -------------------------------------------------------
def linearize(x, u, p: ArmParams, nm: NoiseModel | None = None):
    """Jacobians ``A = df/dx`` and ``C = df/dw`` at ``w = 0``.

    ``C`` is obtained as ``df/du~ * diag(u)``: the noise enters only through
    the noisy activation. Works on arrays and on duals (for second-order
    information) alike; shapes ``(..., 4, 4)`` and ``(..., 4, 6)``.
    """
    z = ad.concat([x, u])
    zd = ad.seed(z)
    f = _rhs(zd[..., 0:4], zd[..., 4:10], p)
    jac = f.der  # (..., 4, 10)
    A = jac[..., :, 0:4]
    C = jac[..., :, 4:10] * u[..., None, :]
    return A, C


# -- parameter files -----------------------------------------------------
_ARRAY_FIELDS = ("moment_arms", "f_max", "damping", "optimal_length")


def params_to_dict(p: ArmParams, nm: NoiseModel | None = None) -> dict:
    arm = {}
    for f in fields(p):
        v = getattr(p, f.name)
        arm[f.name] = v.tolist() if f.name in _ARRAY_FIELDS else (bool(v) if f.name == "hill_curves" else float(v))
    out = {"arm": arm}
    if nm is not None:
        out["noise"] = {"sigma_w": nm.sigma_w.tolist()}
    return out


def params_from_dict(data: dict) -> tuple[ArmParams, NoiseModel]:
    """Build parameters from a mapping with optional ``arm`` and ``noise`` sections.

    Missing keys keep their defaults. ``noise`` accepts either a full
    ``sigma_w`` matrix or a per-channel standard deviation ``sigma``.
    """
    if not isinstance(data, dict):
        raise InvalidArgumentError("parameter file must contain a mapping")
    arm = data.get("arm") or {}
    known = {f.name for f in fields(ArmParams)}
    unknown = set(arm) - known
    if unknown:
        raise InvalidArgumentError(f"unknown arm parameters: {sorted(unknown)}")
    try:
        p = ArmParams(**arm)
    except (TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"bad arm parameters: {exc}") from exc
    noise = data.get("noise") or {}
    if "sigma_w" in noise and "sigma" in noise:
        raise InvalidArgumentError("give either noise.sigma_w or noise.sigma, not both")
    if "sigma" in noise:
        nm = NoiseModel.isotropic(float(noise["sigma"]))
    elif "sigma_w" in noise:
        s = np.asarray(noise["sigma_w"], dtype=float)
        nm = NoiseModel(s * np.eye(6) if s.ndim == 0 else s)
    else:
        nm = NoiseModel()
    return p, nm


def load_params(path) -> tuple[ArmParams, NoiseModel]:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise InvalidArgumentError(f"cannot parse {path}: {exc}") from exc
    return params_from_dict(data or {})


def save_params(path, p: ArmParams, nm: NoiseModel | None = None):
    Path(path).write_text(yaml.safe_dump(params_to_dict(p, nm), sort_keys=False))
