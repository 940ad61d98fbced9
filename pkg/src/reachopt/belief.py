"""Gaussian belief propagation: mean and covariance of the arm state."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import arm
from . import derivs as ad
from .errors import DomainError, InvalidArgumentError, NumericalOverflowError

PSD_TOL = 1e-10

# lower-triangular (row-major) packing of a symmetric 4x4 matrix
TRIL = [(i, j) for i in range(4) for j in range(i + 1)]
_TRIL_INDEX = {}
for _k, (_i, _j) in enumerate(TRIL):
    _TRIL_INDEX[(_i, _j)] = _k
    _TRIL_INDEX[(_j, _i)] = _k


def vech(P):
    """Pack the 10 lower-triangular entries of ``(..., 4, 4)``."""
    if isinstance(P, ad.Dual):
        return ad.stack([P[..., i, j] for i, j in TRIL])
    P = np.asarray(P)
    rows, cols = zip(*TRIL)
    return P[..., rows, cols]


def unvech(v):
    """Expand 10 packed entries into a symmetric ``(..., 4, 4)`` matrix."""
    if isinstance(v, ad.Dual):
        return ad.stack(
            [ad.stack([v[..., _TRIL_INDEX[(i, j)]] for j in range(4)]) for i in range(4)], axis=-2
        )
    v = np.asarray(v)
    idx = np.array([[_TRIL_INDEX[(i, j)] for j in range(4)] for i in range(4)])
    return v[..., idx]


def _sym(P):
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def check_psd(P, tol: float = PSD_TOL):
    P = np.asarray(P, dtype=float)
    if not np.all(np.isfinite(P)):
        raise DomainError("covariance is not finite")
    if not np.allclose(P, np.swapaxes(P, -1, -2), rtol=1e-9, atol=1e-14):
        raise DomainError("covariance is not symmetric")
    if np.linalg.eigvalsh(_sym(P)).min() < -tol:
        raise DomainError("covariance is not positive semidefinite")


@dataclass(frozen=True, eq=False)
class BeliefState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))
        if self.mean.shape != (4,) or self.cov.shape != (4, 4):
            raise InvalidArgumentError("belief needs a 4-vector mean and 4x4 covariance")
        check_psd(self.cov)


@dataclass(frozen=True, eq=False)
class BeliefTrajectory:
    """Means ``(N, 4)``, covariances ``(N, 4, 4)``, controls ``(N, 6)`` and duration."""

    means: np.ndarray
    covs: np.ndarray
    controls: np.ndarray
    t_f: float

    def __post_init__(self):
        for name in ("means", "covs", "controls"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.means)
        if self.covs.shape != (n, 4, 4) or self.controls.shape != (n, 6) or self.means.shape != (n, 4):
            raise InvalidArgumentError("node and control counts must match")
        if not self.t_f > 0:
            raise InvalidArgumentError("t_f must be positive")

    @property
    def n_nodes(self) -> int:
        return len(self.means)

    @property
    def dt(self) -> float:
        return self.t_f / (self.n_nodes - 1)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_f, self.n_nodes)

    @property
    def nodes(self) -> list[BeliefState]:
        return [BeliefState(m, c) for m, c in zip(self.means, self.covs)]


# -- discrete updates ----------------------------------------------------
def mean_step(x, u, dt, p: arm.ArmParams):
    """Explicit Euler step of the noiseless dynamics."""
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    out = np.asarray(x, dtype=float) + arm.rhs(np.asarray(x, float), np.asarray(u, float), p) * dt
    if not np.all(np.isfinite(out)):
        raise NumericalOverflowError("mean step produced a non-finite state")
    return out


def cov_update(P, A, C, sigma_w, dt):
    """``(I + A dt) P (I + A dt)^T + C Sigma C^T dt`` without validation (array or dual)."""
    G = np.eye(4) + A * _expand(dt)
    GP = ad.matmul(G, P)
    Q = ad.matmul(ad.matmul(C, sigma_w), _swap(C))
    return ad.matmul(GP, _swap(G)) + Q * _expand(dt)


def _expand(dt):
    if isinstance(dt, ad.Dual) or np.ndim(dt):
        return dt[..., None, None]
    return dt


def _swap(M):
    if isinstance(M, ad.Dual):
        return M.T
    return np.swapaxes(M, -1, -2)


def cov_step(P, A, C, sigma_w, dt):
    """Positive-definiteness preserving covariance update.

    A congruence with ``I + A dt`` plus a PSD noise term, so a PSD input
    stays PSD. Output is symmetrized.
    """
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    check_psd(P)
    out = _sym(cov_update(_sym(np.asarray(P, float)), np.asarray(A, float), np.asarray(C, float),
                          np.asarray(sigma_w, float), dt))
    if not np.all(np.isfinite(out)):
        raise NumericalOverflowError("covariance step produced non-finite entries")
    return out


def propagate(x0, P0, controls, t_f, p: arm.ArmParams, nm: arm.NoiseModel) -> BeliefTrajectory:
    """Chain mean and covariance steps over ``len(controls)`` nodes."""
    controls = np.asarray(controls, dtype=float)
    n = len(controls)
    if n < 2 or not t_f > 0:
        raise InvalidArgumentError("need at least two nodes and t_f > 0")
    dt = t_f / (n - 1)
    means = np.empty((n, 4))
    covs = np.empty((n, 4, 4))
    means[0] = x0
    covs[0] = _sym(np.asarray(P0, float))
    for i in range(n - 1):
        A, C = arm.linearize(means[i], controls[i], p)
        means[i + 1] = mean_step(means[i], controls[i], dt, p)
        covs[i + 1] = cov_step(covs[i], A, C, nm.sigma_w, dt)
    return BeliefTrajectory(means, covs, controls, t_f)


def endpoint_variance(P_N, H, n: int = 2):
    """Hand-position variances ``diag(H P H^T)[:n]``."""
    P_N = np.asarray(P_N, dtype=float)
    H = np.asarray(H, dtype=float)
    return np.einsum("ij,jk,ik->i", H[:n], P_N, H[:n])
