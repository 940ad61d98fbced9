"""Self-checks run by ``reachopt validate``.

Each check returns a :class:`Check` record; nothing here raises on a
failing check, so a report always lists every family.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import arm, belief, lab, transcribe
from . import derivs as ad
from .errors import ReachError

GRADIENT_TOL = 1e-6
POLY_TOL = 1e-14
PSD_TOL = 1e-10
MC_TOL = 0.05

FAULTS = ("asymmetric-noise", "corrupt-jacobian")


@dataclass
class Check:
    name: str
    family: str
    passed: bool
    detail: str = ""
    value: float | None = None

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.value = None if self.value is None else float(self.value)

    def to_dict(self):
        return asdict(self)


def rel_err(a, b) -> float:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-8))


# -- random points ----------------------------------------------------------
def random_state(rng, n=None):
    shape = () if n is None else (n,)
    q = rng.uniform(0.3, np.pi - 0.3, shape + (2,))
    w = rng.uniform(-3.0, 3.0, shape + (2,))
    return np.concatenate([q, w], axis=-1)


def random_activation(rng, n=None):
    shape = () if n is None else (n,)
    return rng.uniform(arm.U_MIN, arm.U_MAX, shape + (6,))


def random_psd(rng, dim=4, scale=1e-3):
    B = rng.standard_normal((dim, dim))
    return scale * (B @ B.T) / dim


def random_local_point(rng, n_nodes=40):
    """A 21-vector ``(u, x, vech P, t_f)`` as used by the local constraint blocks."""
    return np.concatenate([random_activation(rng), random_state(rng),
                           belief.vech(random_psd(rng)), [rng.uniform(0.2, 2.0)]])


# -- families ---------------------------------------------------------------
def check_params(arm_data: dict | None, noise_data: dict | None) -> list[Check]:
    out = []
    try:
        arm.params_from_dict({"arm": arm_data or {}})
        out.append(Check("arm-params", "invariants", True))
    except ReachError as exc:
        out.append(Check("arm-params", "invariants", False, str(exc)))
    try:
        arm.params_from_dict({"noise": noise_data or {}})
        out.append(Check("noise-model", "invariants", True))
    except ReachError as exc:
        out.append(Check("noise-model", "invariants", False, str(exc)))
    return out


def check_gradients(p, nm, rng, n_points=100, tol=GRADIENT_TOL, corrupt=False) -> list[Check]:
    """Dual Jacobians against central differences at random feasible points."""
    task = transcribe.ReachTask(
        x0=np.r_[arm.inverse_kinematics([0.25, 0.35], p), 0.0, 0.0],
        p_target=[-0.1, 0.4], width=0.12,
    )
    sigma2 = task.sigma_target**2
    cases = {
        "dynamics": lambda z: arm.dynamics(z[:4], z[4:10], z[10:16], p),
        "forward-kinematics": lambda z: arm.forward_kinematics(z[:4], p),
        "collocation-pair": lambda z: transcribe._pair_image(z, p, nm.sigma_w, task.n_nodes),
        "terminal": lambda z: ad.concat(list(transcribe._end_terms(z, p, task, sigma2))),
        "start-rest": lambda z: transcribe._start_terms(z, p),
    }
    points = {
        "dynamics": lambda: np.r_[random_state(rng), random_activation(rng), 0.1 * rng.standard_normal(6)],
        "forward-kinematics": lambda: random_state(rng),
        "collocation-pair": lambda: random_local_point(rng, task.n_nodes),
        "terminal": lambda: random_local_point(rng)[:20],
        "start-rest": lambda: random_local_point(rng)[:10],
    }
    out = []
    for name, f in cases.items():
        worst = 0.0
        for _ in range(n_points):
            z = points[name]()
            J = ad.jacobian(f, z)
            if corrupt:
                J = J * (1.0 + 1e-3)
            worst = max(worst, rel_err(J, ad.fd_jacobian(f, z)))
        out.append(Check(f"jacobian/{name}", "gradients", worst <= tol,
                         f"worst relative error {worst:.2e} over {n_points} points", worst))
    # assembled sparse Jacobian on a short horizon
    small = task.replace(n_nodes=5)
    tx = transcribe.Transcription(small, p, nm)
    lo, hi = tx.bounds()
    worst = 0.0
    for _ in range(3):
        v = transcribe.pack_trajectory(belief.propagate(
            small.x0, random_psd(rng), random_activation(rng, 5), rng.uniform(0.3, 1.0), p, nm))
        v = np.clip(v, lo, hi)
        J = tx.eq_jacobian(v).toarray()
        worst = max(worst, rel_err(J, ad.fd_jacobian(tx.eq_constraints, v)))
        worst = max(worst, rel_err(tx.ineq_jacobian(v), ad.fd_jacobian(tx.ineq_constraints, v)))
        worst = max(worst, rel_err(tx.gradient(v), ad.fd_jacobian(tx.objective, v)))
    out.append(Check("jacobian/assembled-nlp", "gradients", worst <= tol,
                     f"worst relative error {worst:.2e}", worst))
    return out


def check_polynomial_exactness(rng, tol=POLY_TOL) -> list[Check]:
    """Dual derivatives of polynomial maps against closed forms."""
    out = []
    x = rng.uniform(-2, 2, 5)
    f = lambda z: 3 * z**3 - 2 * z**2 + z * z[::-1]  # noqa: E731
    exact = np.diag(9 * x**2 - 4 * x)
    i = np.arange(5)
    exact[i, i] += x[::-1]
    exact[i, i[::-1]] += x
    err = rel_err(ad.jacobian(f, x), exact)
    out.append(Check("exact/cubic", "exactness", err <= tol, f"relative error {err:.1e}", err))

    A = rng.standard_normal((4, 4))
    C = rng.standard_normal((4, 6))
    S = random_psd(rng, 6)
    dt = 0.01
    P = random_psd(rng)
    G = np.eye(4) + A * dt
    J = ad.jacobian(lambda v: belief.vech(belief.cov_update(belief.unvech(v), A, C, S, dt)), belief.vech(P))
    # d vech(G P G^T) / d vech(P): entries of G kron G folded onto the packed basis
    ref = np.zeros((10, 10))
    for a, (i, j) in enumerate(belief.TRIL):
        for b, (k, l) in enumerate(belief.TRIL):
            ref[a, b] = G[i, k] * G[j, l] + (G[i, l] * G[j, k] if k != l else 0.0)
    err = rel_err(J, ref)
    out.append(Check("exact/cov-update", "exactness", err <= tol, f"relative error {err:.1e}", err))
    return out


def check_psd(p, nm, rng, n_cases=200, tol=PSD_TOL) -> list[Check]:
    worst = np.inf
    for _ in range(n_cases):
        A = rng.standard_normal((4, 4)) * rng.uniform(0.1, 50)
        C = rng.standard_normal((4, 6))
        P = random_psd(rng, scale=rng.uniform(1e-8, 1.0))
        worst = min(worst, np.linalg.eigvalsh(belief.cov_step(P, A, C, nm.sigma_w, rng.uniform(1e-4, 0.1))).min())
    out = [Check("psd/cov-step", "psd", worst >= -tol, f"minimum eigenvalue {worst:.2e}", worst)]
    x0 = np.r_[arm.inverse_kinematics([0.25, 0.35], p), 0.0, 0.0]
    traj = belief.propagate(x0, np.zeros((4, 4)), random_activation(rng, 40) * 0.3, 0.5, p, nm)
    worst = float(np.linalg.eigvalsh(traj.covs).min())
    out.append(Check("psd/propagate", "psd", worst >= -tol, f"minimum eigenvalue {worst:.2e}", worst))
    return out


def _factor(M):
    lam, V = np.linalg.eigh(M)
    return V * np.sqrt(np.clip(lam, 0.0, None))


def linear_mc_covariance(P, A, C, sigma_w, dt, rng, n_samples=100_000):
    """Sample covariance of ``(I + A dt) x + C w sqrt(dt)``, ``x ~ N(0, P)``, ``w ~ N(0, sigma_w)``."""
    Lp = _factor(P)
    Lw = _factor(sigma_w)
    x = rng.standard_normal((n_samples, 4)) @ Lp.T
    w = rng.standard_normal((n_samples, sigma_w.shape[0])) @ Lw.T
    y = x @ (np.eye(4) + A * dt).T + w @ C.T * np.sqrt(dt)
    return np.cov(y, rowvar=False)


def check_monte_carlo(nm, rng, n_cases=20, n_samples=100_000, tol=MC_TOL) -> list[Check]:
    worst = 0.0
    for _ in range(n_cases):
        A = rng.standard_normal((4, 4)) * 5
        C = rng.standard_normal((4, 6))
        P = random_psd(rng, scale=0.01) + 1e-6 * np.eye(4)
        S = random_psd(rng, 6, scale=0.05)
        dt = rng.uniform(0.005, 0.05)
        ref = belief.cov_step(P, A, C, S, dt)
        worst = max(worst, rel_err(linear_mc_covariance(P, A, C, S, dt, rng, n_samples), ref))
    return [Check("monte-carlo/cov-step", "covariance", worst <= tol,
                  f"worst Frobenius relative error {worst:.3f} over {n_cases} instances", worst)]


def check_regression(rng, tol=1e-10) -> list[Check]:
    A = rng.uniform(0.2, 0.6, 8)
    W = rng.uniform(0.02, 0.2, 8)
    a, b = rng.uniform(-0.5, 0.5), rng.uniform(0.05, 0.5)
    trials = [lab.FittsTrial(Ai, Wi, a + b * lab.compute_id(Ai, Wi)) for Ai, Wi in zip(A, W)]
    fit = lab.fit_fitts(trials)
    err = max(abs(fit.a - a), abs(fit.b - b), abs(fit.r_squared - 1.0))
    return [Check("regression/recovery", "regression", err <= tol, f"max coefficient error {err:.1e}", err)]


def run_all(arm_data=None, noise_data=None, seed=0, n_points=100, gradient_tol=GRADIENT_TOL,
            poly_tol=POLY_TOL, faults=()) -> list[Check]:
    """Run every family with parameters built from the given config sections."""
    unknown = set(faults) - set(FAULTS)
    if unknown:
        raise ValueError(f"unknown faults {sorted(unknown)}; choose from {FAULTS}")
    noise_data = dict(noise_data or {})
    if "asymmetric-noise" in faults:
        s = np.asarray(arm.NoiseModel().sigma_w if "sigma_w" not in noise_data and "sigma" not in noise_data
                       else arm.params_from_dict({"noise": noise_data})[1].sigma_w).copy()
        s[0, 1] += 1e-3
        noise_data = {"sigma_w": s.tolist()}
    rng = np.random.default_rng(seed)
    checks = check_params(arm_data, noise_data)
    # downstream families fall back to defaults for a section that failed
    p = arm.params_from_dict({"arm": arm_data or {}})[0] if checks[0].passed else arm.ArmParams()
    nm = arm.params_from_dict({"noise": noise_data})[1] if checks[1].passed else arm.NoiseModel()
    checks += check_gradients(p, nm, rng, n_points, gradient_tol, "corrupt-jacobian" in faults)
    checks += check_polynomial_exactness(rng, min(poly_tol, gradient_tol))
    checks += check_psd(p, nm, rng)
    checks += check_monte_carlo(nm, rng)
    checks += check_regression(rng)
    return checks
