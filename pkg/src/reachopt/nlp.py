"""Smooth constrained nonlinear programming.

:func:`solve` is a primal-dual interior-point method with a filter line
search, second-order corrections and inertia-corrected Newton steps, in
the style of IPOPT. Inequalities ``g(x) <= 0`` are turned into equalities
with bounded slacks. Linear algebra is dense (symmetric indefinite
Bunch-Kaufman factorization) for small systems and sparse LU for large
ones.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

from . import derivs as ad
from .errors import InvalidArgumentError

log = logging.getLogger(__name__)

CONVERGED = "converged"
ITERATION_LIMIT = "iteration-limit"
INFEASIBLE = "infeasible"
EVALUATION_ERROR = "evaluation-error"


@dataclass
class NlpProblem:
    """``min f(x)  s.t.  h(x) = 0,  g(x) <= 0,  lower <= x <= upper``.

    Only ``n`` and ``objective`` are required. Missing derivatives are
    obtained with dual numbers (first order) and central differences of the
    Lagrangian gradient (Hessian), so the callables must accept duals when
    no derivative callbacks are given.

    ``hessian(x, obj_factor, lam_eq, lam_ineq)`` returns the Hessian of
    ``obj_factor * f + lam_eq . h + lam_ineq . g``. Jacobian callbacks may
    return dense arrays or scipy sparse matrices.
    """

    n: int
    objective: Callable
    eq_constraints: Callable | None = None
    ineq_constraints: Callable | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    gradient: Callable | None = None
    eq_jacobian: Callable | None = None
    ineq_jacobian: Callable | None = None
    hessian: Callable | None = None
    eq_scale: np.ndarray | None = None
    ineq_scale: np.ndarray | None = None

    def __post_init__(self):
        lo = np.full(self.n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        hi = np.full(self.n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        if lo.shape != (self.n,) or hi.shape != (self.n,):
            raise InvalidArgumentError("bounds must have length n")
        if np.any(lo > hi):
            raise InvalidArgumentError("lower bound exceeds upper bound")
        self.lower, self.upper = lo, hi

    # -- evaluation with derivative fallbacks ---------------------------
    def eval_eq(self, x):
        if self.eq_constraints is None:
            return np.zeros(0)
        return np.asarray(self.eq_constraints(x), dtype=float).reshape(-1)

    def eval_ineq(self, x):
        if self.ineq_constraints is None:
            return np.zeros(0)
        return np.asarray(self.ineq_constraints(x), dtype=float).reshape(-1)

    def eval_gradient(self, x):
        if self.gradient is not None:
            return np.asarray(self.gradient(x), dtype=float)
        return ad.jacobian(lambda z: self.objective(z), x).reshape(self.n)

    def eval_eq_jacobian(self, x):
        if self.eq_constraints is None:
            return np.zeros((0, self.n))
        if self.eq_jacobian is not None:
            return _matrix(self.eq_jacobian(x))
        return ad.jacobian(self.eq_constraints, x).reshape(-1, self.n)

    def eval_ineq_jacobian(self, x):
        if self.ineq_constraints is None:
            return np.zeros((0, self.n))
        if self.ineq_jacobian is not None:
            return _matrix(self.ineq_jacobian(x))
        return ad.jacobian(self.ineq_constraints, x).reshape(-1, self.n)

    def eval_hessian(self, x, obj_factor, lam_eq, lam_ineq):
        if self.hessian is not None:
            H = self.hessian(x, obj_factor, lam_eq, lam_ineq)
            return H if sp.issparse(H) else np.asarray(H, dtype=float)

        def grad_lag(z):
            g = obj_factor * self.eval_gradient(z)
            if len(lam_eq):
                g = g + _dense(self.eval_eq_jacobian(z)).T @ lam_eq
            if len(lam_ineq):
                g = g + _dense(self.eval_ineq_jacobian(z)).T @ lam_ineq
            return g

        H = ad.fd_jacobian(grad_lag, x)
        return 0.5 * (H + H.T)


def _dense(a):
    if sp.issparse(a):
        return a.toarray()
    return np.asarray(a, dtype=float)


def _matrix(a):
    return a.tocsr() if sp.issparse(a) else np.asarray(a, dtype=float)


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 3000
    feasibility_tol: float = 1e-6
    optimality_tol: float = 1e-6
    verbosity: int = 0
    mu_init: float = 0.1
    bound_push: float = 1e-2
    bound_frac: float = 1e-2
    max_soc: int = 4


@dataclass
class NlpSolution:
    x: np.ndarray
    objective_value: float
    status: str
    iterations: int
    max_violation: float
    lam_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lam_ineq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z_lower: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z_upper: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kkt_error: float = np.inf
    history: list = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def max_violation(problem: NlpProblem, x) -> float:
    """Largest violation of equalities, inequalities and bounds at ``x``."""
    viol = [0.0]
    h = problem.eval_eq(x)
    if h.size:
        viol.append(np.abs(h).max())
    g = problem.eval_ineq(x)
    if g.size:
        viol.append(max(0.0, g.max()))
    viol.append(max(0.0, (problem.lower - x).max(), (x - problem.upper).max()))
    return float(max(viol))


def warm_start(problem: NlpProblem, previous) -> np.ndarray:
    """Initial guess from a previous solution (or vector), clipped into the bounds."""
    x = previous.x if isinstance(previous, NlpSolution) else previous
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.n,):
        raise InvalidArgumentError(f"previous solution has {x.size} entries, problem has {problem.n}")
    return np.clip(x, problem.lower, problem.upper)


# ---------------------------------------------------------------------------
# interior-point machinery
# ---------------------------------------------------------------------------
class _Scaled:
    """Problem in the solver's variables ``v = (x, s)`` with scaled functions."""

    def __init__(self, problem: NlpProblem, x0):
        self.p = problem
        self.n = problem.n
        h0 = problem.eval_eq(x0)
        g0 = problem.eval_ineq(x0)
        self.me, self.mi = h0.size, g0.size
        self.m = self.me + self.mi
        self.nv = self.n + self.mi
        self.lower = np.concatenate([problem.lower, np.full(self.mi, -np.inf)])
        self.upper = np.concatenate([problem.upper, np.zeros(self.mi)])
        # gradient-based scaling, capped at 1
        gmax = 100.0
        grad0 = problem.eval_gradient(x0)
        self.obj_scale = min(1.0, gmax / max(np.abs(grad0).max(), 1e-300))
        cs = np.ones(self.m)
        if self.m:
            J = self._raw_jac(x0)
            rowmax = abs(J).max(axis=1).toarray().ravel()
            cs = np.minimum(1.0, gmax / np.maximum(rowmax, 1e-300))
        if problem.eq_scale is not None:
            cs[: self.me] *= problem.eq_scale
        if problem.ineq_scale is not None:
            cs[self.me :] *= problem.ineq_scale
        self.c_scale = cs

    def split(self, v):
        return v[: self.n], v[self.n :]

    def f(self, v):
        return self.obj_scale * float(self.p.objective(v[: self.n]))

    def grad(self, v):
        g = np.zeros(self.nv)
        g[: self.n] = self.obj_scale * self.p.eval_gradient(v[: self.n])
        return g

    def c(self, v):
        x, s = self.split(v)
        raw = np.concatenate([self.p.eval_eq(x), self.p.eval_ineq(x) - s])
        return self.c_scale * raw

    def raw_constraints(self, x):
        return self.p.eval_eq(x), self.p.eval_ineq(x)

    def _raw_jac(self, x):
        Je = sp.csr_matrix(self.p.eval_eq_jacobian(x))
        Ji = sp.csr_matrix(self.p.eval_ineq_jacobian(x))
        top = sp.hstack([Je, sp.csr_matrix((self.me, self.mi))])
        bottom = sp.hstack([Ji, -sp.identity(self.mi)])
        return sp.vstack([top, bottom], format="csr")

    def jac(self, v):
        """Scaled constraint Jacobian in ``(x, s)`` as a CSR matrix."""
        return sp.diags(self.c_scale) @ self._raw_jac(v[: self.n])

    def hess(self, v, lam):
        x, _ = self.split(v)
        lam_raw = lam * self.c_scale
        H = self.p.eval_hessian(x, self.obj_scale, lam_raw[: self.me], lam_raw[self.me :])
        H = sp.csr_matrix(H)
        if self.mi:
            H = sp.block_diag([H, sp.csr_matrix((self.mi, self.mi))], format="csr")
        return H


def _inertia(ldu, ipiv):
    """Count positive, negative and zero eigenvalues of the D factor of dsytrf."""
    n = ldu.shape[0]
    pos = neg = zero = 0
    k = 0
    tiny = 1e-300
    while k < n:
        if ipiv[k] > 0:
            d = ldu[k, k]
            if d > tiny:
                pos += 1
            elif d < -tiny:
                neg += 1
            else:
                zero += 1
            k += 1
        else:
            a, b, c = ldu[k, k], ldu[k + 1, k], ldu[k + 1, k + 1]
            det = a * c - b * b
            if det < 0:
                pos += 1
                neg += 1
            elif det > 0:
                if a > 0:
                    pos += 2
                else:
                    neg += 2
            else:
                zero += 1
                pos += a + c > 0
                neg += a + c < 0
            k += 2
    return pos, neg, zero


class _KKT:
    """Newton-system solver with IPOPT-style regularization of the Hessian block.

    Small systems use a dense Bunch-Kaufman factorization and the exact
    inertia. Large ones use a sparse LU with threshold pivoting; since LU
    does not reveal the inertia, the Hessian regularization is driven by a
    curvature test on the computed step instead (inertia-free variant).
    """

    dense_limit = 400
    curvature_tol = 1e-10

    def __init__(self):
        self.delta_w_last = 0.0

    def factor(self, W, sigma, J, mu, rhs):
        """Factor the regularized system and solve it for ``rhs``; ``False`` on failure."""
        nv = W.shape[0]
        m = J.shape[0]
        W = sp.csr_matrix(W)
        J = sp.csr_matrix(J)
        delta_w = 0.0
        delta_c = 0.0
        sparse = nv + m > self.dense_limit
        for _ in range(60):
            Wd = W + sp.diags(sigma + delta_w)
            K = sp.bmat([[Wd, J.T], [J, sp.diags(np.full(m, -delta_c)) if m else None]], format="csc")
            self.K = K
            if sparse:
                ok = self._sparse(K)
                if ok:
                    sol = self.solve(rhs)
                    d = sol[:nv]
                    ok = np.all(np.isfinite(sol))
                    singular = not ok
                    curv_ok = ok and d @ (Wd @ d) >= self.curvature_tol * (d @ d)
                else:
                    singular, curv_ok = True, False
                if curv_ok:
                    break
            else:
                pos, neg, zero = self._dense(K)
                singular = zero > 0
                if pos == nv and neg == m and zero == 0:
                    sol = self.solve(rhs)
                    break
            if singular and delta_c == 0.0 and m:
                delta_c = 1e-8 * mu**0.25
                continue
            if delta_w == 0.0:
                delta_w = 1e-4 if self.delta_w_last == 0.0 else max(1e-20, self.delta_w_last / 3.0)
            else:
                delta_w *= 100.0 if self.delta_w_last == 0.0 else 8.0
            if delta_w > 1e40:
                return False
        else:
            return False
        if delta_w:
            self.delta_w_last = delta_w
        self.delta_w = delta_w
        self.sol = sol
        return True

    def _sparse(self, K):
        try:
            lu = spla.splu(K)
        except RuntimeError:  # exactly singular
            return False
        self._solve = lu.solve
        return True

    def _dense(self, K):
        ldu, ipiv, info = lapack.dsytrf(K.toarray(), lower=1)
        self._solve = lambda r: lapack.dsytrs(ldu, ipiv, r, lower=1)[0]
        if info < 0:
            return 0, 0, K.shape[0]
        return _inertia(ldu, ipiv)

    def solve(self, rhs):
        """Solve with the current factors plus a few steps of iterative refinement."""
        x = self._solve(rhs)
        scale = max(np.abs(rhs).max(), 1e-300)
        for _ in range(3):
            r = rhs - self.K @ x
            if not np.all(np.isfinite(r)) or np.abs(r).max() <= 1e-12 * scale:
                break
            x = x + self._solve(r)
        return x


def _finite(*vals):
    return all(np.all(np.isfinite(v)) for v in vals)


def solve(problem: NlpProblem, initial_guess, options: SolverOptions | None = None,
          multipliers: NlpSolution | None = None) -> NlpSolution:
    """Solve ``problem`` from ``initial_guess``.

    ``multipliers`` optionally seeds the constraint and bound multipliers
    from a previous solution of a problem with the same structure.
    """
    opt = options or SolverOptions()
    x0 = np.asarray(initial_guess, dtype=float).copy()
    if x0.shape != (problem.n,):
        raise InvalidArgumentError("initial guess has the wrong dimension")
    try:
        return _ipm(problem, x0, opt, multipliers)
    except _EvalError as exc:
        log.warning("evaluation failed: %s", exc)
        return NlpSolution(x0, np.nan, EVALUATION_ERROR, 0, np.inf)


class _EvalError(Exception):
    pass


def _push_into_bounds(x, lo, hi, push, frac):
    x = x.copy()
    fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
    with np.errstate(invalid="ignore"):
        width = np.where(fin_lo & fin_hi, hi - lo, np.inf)
        pl = np.minimum(push * np.maximum(1.0, np.abs(lo)), frac * width)
        pu = np.minimum(push * np.maximum(1.0, np.abs(hi)), frac * width)
    x[fin_lo] = np.maximum(x[fin_lo], lo[fin_lo] + pl[fin_lo])
    x[fin_hi] = np.minimum(x[fin_hi], hi[fin_hi] - pu[fin_hi])
    return x


def _ipm(problem, x0, opt: SolverOptions, warm: NlpSolution | None):
    tol = opt.optimality_tol
    x0 = np.clip(x0, problem.lower, problem.upper)
    x0 = _push_into_bounds(x0, problem.lower, problem.upper, opt.bound_push, opt.bound_frac)
    try:
        S = _Scaled(problem, x0)
    except Exception as exc:  # evaluation failure at the start
        raise _EvalError(str(exc)) from exc
    n, nv, m, me = S.n, S.nv, S.m, S.me
    lo, hi = S.lower, S.upper
    has_lo, has_hi = np.isfinite(lo), np.isfinite(hi)

    g_init = problem.eval_ineq(x0)
    s0 = _push_into_bounds(g_init, lo[n:], hi[n:], opt.bound_push, opt.bound_frac)
    v = np.concatenate([x0, s0])

    mu = opt.mu_init
    tau_min = 0.99
    kappa_eps, kappa_mu, theta_mu = 10.0, 0.2, 1.5
    kappa_sigma = 1e10
    s_max = 100.0

    def evaluate(vv):
        try:
            fv = S.f(vv)
            cv = S.c(vv)
        except (FloatingPointError, ValueError, ArithmeticError):
            return None, None
        if not _finite(fv, cv):
            return None, None
        return fv, cv

    f_cur, c_cur = evaluate(v)
    if f_cur is None:
        raise _EvalError("objective or constraints not finite at the initial guess")
    grad = S.grad(v)
    J = S.jac(v)

    # bound multipliers
    zl = np.where(has_lo, 1.0, 0.0)
    zu = np.where(has_hi, 1.0, 0.0)
    lam = np.zeros(m)
    if warm is not None and warm.lam_eq.size == me and warm.lam_ineq.size == S.mi:
        lam = np.concatenate([warm.lam_eq, warm.lam_ineq]) / S.c_scale * S.obj_scale
        if warm.z_lower.size == nv:
            zl = np.where(has_lo, np.maximum(warm.z_lower * S.obj_scale, mu / np.maximum(v - lo, 1e-300)), 0.0)
            zu = np.where(has_hi, np.maximum(warm.z_upper * S.obj_scale, mu / np.maximum(hi - v, 1e-300)), 0.0)
    elif m:
        # least-squares estimate of the equality multipliers
        ls = _KKT()
        if ls.factor(sp.csr_matrix((nv, nv)), np.ones(nv), J, 1.0,
                     -np.concatenate([grad - zl + zu, np.zeros(m)])):
            lam = ls.sol[nv:]
            if not np.all(np.isfinite(lam)) or np.abs(lam).max() > 1e3:
                lam = np.zeros(m)

    theta0 = np.abs(c_cur).sum()
    theta_max = 1e4 * max(1.0, theta0)
    theta_min = 1e-4 * max(1.0, theta0)
    filt: list[tuple[float, float]] = []
    kkt = _KKT()
    history = []
    status = ITERATION_LIMIT
    it = 0
    last = (0.0, 0.0, "")

    def slacks(vv):
        sl = np.where(has_lo, vv - lo, 1.0)
        su = np.where(has_hi, hi - vv, 1.0)
        return sl, su

    def barrier_phi(fv, vv):
        sl, su = slacks(vv)
        if np.any(sl[has_lo] <= 0.0) or np.any(su[has_hi] <= 0.0):
            return np.inf
        return fv - mu * (np.log(sl[has_lo]).sum() + np.log(su[has_hi]).sum())

    def errors(mu_):
        sl, su = slacks(v)
        dual = grad + J.T @ lam - zl + zu
        comp_l = np.where(has_lo, zl * sl - mu_, 0.0)
        comp_u = np.where(has_hi, zu * su - mu_, 0.0)
        nz = has_lo.sum() + has_hi.sum()
        zsum = np.abs(zl).sum() + np.abs(zu).sum()
        s_d = max(s_max, (np.abs(lam).sum() + zsum) / max(m + nz, 1)) / s_max
        s_c = max(s_max, zsum / max(nz, 1)) / s_max
        e_dual = np.abs(dual).max() / s_d if nv else 0.0
        e_prim = np.abs(c_cur).max() if m else 0.0
        e_comp = max(np.abs(comp_l).max(initial=0.0), np.abs(comp_u).max(initial=0.0)) / s_c
        return max(e_dual, e_prim, e_comp), e_dual, e_prim, e_comp

    def raw_violation(vv):
        x = vv[:n]
        h, g = S.raw_constraints(x)
        parts = [0.0]
        if h.size:
            parts.append(np.abs(h).max())
        if g.size:
            parts.append(max(0.0, g.max()))
        return max(parts)

    while True:
        e0, e_dual, e_prim, e_comp = errors(0.0)
        viol_raw = raw_violation(v)
        history.append((it, f_cur / S.obj_scale, e_prim, e_dual, mu))
        if opt.verbosity:
            log.info("it %4d  f %.8e  inf_pr %.2e  inf_du %.2e  mu %.1e  dw %.1e  a_pr %.2e  %s",
                     it, f_cur / S.obj_scale, e_prim, e_dual, mu, last[0], last[1], last[2])
        if e0 <= tol and viol_raw <= opt.feasibility_tol:
            status = CONVERGED
            break
        if it >= opt.max_iterations:
            status = ITERATION_LIMIT
            break

        # barrier parameter update (monotone)
        while True:
            e_mu = errors(mu)[0]
            if e_mu > kappa_eps * mu:
                break
            new_mu = max(tol / 10.0, min(kappa_mu * mu, mu**theta_mu))
            if new_mu >= mu:
                break
            mu = new_mu
            filt = []
        tau = max(tau_min, 1.0 - mu)

        # Newton system
        sl, su = slacks(v)
        sigma = np.where(has_lo, zl / sl, 0.0) + np.where(has_hi, zu / su, 0.0)
        try:
            W = S.hess(v, lam)
        except (FloatingPointError, ValueError, ArithmeticError) as exc:
            raise _EvalError(str(exc)) from exc
        if not np.all(np.isfinite(W.data)):
            raise _EvalError("non-finite Hessian")
        grad_phi = grad - np.where(has_lo, mu / sl, 0.0) + np.where(has_hi, mu / su, 0.0)
        rhs = -np.concatenate([grad_phi + J.T @ lam, c_cur])
        if not kkt.factor(W, sigma, J, mu, rhs):
            status = INFEASIBLE
            break
        sol = kkt.sol
        dv, dlam = sol[:nv], sol[nv:]
        dzl = np.where(has_lo, mu / sl - zl - zl / sl * dv, 0.0)
        dzu = np.where(has_hi, mu / su - zu + zu / su * dv, 0.0)

        alpha_max = _frac_to_boundary(sl, su, dv, has_lo, has_hi, tau)
        alpha_z = _frac_to_boundary_z(zl, zu, dzl, dzu, has_lo, has_hi, tau)

        # filter line search
        theta = np.abs(c_cur).sum()
        phi = barrier_phi(f_cur, v)
        gphi_d = grad_phi @ dv
        alpha = alpha_max
        alpha_min = _alpha_min(theta, gphi_d, theta_min)
        accepted = False
        n_soc = 0
        while alpha >= alpha_min:
            trial = v + alpha * dv
            ft, ct = evaluate(trial)
            if ft is not None:
                ok, ftype = _acceptable(trial, ft, ct, alpha, theta, phi, gphi_d, theta_min,
                                        theta_max, filt, barrier_phi)
                if not ok and alpha == alpha_max and n_soc == 0 and np.abs(ct).sum() >= theta and opt.max_soc:
                    # second-order correction
                    c_soc = alpha * c_cur + ct
                    theta_soc_prev = theta
                    for _ in range(opt.max_soc):
                        r = -np.concatenate([grad_phi + J.T @ lam, c_soc])
                        ds = kkt.solve(r)[:nv]
                        a_soc = _frac_to_boundary(sl, su, ds, has_lo, has_hi, tau)
                        trial_s = v + a_soc * ds
                        fs, cs_ = evaluate(trial_s)
                        n_soc += 1
                        if fs is None:
                            break
                        ok, ftype = _acceptable(trial_s, fs, cs_, alpha, theta, phi, gphi_d, theta_min,
                                                theta_max, filt, barrier_phi)
                        if ok:
                            trial, ft, ct = trial_s, fs, cs_
                            break
                        th_s = np.abs(cs_).sum()
                        if th_s > 0.99 * theta_soc_prev:
                            break
                        theta_soc_prev = th_s
                        c_soc = a_soc * c_soc + cs_
                if ok:
                    accepted = True
                    if not ftype:
                        filt.append(((1 - 1e-5) * theta, phi - 1e-8 * theta))
                    break
            alpha *= 0.5
        if not accepted:
            # feasibility restoration by damped Gauss-Newton on ||c||
            rest = _restore(S, v, lo, hi, has_lo, has_hi, evaluate, theta)
            if rest is None:
                status = INFEASIBLE
                break
            trial, ft, ct = rest
            alpha = 1.0
            filt.append(((1 - 1e-5) * theta, phi - 1e-8 * theta))
            # restart bound multipliers
            sl_t, su_t = slacks(trial)
            zl = np.where(has_lo, mu / sl_t, 0.0)
            zu = np.where(has_hi, mu / su_t, 0.0)
            alpha_z = 0.0
            dzl = np.zeros(nv)
            dzu = np.zeros(nv)
            dlam = np.zeros(m)

        v = trial
        f_cur, c_cur = ft, ct
        lam = lam + alpha * dlam
        zl = zl + alpha_z * dzl
        zu = zu + alpha_z * dzu
        # keep bound multipliers close to the primal-dual central path
        sl, su = slacks(v)
        zl = np.where(has_lo, np.clip(zl, mu / (kappa_sigma * sl), kappa_sigma * mu / sl), 0.0)
        zu = np.where(has_hi, np.clip(zu, mu / (kappa_sigma * su), kappa_sigma * mu / su), 0.0)
        grad = S.grad(v)
        J = S.jac(v)
        last = (kkt.delta_w, alpha, ("r" if not accepted else ("s" if n_soc else "")))
        it += 1

    x = v[:n].copy()
    lam_raw = lam * S.c_scale / S.obj_scale
    return NlpSolution(
        x=x,
        objective_value=float(problem.objective(x)),
        status=status,
        iterations=it,
        max_violation=max_violation(problem, x),
        lam_eq=lam_raw[:me],
        lam_ineq=lam_raw[me:],
        z_lower=zl / S.obj_scale,
        z_upper=zu / S.obj_scale,
        kkt_error=errors(0.0)[0],
        history=history,
    )


def _frac_to_boundary(sl, su, d, has_lo, has_hi, tau):
    alpha = 1.0
    neg = has_lo & (d < 0)
    if np.any(neg):
        alpha = min(alpha, (-tau * sl[neg] / d[neg]).min())
    pos = has_hi & (d > 0)
    if np.any(pos):
        alpha = min(alpha, (tau * su[pos] / d[pos]).min())
    return alpha


def _frac_to_boundary_z(zl, zu, dzl, dzu, has_lo, has_hi, tau):
    alpha = 1.0
    m = has_lo & (dzl < 0)
    if np.any(m):
        alpha = min(alpha, (-tau * zl[m] / dzl[m]).min())
    m = has_hi & (dzu < 0)
    if np.any(m):
        alpha = min(alpha, (-tau * zu[m] / dzu[m]).min())
    return alpha


_S_PHI, _S_THETA, _DELTA, _ETA = 2.3, 1.1, 1.0, 1e-8
_G_THETA, _G_PHI = 1e-5, 1e-8


def _alpha_min(theta, gphi_d, theta_min):
    g_alpha = 0.05
    if gphi_d < 0:
        a = min(_G_THETA, _G_PHI * theta / -gphi_d)
        denom = (-gphi_d) ** _S_PHI
        if theta <= theta_min and denom > 0:
            a = min(a, _DELTA * theta**_S_THETA / denom)
        return g_alpha * max(a, 1e-14)
    return g_alpha * _G_THETA if theta > 0 else 1e-12


def _acceptable(trial, ft, ct, alpha, theta, phi, gphi_d, theta_min, theta_max, filt, barrier_phi):
    """Filter acceptance test; returns (accepted, f_type_step)."""
    theta_t = np.abs(ct).sum()
    if theta_t > theta_max:
        return False, False
    phi_t = barrier_phi(ft, trial)
    if not np.isfinite(phi_t):
        return False, False
    for th_f, ph_f in filt:
        if theta_t >= th_f and phi_t >= ph_f:
            return False, False
    switching = gphi_d < 0 and alpha * (-gphi_d) ** _S_PHI > _DELTA * theta**_S_THETA
    if theta <= theta_min and switching:
        return phi_t <= phi + _ETA * alpha * gphi_d, True
    if theta_t <= (1 - _G_THETA) * theta or phi_t <= phi - _G_PHI * theta:
        return True, False
    return False, False


def _restore(S, v, lo, hi, has_lo, has_hi, evaluate, theta):
    """Reduce constraint violation with regularized Gauss-Newton steps.

    Returns a point acceptable to the filter, or ``None``.
    """
    cur = v.copy()
    fc, cc = evaluate(cur)
    th = np.abs(cc).sum()
    for _ in range(50):
        Jc = S.jac(cur)
        sl = np.where(has_lo, cur - lo, np.inf)
        su = np.where(has_hi, hi - cur, np.inf)
        # proximal weight keeps the step near the current point and off the bounds
        dist = np.minimum(sl, su)
        w = 1e-6 + 1.0 / np.minimum(dist, 1e6) ** 2 * 1e-8
        JW = Jc @ sp.diags(1.0 / w)
        Mmat = (JW @ Jc.T + 1e-10 * sp.identity(Jc.shape[0])).tocsc()
        try:
            y = spla.spsolve(Mmat, -cc)
        except RuntimeError:
            return None
        if not np.all(np.isfinite(y)):
            return None
        d = JW.T @ y
        a = _frac_to_boundary(np.where(has_lo, cur - lo, 1.0), np.where(has_hi, hi - cur, 1.0), d,
                              has_lo, has_hi, 0.99)
        improved = False
        while a > 1e-8:
            trial = cur + a * d
            ft, ct = evaluate(trial)
            if ft is not None and np.abs(ct).sum() < (1 - 1e-4 * a) * th:
                cur, fc, cc = trial, ft, ct
                th = np.abs(cc).sum()
                improved = True
                break
            a *= 0.5
        if not improved:
            return None
        if th <= 0.9 * theta:
            return cur, fc, cc
    return None
