import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from reachopt import arm, belief
from reachopt.errors import DomainError, InvalidArgumentError

mats4 = arrays(np.float64, (4, 4), elements=st.floats(-20, 20))
mats46 = arrays(np.float64, (4, 6), elements=st.floats(-5, 5))
dts = st.floats(1e-4, 0.2)


def test_vech_roundtrip_and_order():
    P = np.arange(16.0).reshape(4, 4)
    P = P + P.T
    v = belief.vech(P)
    np.testing.assert_array_equal(v[:3], [P[0, 0], P[1, 0], P[1, 1]])
    np.testing.assert_array_equal(belief.unvech(v), P)


def test_mean_step_at_equilibrium(params):
    p = params.replace(damping=np.zeros(2))
    x = np.array([0.5, 1.0, 0.0, 0.0])
    np.testing.assert_array_equal(belief.mean_step(x, np.zeros(6), 0.01, p), x)


def test_mean_step_single_muscle_velocity_increment(params):
    # hand computation: a1 = 0.16, a2 = 0.048, a3 = 0.045 at elbow = pi/2;
    # brachialis (f_max 60 N) at u = 0.5 gives 30 N * 0.02 m = 0.6 N m at the elbow
    x = np.array([0.3, np.pi / 2, 0.0, 0.0])
    u = np.zeros(6)
    u[0] = 0.5
    out = belief.mean_step(x, u, 0.01, params)
    det = 0.16 * 0.045 - 0.045**2
    np.testing.assert_allclose(out[2:], [-0.6 * 0.045 / det * 0.01, 0.6 * 0.16 / det * 0.01], rtol=1e-12)
    np.testing.assert_allclose(out[2:], [-0.05217391304347826, 0.18550724637681162], rtol=1e-12)
    np.testing.assert_array_equal(out[:2], x[:2])


def test_mean_step_rejects_bad_dt(params):
    with pytest.raises(InvalidArgumentError):
        belief.mean_step(np.zeros(4), np.zeros(6), 0.0, params)


def test_cov_step_frozen_two_steps():
    A = np.diag([-1.0, -2.0, -3.0, -4.0])
    C = np.hstack([np.eye(4), np.zeros((4, 2))])
    S = 0.01 * np.eye(6)
    P = belief.cov_step(np.zeros((4, 4)), A, C, S, 0.1)
    np.testing.assert_allclose(P, 1e-3 * np.eye(4), rtol=1e-14)
    P = belief.cov_step(P, A, C, S, 0.1)
    np.testing.assert_allclose(np.diag(P), [1.81e-3, 1.64e-3, 1.49e-3, 1.36e-3], rtol=1e-13)


def test_cov_step_converges_to_discrete_lyapunov_solution():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((4, 4)) - 3 * np.eye(4)
    C = rng.standard_normal((4, 6))
    S = np.diag(rng.uniform(0.01, 0.05, 6))
    dt = 0.05
    G = np.eye(4) + A * dt
    assert np.abs(np.linalg.eigvals(G)).max() < 1
    ref = scipy.linalg.solve_discrete_lyapunov(G, C @ S @ C.T * dt)
    P = np.zeros((4, 4))
    for _ in range(3000):
        P = belief.cov_step(P, A, C, S, dt)
    np.testing.assert_allclose(P, ref, rtol=1e-9, atol=1e-14)


def test_cov_step_matches_linear_monte_carlo():
    rng = np.random.default_rng(11)
    A = rng.standard_normal((4, 4)) * 4
    C = rng.standard_normal((4, 6))
    P = np.diag([1e-3, 2e-3, 5e-2, 4e-2])
    S = 0.02 * np.eye(6)
    dt = 0.02
    n = 200_000
    x = rng.standard_normal((n, 4)) * np.sqrt(np.diag(P))
    w = rng.standard_normal((n, 6)) * np.sqrt(0.02)
    y = x @ (np.eye(4) + A * dt).T + np.sqrt(dt) * w @ C.T
    emp = np.cov(y, rowvar=False)
    ref = belief.cov_step(P, A, C, S, dt)
    assert np.linalg.norm(emp - ref) / np.linalg.norm(ref) < 0.02


@settings(max_examples=60)
@given(mats4, mats46, dts, st.floats(1e-6, 1.0))
def test_cov_step_preserves_psd(A, C, dt, scale):
    rng = np.random.default_rng(0)
    B = rng.standard_normal((4, 4))
    P = scale * B @ B.T
    out = belief.cov_step(P, A, C, 0.01 * np.eye(6), dt)
    np.testing.assert_array_equal(out, out.T)
    assert np.linalg.eigvalsh(out).min() >= -1e-10 * max(1.0, np.abs(out).max())


@given(mats4, dts)
def test_zero_noise_zero_covariance_stays_zero(A, dt):
    out = belief.cov_step(np.zeros((4, 4)), A, np.ones((4, 6)), np.zeros((6, 6)), dt)
    np.testing.assert_array_equal(out, 0.0)


def test_cov_step_rejects_indefinite_input():
    P = np.diag([1.0, -1.0, 1.0, 1.0])
    with pytest.raises(DomainError):
        belief.cov_step(P, np.zeros((4, 4)), np.zeros((4, 6)), np.eye(6), 0.1)


def test_propagate_shapes_and_psd(params, noise, rest_state):
    u = np.full((20, 6), 0.2)
    traj = belief.propagate(rest_state, np.zeros((4, 4)), u, 0.4, params, noise)
    assert traj.means.shape == (20, 4) and traj.covs.shape == (20, 4, 4)
    assert traj.dt == pytest.approx(0.4 / 19)
    assert np.linalg.eigvalsh(traj.covs).min() >= -1e-12


def test_endpoint_variance_identity_map():
    P = np.diag([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_allclose(belief.endpoint_variance(P, np.eye(4)), [1.0, 2.0])


def test_belief_trajectory_validation():
    with pytest.raises(InvalidArgumentError):
        belief.BeliefTrajectory(np.zeros((3, 4)), np.zeros((2, 4, 4)), np.zeros((3, 6)), 1.0)
    with pytest.raises(InvalidArgumentError):
        belief.BeliefTrajectory(np.zeros((3, 4)), np.zeros((3, 4, 4)), np.zeros((3, 6)), 0.0)
