import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reachopt import arm, belief, transcribe
from reachopt import derivs as ad
from reachopt.errors import InfeasibleTaskError, InvalidArgumentError
from reachopt.transcribe import DesignLayout, ReachTask, Transcription


def small_task(rest_state, n=6, **kw):
    return ReachTask(x0=rest_state, p_target=[-0.1, 0.4], width=0.12, n_nodes=n, **kw)


def random_design(tx, rng):
    """Design vector from a propagated belief under random controls."""
    t = tx.task
    traj = belief.propagate(t.x0, t.P0, rng.uniform(0.01, 0.6, (t.n_nodes, 6)), rng.uniform(0.2, 0.8),
                            tx.p, tx.nm)
    v = transcribe.pack_trajectory(traj)
    # move off the defect manifold so every constraint row is exercised
    return v + 1e-3 * rng.standard_normal(v.size) * (np.abs(v) + 1e-2)


@pytest.mark.parametrize("n", [2, 5, 40])
def test_layout_size_and_roundtrip(n):
    layout = DesignLayout(n)
    assert layout.size == 20 * n + 1
    rng = np.random.default_rng(n)
    U, X, P = rng.random((n, 6)), rng.random((n, 4)), rng.random((n, 10))
    v = layout.pack(U, X, P, 0.7)
    U2, X2, P2, tf = layout.unpack(v)
    np.testing.assert_array_equal(U2, U)
    np.testing.assert_array_equal(X2, X)
    np.testing.assert_array_equal(P2, P)
    assert tf == 0.7


def test_unpack_rejects_wrong_length():
    with pytest.raises(InvalidArgumentError):
        DesignLayout(4).unpack(np.zeros(80))


def test_sigma_from_width():
    # a width equal to the 95% interval of the endpoint distribution
    assert transcribe.sigma_from_width(0.12) == pytest.approx(0.12 / 3.92)


def test_task_validation(rest_state):
    with pytest.raises(InvalidArgumentError):
        ReachTask(x0=[0.5, 1.0, 0.0], p_target=[0, 0.4], width=0.1)
    with pytest.raises(InvalidArgumentError):
        ReachTask(x0=rest_state, p_target=[0, 0.4], width=0.0)
    with pytest.raises(InvalidArgumentError):
        ReachTask(x0=[-0.5, 1.0, 0.0, 0.0], p_target=[0, 0.4], width=0.1)


def test_unreachable_target_raises_before_solving(rest_state, params, noise):
    task = ReachTask(x0=rest_state, p_target=[0.7, 0.2], width=0.1)
    with pytest.raises(InfeasibleTaskError):
        Transcription(task, params, noise)


def test_defects_vanish_on_propagated_belief(rest_state, params, noise):
    rng = np.random.default_rng(1)
    task = small_task(rest_state, n=8, start_at_rest=False)
    tx = Transcription(task, params, noise)
    traj = belief.propagate(task.x0, task.P0, rng.uniform(0.01, 0.5, (8, 6)), 0.5, params, noise)
    h = tx.eq_constraints(transcribe.pack_trajectory(traj))
    dyn = np.r_[tx.rows["mean"].ravel(), tx.rows["cov"].ravel(), tx.rows["x1"], tx.rows["P1"]]
    np.testing.assert_allclose(h[dyn], 0.0, atol=1e-14)


def test_row_counts(rest_state, params, noise):
    tx = Transcription(small_task(rest_state, n=6), params, noise)
    # 14 defects per interval, 14 start rows, 2 start-rest, 4 end-rest, 2 target
    assert tx.n_eq == 14 * 5 + 14 + 2 + 4 + 2
    tx = Transcription(small_task(rest_state, n=6, start_at_rest=False), params, noise)
    assert tx.n_eq == 14 * 5 + 14 + 4 + 2


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2**31))
def test_jacobians_match_finite_differences(rest_state, params, noise, seed):
    tx = Transcription(small_task(rest_state), params, noise)
    v = random_design(tx, np.random.default_rng(seed))
    np.testing.assert_allclose(tx.eq_jacobian(v).toarray(), ad.fd_jacobian(tx.eq_constraints, v),
                               rtol=1e-6, atol=1e-7)
    np.testing.assert_allclose(tx.ineq_jacobian(v), ad.fd_jacobian(tx.ineq_constraints, v),
                               rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(tx.gradient(v), ad.fd_jacobian(tx.objective, v), rtol=1e-7, atol=1e-9)


def test_lagrangian_hessian_matches_finite_differences(rest_state, params, noise):
    rng = np.random.default_rng(7)
    tx = Transcription(small_task(rest_state, n=4), params, noise)
    v = random_design(tx, rng)
    le = rng.standard_normal(tx.n_eq)
    li = rng.standard_normal(2)

    def grad_lag(z):
        return 0.7 * tx.gradient(z) + tx.eq_jacobian(z).T @ le + tx.ineq_jacobian(z).T @ li

    ref = ad.fd_jacobian(grad_lag, v)
    H = tx.hessian(v, 0.7, le, li).toarray()
    np.testing.assert_allclose(H, H.T, atol=1e-12)
    scale = np.abs(ref).max()
    assert np.abs(H - 0.5 * (ref + ref.T)).max() < 1e-5 * scale


def test_objective_closed_form(rest_state, params, noise):
    task = small_task(rest_state, n=5, k_u=2.0, k_t=10.0)
    tx = Transcription(task, params, noise)
    layout = tx.layout
    v = layout.pack(np.full((5, 6), 0.5), np.tile(rest_state, (5, 1)), np.zeros((5, 10)), 0.8)
    # k_u * sum u^2 * dt + k_t * tf with dt = tf / (N - 1)
    assert tx.objective(v) == pytest.approx(2.0 * 30 * 0.25 * 0.2 + 10.0 * 0.8)


def test_initial_guess_satisfies_start_rows(rest_state, params, noise):
    task = small_task(rest_state)
    tx = Transcription(task, params, noise)
    h = tx.eq_constraints(transcribe.initial_guess(task, tx.layout))
    np.testing.assert_allclose(h[np.r_[tx.rows["x1"], tx.rows["P1"]]], 0.0)


def test_solution_satisfies_constraints(solved_plan, default_task, params):
    tx, sol, traj = solved_plan
    assert 0.1 < traj.t_f < 5.0
    np.testing.assert_allclose(arm.hand_position(traj.means[-1], params), default_task.p_target, atol=1e-5)
    H = arm.kinematics_jacobian(traj.means[-1], params)
    assert belief.endpoint_variance(traj.covs[-1], H).max() <= default_task.sigma_target**2 * (1 + 1e-6)
    np.testing.assert_allclose(traj.means[-1, 2:], 0.0, atol=1e-6)
    assert np.linalg.eigvalsh(traj.covs).min() >= -1e-10
    assert np.all(traj.controls >= arm.U_MIN) and np.all(traj.controls <= arm.U_MAX)


def test_pack_extract_roundtrip(solved_plan):
    tx, sol, traj = solved_plan
    np.testing.assert_allclose(transcribe.pack_trajectory(traj), sol.x, atol=1e-15)


def test_shift_guess_without_execution_is_the_plan(solved_plan):
    _, _, traj = solved_plan
    v = transcribe.shift_guess(traj, 0, traj.means[0], traj.covs[0])
    np.testing.assert_allclose(v, transcribe.pack_trajectory(traj), rtol=0, atol=1e-12)


def test_shift_guess_resamples_remaining_time(solved_plan):
    _, _, traj = solved_plan
    n = traj.n_nodes
    x = traj.means[5] + 1e-3
    v = transcribe.shift_guess(traj, 5, x)
    U, X, P, tf = DesignLayout(n).unpack(v)
    assert tf == pytest.approx(traj.t_f * (n - 6) / (n - 1))
    np.testing.assert_array_equal(X[0], x)
    np.testing.assert_array_equal(P[0], 0.0)
    np.testing.assert_array_equal(U[0], traj.controls[5])
    np.testing.assert_array_equal(U[-1], traj.controls[-1])
    np.testing.assert_allclose(X[-1], traj.means[-1], atol=1e-12)
    with pytest.raises(InvalidArgumentError):
        transcribe.shift_guess(traj, n, x)


def test_propagated_shift_guess_satisfies_the_dynamics(solved_plan, params, noise):
    tx, _, traj = solved_plan
    x = traj.means[8] + np.r_[0.0, 0.0, 0.05, -0.05]
    task = tx.task.replace(x0=x, start_at_rest=False)
    sub = transcribe.Transcription(task, params, noise)
    c = sub.eq_constraints(transcribe.shift_guess(traj, 8, x, task.P0, params, noise))
    assert np.abs(c[sub.rows["mean"]]).max() < 1e-12
    assert np.abs(c[sub.rows["cov"]]).max() < 1e-12


def test_task_file_roundtrip(tmp_path, default_task):
    transcribe.save_task(default_task, tmp_path / "task.yaml")
    back = transcribe.load_task(tmp_path / "task.yaml")
    np.testing.assert_array_equal(back.x0, default_task.x0)
    assert back.width == default_task.width and back.n_nodes == default_task.n_nodes
