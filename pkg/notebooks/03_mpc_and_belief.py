"""
Closed loop and the belief check
================================

Execute one reach under receding-horizon replanning, then compare the
planned endpoint spread with brute-force rollouts of the open-loop plan.
"""
# %%
import numpy as np

from reachopt import arm, belief, lab, mpc, nlp, transcribe

p, nm = arm.ArmParams(), arm.NoiseModel()
task = lab.SweepConfig().task(0.475, 0.12, p)

# %%
trace = mpc.run_mpc(task, mpc.MpcConfig(seed=3), p, nm)
print(trace.status, "MD", round(trace.md, 3), "s over", trace.n_replans, "replans")
for ev in trace.replans:
    print(f"  t={ev.time:.3f}  iterations={ev.iterations:3d}  t_f={ev.t_f:.3f}  executed={ev.executed}")

# %%
# The belief adds C Sigma C^T dt per step, which is what sqrt-dt rollouts
# produce. A slow plan keeps activations off the clamp at u = 1, where the
# linearization is accurate.
slow = task.replace(k_t=1.0)
tx = transcribe.Transcription(slow, p, nm)
plan = transcribe.extract_trajectory(nlp.solve(tx.problem(), transcribe.initial_guess(slow, tx.layout)),
                                     tx.layout)
H = arm.kinematics_jacobian(plan.means[-1], p)
predicted = np.sqrt(belief.endpoint_variance(plan.covs[-1], H))

rng = np.random.default_rng(0)
n = 10_000
L = mpc.noise_factor(nm) / np.sqrt(plan.dt)
X = np.tile(plan.means[0], (n, 1))
for u in plan.controls[:-1]:
    X = X + arm.dynamics(X, np.broadcast_to(u, (n, 6)), rng.standard_normal((n, 6)) @ L.T, p) * plan.dt
sampled = arm.hand_position(X, p).std(axis=0)
print("belief sigma", predicted, "rollout sigma", sampled, "ratio", sampled / predicted)
