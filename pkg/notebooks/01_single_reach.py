"""
Planning one reach
==================

Plan the default 47.5 cm reach to a 12 cm target and look at what the
optimizer chose: duration, activations, and how the endpoint uncertainty
grows and is then squeezed into the target.

Run with ``python notebooks/01_single_reach.py``; figures land in
``notebooks/out``.
"""
# %%
from pathlib import Path

import numpy as np

from reachopt import arm, lab, nlp, plots, transcribe

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)
p, nm = arm.ArmParams(), arm.NoiseModel()

# %%
# A task is a start state, a target and a width. SweepConfig.task builds the
# geometric version used throughout the experiments.
task = lab.SweepConfig().task(0.475, 0.12, p)
print("start hand", arm.hand_position(task.x0, p), "target", task.p_target)
print("per-axis sigma target", task.sigma_target)

# %%
tx = transcribe.Transcription(task, p, nm)
sol = nlp.solve(tx.problem(), transcribe.initial_guess(task, tx.layout))
traj = transcribe.extract_trajectory(sol, tx.layout)
print(sol.status, sol.iterations, "iterations, t_f =", round(traj.t_f, 3), "s")

# %%
# Endpoint spread along the plan. The terminal constraint pins it at or below
# sigma_target on both axes.
H = arm.kinematics_jacobian(traj.means, p)[:, :2, :]
sd = np.sqrt(np.clip(np.einsum("nij,njk,nik->ni", H, traj.covs, H), 0.0, None))
print("final sigma", sd[-1])

speed = lab.plan_speed(traj, p)
m = lab.velocity_metrics(speed, traj.t_f)
print(f"peak speed {m.v_max:.2f} m/s at {m.t_max_normalized:.2f} of the movement")

# %%
t = traj.times
(out / "single_activations.svg").write_text(plots.chart(
    [plots.Series(t, traj.controls[:, i], f"u{i + 1}") for i in range(6)],
    "Planned activations", "time (s)", "activation"))
(out / "single_sigma.svg").write_text(plots.chart(
    [plots.Series(t, sd[:, 0], "x"), plots.Series(t, sd[:, 1], "y")],
    "Hand position sigma", "time (s)", "m"))
