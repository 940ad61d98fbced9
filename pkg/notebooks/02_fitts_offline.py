"""
Fitts' law from offline plans
=============================

Sweep amplitude and width, plan each reach once and regress duration on
the index of difficulty. Takes about a minute.
"""
# %%
from pathlib import Path

import numpy as np

from reachopt import arm, lab, plots

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)
p, nm = arm.ArmParams(), arm.NoiseModel()
cfg = lab.SweepConfig()

# %%
res = lab.run_sweep(cfg, lab.OFFLINE, p, nm)
for t in res.trials:
    print(f"A={t.A:.3f} W={t.W:.2f} ID={t.ID:.2f} MD={t.MD:.3f}")
print(res.summary_yaml())

# %%
# Velocity profiles, normalized in time. Faster (easier) reaches peak
# earlier in absolute terms but the shapes are close.
series = []
for (A, W), traj in res.extras.items():
    s = lab.plan_speed(traj, p)
    series.append(plots.Series(traj.times / traj.t_f, s, f"A={A} W={W}"))
(out / "offline_profiles.svg").write_text(plots.chart(series, "Hand speed", "t / t_f", "m/s"))

ids = np.array([t.ID for t in res.trials])
md = np.array([t.MD for t in res.trials])
line = np.linspace(ids.min(), ids.max(), 2)
(out / "offline_fitts.svg").write_text(plots.chart(
    [plots.Series(ids, md, "plans", "points"), plots.Series(line, res.fit.predict(line), "fit")],
    "Movement duration vs ID", "ID (bits)", "MD (s)"))
