"""The two learning-rate mechanisms: the data-dependent classifier multiplier
and the milestone decay schedules.
"""
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from adnet.trainer import build_schedule, classifier_lr_ratio

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

# the classifier head trains faster the less data is available:
# ratio = round_to_half(2 * 100 / d_aval) / 2
print("available data %   classifier LR multiplier")
for d_aval in (10, 15, 30, 40, 50, 80, 100):
    print(f"  {d_aval:13d}   {classifier_lr_ratio(d_aval):.1f}")

# milestone decay over a 3200-step budget, two milestone layouts
steps_max = 3200
lr = 0.03
fig, ax = plt.subplots(figsize=(7, 4))
for mode in ("literal_halving", "remaining_halving"):
    sched = build_schedule(steps_max, mode)
    print(f"\n{mode} milestones: {sched.milestones}")
    xs = np.arange(steps_max)
    ax.step(xs, [lr * sched.scale_at(s) for s in xs], where="post", label=mode)
ax.set_xlabel("step")
ax.set_ylabel("backbone LR")
ax.set_yscale("log")
ax.legend()
fig.tight_layout()
fig.savefig(out / "lr_schedules.png", dpi=110)
print("\nwrote", out / "lr_schedules.png")
