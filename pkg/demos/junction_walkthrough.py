"""
The 2x1 merge junction, by hand and by simulation
=================================================

Two upstream queues merge into one downstream link whose queue is held at
``Q``.  Queue 1 has capacity ``c``, queue 2 has ``k c``, and each receives
``eta`` times its capacity as inflow.  Only one of them may be served per
slot, so one queue ends up saturated and the other drains to its floor.

Run with ``python3 demos/junction_walkthrough.py``.
"""

import numpy as np

from backpressure.junction import (JunctionParams, analyze_junction, diagnose, phase_region,
                                   region_thresholds, simulate_junction, time_spent_ratio,
                                   upstream_series)
from backpressure.policies import INVERSE_CAPACITY, Alternating

# %% Which queue saturates?
# The closed form splits the (k, Q) plane into two regions with an
# indeterminate band between them.
p = JunctionParams(c=10, k=2, eta=0.4, Q=40)
lo, hi = region_thresholds(p)
print(f"k=2, eta=0.4: region (2,1) for Q <= {lo:.1f}, region (1,2) for Q >= {hi:.1f}")
print("Q=40 ->", phase_region(p))

rep = analyze_junction(p)
print(f"p_act = {rep.p_act:g}, saturated queue oscillates in "
      f"[{rep.bounds.q_s_lo:g}, {rep.bounds.q_s_hi:g}]")

# %% The transient, then a short periodic orbit
# Start from a backlog; the rolling max-priority falls until it reaches
# p_act and then stays within one inflow step of it.
d = diagnose(p, T=600)
print(f"\ntransient ends at t0 = {d.t0}")
print("rolling max-priority, first slots:", np.round(d.pmax[:6], 1))
print("rolling max-priority, last slots: ", np.round(d.pmax[-6:], 1))
u, s = d.region
tail = d.queues[d.t0 + 2:]
print(f"after t0: q_u in [{tail[:, u - 1].min():g}, {tail[:, u - 1].max():g}], "
      f"q_s in [{tail[:, s - 1].min():g}, {tail[:, s - 1].max():g}]")
print("served pattern:", d.served[-9:])

# %% Why uniform weights hurt at high heterogeneity
# With Q = 0 and k = 8 the small queue must grow to k^2 eta c before
# classical backpressure serves it.  A plain alternation keeps it tiny.
g = JunctionParams(c=10, k=8, eta=0.5, Q=0)
q_bp, _, _ = upstream_series(simulate_junction(g, 3000, q0=(0, 0)))
q_alt, _, _ = upstream_series(simulate_junction(g, 3000, q0=(0, 0), policy=Alternating()))
print(f"\nsmall queue, steady state: backpressure min {q_bp[1000:, 0].min():g}, "
      f"alternating max {q_alt[1000:, 0].max():g}")

# %% Inverse-capacity weights fix it
q_new, _, _ = upstream_series(simulate_junction(g.with_mode(INVERSE_CAPACITY), 3000, q0=(0, 0)))
sim = q_bp[1500:, 0].mean() / q_new[1500:, 0].mean()
print(f"saturated-queue ratio classical/proposed: simulated {sim:.2f}, "
      f"closed form {time_spent_ratio(g):.2f} (k = {g.k:g})")
