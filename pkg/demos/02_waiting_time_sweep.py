"""
How long to wait at the cap
===========================

Sweep the expansion cost and tabulate the waiting time together with its
analytic sensitivity. Costs beyond the feasibility bound never expand.
"""

import numpy as np

from optexpand import MarketParams, compute_schedule, waiting_time_sensitivity
from optexpand.model import rho_max, waiting_time_formula

base = MarketParams(r=0.08, mu=0.9, sigma=0.8, rho=0.0, beta=1.0, m=1.0, T=8.0)
bound = rho_max(base)
print(f"cost bound: {bound:.6f}")

for rho in np.linspace(0.0, 0.10, 11):
    p = base.replace(rho=rho)
    s = compute_schedule(p)
    if s.expands:
        slope = waiting_time_sensitivity(p) if 0 < rho and s.t1 < s.t2 else float("nan")
        print(f"rho={rho:.3f}  wait={s.waiting_time:.5f}  d wait/d rho={slope:9.4f}")
    else:
        print(f"rho={rho:.3f}  NeverExpand  (unclipped wait {waiting_time_formula(p):.4f})")
