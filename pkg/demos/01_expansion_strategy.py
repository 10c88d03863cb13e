"""
Expansion strategy for a capped-then-expand firm
================================================

Classify a scenario, locate the switching times and print the exposure
path: Merton-like growth under the cap, a flat stretch at the cap, then the
unconstrained path after expansion.
"""

import numpy as np

from optexpand import MarketParams, compute_schedule, feasibility, optimal_control

p = MarketParams(r=0.08, mu=1.0, sigma=0.8, rho=0.04, beta=1.0, m=1.0, T=8.0, x0=1.0)

rep = feasibility(p)
print("return condition:", rep.cond_return, " cost condition:", rep.cond_cost,
      f" (cost bound {rep.rho_max:.5f})")

s = compute_schedule(p)
print(f"case {s.case.value}: hit cap at {s.t1:.6f}, expand at {s.t2:.6f}, "
      f"wait {s.waiting_time:.6f} years")

t = np.linspace(0, p.T, 17)
for ti, fi in zip(t, optimal_control(t, p, s)):
    print(f"  t={ti:5.2f}  exposure={fi:.4f}")

# a dearer expansion pushes the switch later; past the bound it never happens
for rho in (0.0, 0.02, 0.06, 0.10, 0.11):
    q = compute_schedule(p.replace(rho=rho))
    when = f"t2={q.t2:.4f}" if q.expands else "no expansion"
    print(f"rho={rho:.2f}: {q.case.value:<22} {when}")
