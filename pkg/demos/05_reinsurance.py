"""
Retention strategy for an insurer
=================================

Map a compound-Poisson insurer onto its diffusion approximation, read off
the retention schedule, and compare the two models by simulation.
"""

import numpy as np

from optexpand import PolicySpec, value_full
from optexpand.reinsurance import (
    InsuranceParams,
    case_label,
    reinsurance_schedule,
    reinsurance_strategy,
    to_diffusion,
)
from optexpand.simulator import McConfig, simulate_diffusion, simulate_jump

ins = InsuranceParams(lam=50.0, z1=0.02, z2=0.008, eta=0.2, theta=0.5, r=0.05, rho=0.005,
                      m=1.0, T=5.0, x0hat=1.0)
print(to_diffusion(ins))
s = reinsurance_schedule(ins)
print(f"case {case_label(s)}: full retention from {s.t1:.4f}, take on more risk at {s.t2:.4f}")

t = np.linspace(0, ins.T, 11)
print("retention:", np.round(reinsurance_strategy(t, ins, s), 4))

# jump versus diffusion under the same strategy; the gap is the price of
# the Gaussian approximation for claims with this skew
cfg = McConfig(n_paths=50_000, n_steps=400)
diffusion = simulate_diffusion(to_diffusion(ins), PolicySpec(s), cfg)
jump = simulate_jump(ins, PolicySpec(s), cfg)
print(f"closed form {value_full(0.0, ins.x0hat, to_diffusion(ins), s):.6f}")
print(f"diffusion   {diffusion.mean:.6f} +- {diffusion.std_err:.1e}")
print(f"jump        {jump.mean:.6f} +- {jump.std_err:.1e}")
