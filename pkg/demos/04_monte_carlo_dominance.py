"""
Simulated utility of the optimal and perturbed strategies
=========================================================

Estimate expected terminal utility with antithetic Euler paths. All
policies share the same random numbers, so their differences are sharp.
"""

from optexpand import MarketParams, PolicyKind, PolicySpec, compute_schedule, value_full
from optexpand.simulator import McConfig, compare_policies

p = MarketParams(r=0.08, mu=1.0, sigma=0.8, rho=0.04, beta=1.0, m=1.0, T=8.0, x0=1.0)
s = compute_schedule(p)
cfg = McConfig(n_paths=200_000, n_steps=800, seed=0)

policies = {
    "optimal": PolicySpec(s),
    "bolder after expansion": PolicySpec(s, PolicyKind.PERTURBED, offset=0.2, window=(s.t2, p.T)),
    "timid while waiting": PolicySpec(s, PolicyKind.PERTURBED, offset=-0.2, window=(s.t1, s.t2)),
    "expand half a year late": PolicySpec(s, PolicyKind.PERTURBED, expansion_shift=0.5),
    "stay under the cap": PolicySpec(s, PolicyKind.CAPPED_CONSTANT, level=p.beta),
}
print(f"exact optimal value: {value_full(0.0, p.x0, p, s):.6e}")
for row in compare_policies(p, policies, cfg):
    print(f"  {row['policy']:<26} {row['mean']:.6e} +- {row['std_err']:.1e}  "
          f"gap {row['gap']:+.2e} (se {row['gap_std_err']:.1e})")

# the log of the utility has variance near 11 here, so a few paths carry
# most of the mean. The bolder policy can then look slightly better on a
# given seed; its exact value is lower, and the excess stays well inside
# three standard errors of the two estimates combined.
