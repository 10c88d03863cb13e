"""
Checking the closed form against a finite-difference solve
==========================================================

Solve the post-expansion HJB equation and the variational inequality for
the pre-expansion firm on an 800 x 800 grid, then compare with the exact
surfaces and read the exercise boundary off the grid.
"""

import time

from optexpand import MarketParams, compute_schedule
from optexpand.vi_solver import Grid, solve_hjb_post, solve_vi, verification_report

p = MarketParams(r=0.08, mu=1.0, sigma=0.8, rho=0.04, beta=1.0, m=1.0, T=8.0, x0=1.0)
grid = Grid.around(p.x0, p.T, Nt=800, Nx=800)

start = time.perf_counter()
post = solve_hjb_post(p, grid)
sol = solve_vi(p, grid, post)
print(f"solved in {time.perf_counter() - start:.2f}s")

report = verification_report(sol, p)
for check in report["checks"]:
    print(f"  {check['name']:<28} {check['value']:.3e}  tol {check['tolerance']:.1e}  "
          f"{'pass' if check['passed'] else 'FAIL'}")
print(f"grid boundary {sol.boundary_t2:.4f} vs exact {compute_schedule(p).t2:.4f} "
      f"(dt = {grid.dt:.4f})")
