"""Monte Carlo engines for the controlled surplus.

Two models are simulated under a deterministic :class:`PolicySpec`:

* the diffusion  dX = (r X + mu f - delta - rho 1{t >= tau}) dt + sigma f dW,
  discretised with Euler-Maruyama;
* the Cramer-Lundberg insurer with proportional retention f, whose claims
  arrive at exact Poisson times; between claims the surplus follows its
  deterministic ODE, which is integrated in closed form.

The same seed gives the same Brownian increments whatever the policy, so
policy comparisons automatically use common random numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
from scipy import integrate

from .closed_form import PolicyKind, PolicySpec, ValueSurface, utility
from .errors import BudgetError, DistributionError, DomainError, NonFiniteError
from .model import MarketParams, compute_schedule
from .reinsurance import InsuranceParams, diffusion_coefficients, validate_insurance

__all__ = [
    "ClaimSampler",
    "GammaClaims",
    "McConfig",
    "McEstimate",
    "admissibility_check",
    "compare_policies",
    "diffusion_terminal",
    "jump_terminal",
    "simulate_diffusion",
    "simulate_jump",
]


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 200_000
    n_steps: int = 800
    seed: int = 0
    antithetic: bool = True
    budget: int = 2_000_000_000

    def check(self) -> "McConfig":
        if self.n_paths < 1 or self.n_steps < 1:
            raise DomainError("mc", f"need n_paths >= 1 and n_steps >= 1, got "
                                    f"{self.n_paths}, {self.n_steps}")
        if self.antithetic and self.n_paths % 2:
            raise DomainError("n_paths", "antithetic sampling needs an even path count")
        if self.n_paths * self.n_steps > self.budget:
            raise BudgetError(f"{self.n_paths} paths x {self.n_steps} steps exceeds the "
                              f"budget of {self.budget}")
        return self


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_err: float
    n_effective: int

    @property
    def ci95(self) -> tuple[float, float]:
        return (self.mean - 1.96 * self.std_err, self.mean + 1.96 * self.std_err)

    def as_dict(self) -> dict:
        lo, hi = self.ci95
        return {"mean": self.mean, "std_err": self.std_err, "ci95_low": lo,
                "ci95_high": hi, "n_effective": self.n_effective}


def _estimate(samples: np.ndarray, antithetic: bool) -> McEstimate:
    """Mean and standard error; antithetic pairs are averaged first."""
    n = samples.size
    units = samples.reshape(2, -1).mean(axis=0) if antithetic else samples
    if units.size < 2 or np.ptp(units) == 0.0:
        se = 0.0  # np.std of identical values can round to ~1e-18
    else:
        se = float(np.std(units, ddof=1) / math.sqrt(units.size))
    return McEstimate(mean=float(np.mean(samples)), std_err=se, n_effective=n)


def _normals(rng: np.random.Generator, cfg: McConfig) -> np.ndarray:
    if cfg.antithetic:
        z = rng.standard_normal(cfg.n_paths // 2)
        return np.concatenate([z, -z])
    return rng.standard_normal(cfg.n_paths)


def diffusion_terminal(params: MarketParams, policy: PolicySpec, cfg: McConfig,
                       x0: float | None = None,
                       running: Callable[[float, np.ndarray], np.ndarray] | None = None):
    """Euler-Maruyama terminal surplus for every path.

    With ``running`` given, also returns the left-point Riemann sum of
    ``running(t, X_t)`` along each path.
    """
    cfg.check()
    p = params
    dt = p.T / cfg.n_steps
    sq = math.sqrt(dt)
    times = np.arange(cfg.n_steps) * dt
    f = policy.control(times, p)
    tau = policy.expansion_time
    # the running cost starts at the first grid time at or after tau
    cost = np.where(times >= tau, p.rho, 0.0)
    rng = np.random.default_rng(cfg.seed)
    x = np.full(cfg.n_paths, p.x0 if x0 is None else x0, dtype=float)
    acc = np.zeros(cfg.n_paths) if running is not None else None
    for k in range(cfg.n_steps):
        if running is not None:
            acc += running(times[k], x) * dt
        z = _normals(rng, cfg)
        x = x + (p.r * x + p.mu * f[k] - p.delta - cost[k]) * dt + p.sigma * f[k] * sq * z
        if not np.all(np.isfinite(x)):
            raise NonFiniteError("non-finite surplus", step=k + 1)
    return (x, acc) if running is not None else x


def simulate_diffusion(params: MarketParams, policy: PolicySpec, cfg: McConfig,
                       x0: float | None = None) -> McEstimate:
    """Monte Carlo estimate of E[U(X_T)] under ``policy``."""
    x_T = diffusion_terminal(params, policy, cfg, x0)
    return _estimate(utility(x_T, params.m), cfg.antithetic)


class ClaimSampler(Protocol):
    z1: float
    z2: float

    def __call__(self, rng: np.random.Generator, size: int) -> np.ndarray: ...


@dataclass(frozen=True)
class GammaClaims:
    """Gamma claim sizes with mean ``z1`` and raw second moment ``z2``."""

    z1: float
    z2: float

    @property
    def shape(self) -> float:
        return self.z1**2 / (self.z2 - self.z1**2)

    @property
    def scale(self) -> float:
        return (self.z2 - self.z1**2) / self.z1

    def __call__(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.z2 <= self.z1**2:
            return np.full(size, self.z1)
        return rng.gamma(self.shape, self.scale, size)

    def mgf(self, u):
        """E[exp(u Z)], finite for u < 1 / scale."""
        u = np.asarray(u, dtype=float)
        if self.z2 <= self.z1**2:
            return np.exp(u * self.z1)
        return (1.0 - u * self.scale) ** (-self.shape)


def check_sampler(sampler: ClaimSampler, n: int = 1_000_000, seed: int = 12345,
                  rel_tol: float = 0.01) -> None:
    """Raise DistributionError if the first two sample moments miss (z1, z2).

    A miss counts only when it is both above ``rel_tol`` and beyond four
    standard errors, so heavy-tailed but correct samplers are not rejected.
    """
    draws = sampler(np.random.default_rng(seed), n)
    for k, target in ((1, sampler.z1), (2, sampler.z2)):
        powered = draws**k
        est = float(powered.mean())
        se = float(powered.std(ddof=1) / math.sqrt(n))
        if abs(est - target) > rel_tol * abs(target) and abs(est - target) > 4 * se:
            raise DistributionError(
                f"sample moment {k} = {est:.6g} vs declared {target:.6g} (se {se:.2g})"
            )


def _discounted_integral(fn: Callable[[float], float], T: float, r: float,
                         breaks: list[float]) -> float:
    """int_0^T exp(r (T - s)) fn(s) ds, split at the policy breakpoints."""
    edges = [0.0] + [b for b in breaks if 0.0 < b < T] + [T]
    return sum(
        integrate.quad(lambda s: math.exp(r * (T - s)) * fn(s), a, b,
                       limit=200, epsabs=0.0, epsrel=1e-12)[0]
        for a, b in zip(edges[:-1], edges[1:]) if b > a
    )


def _arrivals(rng: np.random.Generator, lam: float, T: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Claim times on [0, T] for ``n`` paths from exponential inter-arrival gaps.

    Returns (path index, time) for every claim.
    """
    if lam == 0:
        return np.empty(0, dtype=int), np.empty(0)
    width = max(4, int(lam * T + 6 * math.sqrt(lam * T) + 6))
    times = np.cumsum(rng.exponential(1.0 / lam, (n, width)), axis=1)
    while np.any(times[:, -1] <= T):
        more = np.cumsum(rng.exponential(1.0 / lam, (n, width)), axis=1) + times[:, -1:]
        times = np.concatenate([times, more], axis=1)
    rows, cols = np.nonzero(times <= T)
    return rows, times[rows, cols]


def jump_terminal(ins: InsuranceParams, policy: PolicySpec, cfg: McConfig,
                  sampler: ClaimSampler | None = None, x0: float | None = None,
                  block: int = 20_000, check: bool = True) -> np.ndarray:
    """Terminal surplus of the compound-Poisson insurer for every path.

    Between claims dX = (r X + [f (1 + theta) - (theta - eta)] lam z1 - rho 1{t >= tau}) dt;
    at a claim time the surplus drops by f(T_i) Z_i. Variation of constants
    gives X_T exactly, so no time grid is involved.
    """
    validate_insurance(ins)
    cfg.check()
    sampler = sampler or GammaClaims(ins.z1, ins.z2)
    if check:
        check_sampler(sampler)
    params = diffusion_coefficients(ins)
    T, r = ins.T, ins.r
    tau = policy.expansion_time

    def drift(s: float) -> float:
        f = float(policy.control(s, params))
        return (f * (1 + ins.theta) - (ins.theta - ins.eta)) * ins.lam * ins.z1 - (
            ins.rho if s >= tau else 0.0
        )

    start = ins.x0hat if x0 is None else x0
    det = start * math.exp(r * T) + _discounted_integral(drift, T, r, policy.breakpoints())
    rng = np.random.default_rng(cfg.seed)
    out = np.empty(cfg.n_paths)
    for lo in range(0, cfg.n_paths, block):
        n = min(block, cfg.n_paths - lo)
        rows, t_claim = _arrivals(rng, ins.lam, T, n)
        sizes = sampler(rng, rows.size)
        loss = np.exp(r * (T - t_claim)) * policy.control(t_claim, params) * sizes
        out[lo:lo + n] = det - np.bincount(rows, weights=loss, minlength=n)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("non-finite surplus in jump model")
    return out


def simulate_jump(ins: InsuranceParams, policy: PolicySpec, cfg: McConfig,
                  sampler: ClaimSampler | None = None, x0: float | None = None) -> McEstimate:
    """Monte Carlo E[U(X_T)] for the jump model (plain sampling, no antithetics)."""
    x_T = jump_terminal(ins, policy, cfg, sampler, x0)
    return _estimate(utility(x_T, ins.m), antithetic=False)


def compare_policies(params: MarketParams, policies: dict[str, PolicySpec], cfg: McConfig,
                     x0: float | None = None, baseline: str = "optimal") -> list[dict]:
    """Estimate every policy with common random numbers.

    Each row carries the estimate, its gap to ``baseline`` and the standard
    error of that gap from the paired samples.
    """
    samples = {name: utility(diffusion_terminal(params, pol, cfg, x0), params.m)
               for name, pol in policies.items()}
    base = samples[baseline]
    base_est = _estimate(base, cfg.antithetic)
    rows = []
    for name, u in samples.items():
        est = _estimate(u, cfg.antithetic)
        diff = _estimate(u - base, cfg.antithetic)
        rows.append({
            "policy": name,
            **est.as_dict(),
            "gap": diff.mean,
            "gap_std_err": diff.std_err,
            "combined_std_err": math.hypot(est.std_err, base_est.std_err),
        })
    return rows


def _fourth_power_integral(params: MarketParams, policy: PolicySpec) -> float:
    """Exact int_0^T f(s)^4 ds for the optimal policy (piecewise elementary)."""
    p, s = params, policy.schedule
    k4 = p.merton_level**4
    r4 = 4 * p.r

    def merton_piece(a: float, b: float) -> float:
        return k4 * (math.exp(-r4 * (p.T - b)) - math.exp(-r4 * (p.T - a))) / r4

    if not s.expands:
        t_cross = p.T - math.log(p.merton_level / p.beta) / p.r if p.merton_level > p.beta else p.T
        t_cross = min(max(t_cross, 0.0), p.T)
        return merton_piece(0.0, t_cross) + p.beta**4 * (p.T - t_cross)
    return merton_piece(0.0, s.t1) + p.beta**4 * (s.t2 - s.t1) + merton_piece(s.t2, p.T)


def admissibility_check(params: MarketParams, policy: PolicySpec, cfg: McConfig,
                        x0: float | None = None, limit: float = 1e12) -> dict:
    """Numerical version of the admissibility and moment conditions.

    Reports int f^4 ds (exact for the optimal policy, quadrature otherwise),
    a Monte Carlo estimate of E[int (dV/dx)^4 ds] along simulated paths and
    E[exp(-m X_T)]. ``flagged`` is set when any of them is non-finite or
    above ``limit``.
    """
    p = params
    grid = np.linspace(0.0, p.T, cfg.n_steps + 1)
    values = np.asarray(policy.control(grid, p), dtype=float)
    if not np.all(np.isfinite(values)):
        f4 = math.inf
    elif policy.kind is PolicyKind.OPTIMAL:
        f4 = _fourth_power_integral(p, policy)
    else:
        edges = [0.0] + policy.breakpoints() + [p.T]
        f4 = sum(integrate.quad(lambda s: float(policy.control(s, p)) ** 4, a, b, limit=200)[0]
                 for a, b in zip(edges[:-1], edges[1:]) if b > a)

    out = {"int_f4": f4}
    if math.isfinite(f4) and f4 <= limit:
        surface = ValueSurface(p, policy.schedule if policy.schedule.expands
                               else compute_schedule(p))

        def dvx4(t, x):
            return surface.derivatives(t, x)["x"] ** 4

        x_T, acc = diffusion_terminal(p, policy, cfg, x0, running=dvx4)
        grad = _estimate(acc, cfg.antithetic)
        neg = _estimate(np.exp(-p.m * x_T), cfg.antithetic)
        out["mc_int_dvx4"] = grad.as_dict()
        out["mc_exp_moment"] = neg.as_dict()
        finite = all(math.isfinite(e.mean) and e.mean <= limit for e in (grad, neg))
    else:
        finite = False
    out["flagged"] = not (math.isfinite(f4) and f4 <= limit and finite)
    return out

