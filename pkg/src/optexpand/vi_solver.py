"""Finite-difference solver for the expansion HJB equation and variational inequality.

Backward theta-scheme in time (Crank-Nicolson by default) on a uniform
(t, x) grid with Dirichlet data at the two x-boundaries. The inner
maximisation over the exposure is done by fixed-point policy iteration at
every time level; the obstacle constraint of the VI is enforced with
projected SOR (red-black ordering, so each half-sweep vectorises).

The solver only needs the terminal utility and boundary data. Both default
to the exponential utility and its closed-form values, which is the setup
used to verify the explicit solution.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from . import closed_form
from .errors import BoundaryAmbiguityError, ConvergenceError, DomainError, StabilityError
from .model import ExpansionSchedule, MarketParams, compute_schedule

__all__ = [
    "Grid",
    "PdeSolution",
    "SolverConfig",
    "solve_hjb_post",
    "solve_vi",
    "verification_report",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grid:
    T: float
    Nt: int
    x_min: float
    x_max: float
    Nx: int

    def __post_init__(self):
        if self.Nt < 2 or self.Nx < 2:
            raise DomainError("grid", f"need Nt >= 2 and Nx >= 2, got {self.Nt}, {self.Nx}")
        if not self.x_min < self.x_max:
            raise DomainError("grid", "x_min must be below x_max")
        if not self.T > 0:
            raise DomainError("T", "must be > 0")

    @classmethod
    def around(cls, x0: float, T: float, Nt: int = 800, Nx: int = 800,
               below: float = 7.0, above: float = 9.0) -> "Grid":
        return cls(T=T, Nt=Nt, x_min=x0 - below, x_max=x0 + above, Nx=Nx)

    @property
    def t_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.Nt + 1)

    @property
    def x_nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.Nx + 1)

    @property
    def dt(self) -> float:
        return self.T / self.Nt

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.Nx

    def contains(self, x0: float) -> bool:
        return self.x_min < x0 < self.x_max

    def interior_slice(self, fraction: float = 0.6) -> slice:
        """Index range of the central ``fraction`` of the x-range."""
        cut = int(round(self.Nx * (1.0 - fraction) / 2.0))
        return slice(cut, self.Nx + 1 - cut)


@dataclass(frozen=True)
class SolverConfig:
    """Numerical tolerances.

    ``psor_tol`` and ``obstacle_tol`` are relative to the local value, since
    values span many orders of magnitude across the x-range.
    """

    theta: float = 0.5
    psor_tol: float = 1e-12
    policy_tol: float = 1e-8
    max_iters: int = 10_000
    obstacle_tol: float = 1e-9
    omega: float = 1.5
    cap_factor: float = 10.0
    exercise_fraction: float = 0.9
    concavity_budget: float = 0.01


@dataclass
class PdeSolution:
    grid: Grid
    v_post: np.ndarray
    v_full: np.ndarray
    policy: np.ndarray
    exercise_mask: np.ndarray
    boundary_t2: float | None
    info: dict = field(default_factory=dict)

    @property
    def exercised_fraction(self) -> np.ndarray:
        inner = self.exercise_mask[:, 1:-1]
        return inner.mean(axis=1)


Terminal = Callable[[np.ndarray], np.ndarray]
Boundary = Callable[[float, np.ndarray], np.ndarray]


def _default_terminal(params: MarketParams) -> Terminal:
    return lambda x: closed_form.utility(x, params.m)


def _argmax(v: np.ndarray, dx: float, params: MarketParams, cap: float) -> tuple[np.ndarray, int]:
    """Pointwise maximiser of sigma^2 f^2 v_xx / 2 + mu f v_x over [0, cap].

    Returns the interior policy and the number of nodes where the cap bound.
    """
    d1 = (v[2:] - v[:-2]) / (2 * dx)
    d2 = (v[2:] - 2 * v[1:-1] + v[:-2]) / dx**2
    s2, mu = params.sigma**2, params.mu
    concave = d2 < 0
    safe = np.where(concave, d2, -1.0)
    f = np.where(concave, -mu * d1 / (s2 * safe), 0.0)
    f = np.clip(f, 0.0, cap)
    # non-concave nodes: the objective is convex in f, so an endpoint wins
    gain_cap = 0.5 * s2 * cap**2 * d2 + mu * cap * d1
    f = np.where(~concave & (gain_cap > 0.0), cap, f)
    hits = int(np.count_nonzero(f >= cap)) if 0 < cap < np.inf else 0
    return f, hits


def _howard_step(v, xi, dx, params: MarketParams, cap: float, running_cost: float,
                 f_prev: np.ndarray) -> tuple[np.ndarray, int]:
    """Exact maximiser of the discrete generator applied to v.

    The hybrid stencil is piecewise quadratic in f, so the maximum sits at an
    endpoint or at the stationary point of one of the central, forward or
    backward drift differences. Ties keep the previous control, which makes
    the policy iteration terminate instead of cycling.
    """
    s2, mu = params.sigma**2, params.mu
    d2 = (v[2:] - 2 * v[1:-1] + v[:-2]) / dx**2
    safe = np.where(d2 < 0, d2, -np.inf)
    slopes = ((v[2:] - v[:-2]) / (2 * dx), (v[2:] - v[1:-1]) / dx, (v[1:-1] - v[:-2]) / dx)
    candidates = [np.zeros_like(xi), np.full_like(xi, cap), f_prev]
    candidates += [np.clip(-mu * d1 / (s2 * safe), 0.0, cap) for d1 in slopes]
    scores = []
    for f in candidates:
        lo, di, up, _ = _operator(xi, f, params, running_cost, dx)
        scores.append(_apply(lo, di, up, v))
    scores = np.array(scores)
    best = np.argmax(scores, axis=0)
    keep = scores[2] >= scores.max(axis=0) - 1e-13 * np.abs(scores).max(axis=0)
    best = np.where(keep, 2, best)
    f = np.choose(best, candidates)
    hits = int(np.count_nonzero(f >= cap)) if 0 < cap < np.inf else 0
    return f, hits


def _operator(x: np.ndarray, f: np.ndarray, params: MarketParams, running_cost: float,
              dx: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Tridiagonal generator coefficients (lower, diag, upper) at interior nodes.

    Central differences for the drift where that keeps the stencil monotone,
    one-sided upwinding elsewhere (e.g. where f = 0 and diffusion vanishes).
    """
    diff = 0.5 * params.sigma**2 * f**2 / dx**2
    b = params.r * x + params.mu * f - params.delta - running_cost
    central = diff >= np.abs(b) / (2 * dx)
    lo = np.where(central, diff - b / (2 * dx), diff + np.maximum(-b, 0.0) / dx)
    up = np.where(central, diff + b / (2 * dx), diff + np.maximum(b, 0.0) / dx)
    return lo, -(lo + up), up, int(np.count_nonzero(~central))


def _apply(lo, di, up, v):
    """Generator applied to the interior of v (boundary values included)."""
    return lo * v[:-2] + di * v[1:-1] + up * v[2:]


def _psor(lo, di, up, rhs, v, obstacle, cfg: SolverConfig) -> int:
    """Red-black projected SOR on the interior, in place. Returns sweeps used."""
    n = v.size - 2
    idx = [np.arange(1, n + 1, 2), np.arange(2, n + 1, 2)]
    for sweep in range(1, cfg.max_iters + 1):
        change = 0.0
        for ii in idx:
            k = ii - 1
            gs = (rhs[k] - lo[k] * v[ii - 1] - up[k] * v[ii + 1]) / di[k]
            new = np.maximum(obstacle[ii], v[ii] + cfg.omega * (gs - v[ii]))
            if ii.size:
                change = max(change, float(np.max(np.abs(new - v[ii]) / np.abs(new))))
            v[ii] = new
        if change < cfg.psor_tol:
            return sweep
    raise ConvergenceError(f"PSOR did not reach {cfg.psor_tol} in {cfg.max_iters} sweeps")


def _march(params: MarketParams, grid: Grid, terminal: Terminal, boundary: Boundary,
           running_cost: float, cap: float, cfg: SolverConfig,
           obstacle: np.ndarray | None = None, check_concavity: bool = True):
    """Backward sweep shared by the HJB and VI solves."""
    x = grid.x_nodes
    xi = x[1:-1]
    dt, dx = grid.dt, grid.dx
    t_nodes = grid.t_nodes
    theta = cfg.theta
    V = np.empty((grid.Nt + 1, grid.Nx + 1))
    F = np.zeros_like(V)
    V[-1] = terminal(x)
    if obstacle is not None:
        V[-1] = np.maximum(V[-1], obstacle[-1])
    F[-1, 1:-1], _ = _argmax(V[-1], dx, params, cap)
    info = {"policy_iterations": 0, "psor_sweeps": 0, "cap_hits": 0, "upwind_nodes": 0,
            "max_nonconcave_fraction": 0.0}

    for n in range(grid.Nt - 1, -1, -1):
        lo1, di1, up1, _ = _operator(xi, F[n + 1, 1:-1], params, running_cost, dx)
        explicit = V[n + 1, 1:-1] + (1 - theta) * dt * _apply(lo1, di1, up1, V[n + 1])
        edge = boundary(t_nodes[n], x[[0, -1]])
        v = V[n + 1].copy()
        v[0], v[-1] = edge
        f = F[n + 1, 1:-1].copy()
        for it in range(1, cfg.max_iters + 1):
            lo, di, up, n_up = _operator(xi, f, params, running_cost, dx)
            a_lo, a_di, a_up = -theta * dt * lo, 1.0 - theta * dt * di, -theta * dt * up
            rhs = explicit.copy()
            rhs[0] -= a_lo[0] * v[0]
            rhs[-1] -= a_up[-1] * v[-1]
            ab = np.zeros((3, xi.size))
            ab[0, 1:] = a_up[:-1]
            ab[1] = a_di
            ab[2, :-1] = a_lo[1:]
            v[1:-1] = solve_banded((1, 1), ab, rhs)
            if obstacle is not None:
                # projected SOR started from the unconstrained solve
                v[1:-1] = np.maximum(v[1:-1], obstacle[n, 1:-1])
                a_lo[0] = a_up[-1] = 0.0  # boundary terms already sit in rhs
                info["psor_sweeps"] += _psor(a_lo, a_di, a_up, rhs, v, obstacle[n], cfg)
            f_new, hits = _howard_step(v, xi, dx, params, cap, running_cost, f)
            change = float(np.max(np.abs(f_new - f)))
            f = f_new
            if change < cfg.policy_tol:
                break
        else:
            raise ConvergenceError(
                f"policy iteration did not converge at t = {t_nodes[n]:.6g} "
                f"(last change {change:.3g})"
            )
        info["policy_iterations"] += it
        info["cap_hits"] += hits
        info["upwind_nodes"] += n_up
        V[n] = v
        F[n, 1:-1] = f
        F[n, 0], F[n, -1] = f[0], f[-1]
        if check_concavity:
            d2 = v[2:] - 2 * v[1:-1] + v[:-2]
            frac = float(np.mean(d2 >= 0))
            info["max_nonconcave_fraction"] = max(info["max_nonconcave_fraction"], frac)
            if frac > cfg.concavity_budget:
                raise StabilityError(
                    f"value not concave on {frac:.1%} of interior nodes at t = {t_nodes[n]:.6g}"
                )
    F[-1, 0], F[-1, -1] = F[-1, 1], F[-1, -2]
    return V, F, info


def solve_hjb_post(params: MarketParams, grid: Grid, terminal: Terminal | None = None,
                   config: SolverConfig | None = None, boundary: Boundary | None = None,
                   return_info: bool = False):
    """Value after expansion: exposure in [0, cap], running cost rho.

    The cap is ``config.cap_factor`` times mu / (sigma^2 m); it should never
    bind for the exponential utility and ``info["cap_hits"]`` reports it if
    it does. The x-boundaries default to the closed-form values.
    """
    cfg = config or SolverConfig()
    terminal = terminal or _default_terminal(params)
    if boundary is None:
        boundary = lambda t, xb: closed_form.value_post_expansion(t, xb, params)  # noqa: E731
    cap = cfg.cap_factor * params.mu / (params.sigma**2 * params.m)
    if cap <= 0:
        cap = 0.0
    V, F, info = _march(params, grid, terminal, boundary, params.rho, cap, cfg)
    if info["cap_hits"]:
        log.warning("exposure cap %.4g bound at %d node-levels", cap, info["cap_hits"])
    if return_info:
        return V, F, info
    return V


def _extract_boundary(grid: Grid, mask: np.ndarray, threshold: float) -> float | None:
    frac = mask[:, 1:-1].mean(axis=1)
    flag = frac >= threshold
    # flag must read False ... False True ... True along increasing t
    switches = np.flatnonzero(np.diff(flag.astype(int)))
    if not flag.any():
        return None
    if flag[-1] and switches.size == 0:
        return 0.0 if flag[0] else float(grid.t_nodes[-1])
    if switches.size != 1 or not flag[-1]:
        raise BoundaryAmbiguityError(
            f"exercised fraction crosses {threshold:.0%} {switches.size} times"
        )
    first = int(switches[0]) + 1
    if first == grid.Nt:
        return None
    return float(grid.t_nodes[first])


def solve_vi(params: MarketParams, grid: Grid, obstacle: np.ndarray,
             config: SolverConfig | None = None, terminal: Terminal | None = None,
             boundary: Boundary | None = None) -> PdeSolution:
    """Pre-expansion value: exposure in [0, beta], value kept above ``obstacle``.

    ``obstacle`` is the post-expansion value on the same grid (normally the
    output of :func:`solve_hjb_post`).
    """
    cfg = config or SolverConfig()
    if obstacle.shape != (grid.Nt + 1, grid.Nx + 1):
        raise DomainError("obstacle", f"shape {obstacle.shape} does not match the grid")
    terminal = terminal or _default_terminal(params)
    if boundary is None:
        schedule = compute_schedule(params)
        boundary = lambda t, xb: np.maximum(  # noqa: E731
            closed_form.value_full(t, xb, params, schedule),
            closed_form.value_post_expansion(t, xb, params),
        )
    V, F, info = _march(params, grid, terminal, boundary, 0.0, params.beta, cfg,
                        obstacle=obstacle)
    info["scheme_policy"] = F
    gap = (V - obstacle) / np.abs(obstacle)
    mask = gap <= cfg.obstacle_tol
    t2 = _extract_boundary(grid, mask, cfg.exercise_fraction)

    post_cap = cfg.cap_factor * params.mu / (params.sigma**2 * params.m)
    policy = F.copy()
    if t2 is not None:
        for n in np.flatnonzero(grid.t_nodes >= t2):
            post, _ = _argmax(obstacle[n], grid.dx, params, post_cap)
            row = mask[n, 1:-1]
            policy[n, 1:-1][row] = post[row]
    return PdeSolution(grid=grid, v_post=obstacle, v_full=V, policy=policy,
                       exercise_mask=mask, boundary_t2=t2, info=info)


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool


def _rel_err(num: np.ndarray, exact: np.ndarray) -> np.ndarray:
    return np.abs(num - exact) / np.abs(exact)


def _complementarity(sol: PdeSolution, params: MarketParams, cfg: SolverConfig) -> float:
    """max |min(scheme residual, V - obstacle)| over interior nodes, relative."""
    g = sol.grid
    xi, dt, dx = g.x_nodes[1:-1], g.dt, g.dx
    worst = 0.0
    for n in range(g.Nt):
        lo1, di1, up1, _ = _operator(xi, _scheme_policy(sol, n + 1), params, 0.0, dx)
        lo, di, up, _ = _operator(xi, _scheme_policy(sol, n), params, 0.0, dx)
        vn, vn1 = sol.v_full[n], sol.v_full[n + 1]
        res = (vn[1:-1] - dt * cfg.theta * _apply(lo, di, up, vn)) - (
            vn1[1:-1] + (1 - cfg.theta) * dt * _apply(lo1, di1, up1, vn1)
        )
        scale = np.abs(vn[1:-1])
        gap = (vn[1:-1] - sol.v_post[n, 1:-1]) / scale
        worst = max(worst, float(np.max(np.abs(np.minimum(res / scale, gap)))))
    return worst


def _scheme_policy(sol: PdeSolution, n: int) -> np.ndarray:
    """Interior pre-expansion policy actually used by the scheme at level n."""
    return sol.info["scheme_policy"][n, 1:-1]


def verification_report(sol: PdeSolution, params: MarketParams,
                        schedule: ExpansionSchedule | None = None,
                        config: SolverConfig | None = None,
                        rel_tol: float = 0.01) -> dict:
    """Compare a PDE solution with the closed form; returns plain data.

    Errors are measured on the central 60% of the x-range at every time
    level. Each entry of ``checks`` has a tolerance and a pass flag; the
    boundary check allows one time step.
    """
    cfg = config or SolverConfig()
    s = schedule or compute_schedule(params)
    g = sol.grid
    sl = g.interior_slice(0.6)
    t = g.t_nodes[:, None]
    x = g.x_nodes[None, sl]
    exact_post = closed_form.value_post_expansion(t, x, params)
    err_post = _rel_err(sol.v_post[:, sl], exact_post)
    checks = [Check("v_post_max_rel_error", float(err_post.max()), rel_tol,
                    bool(err_post.max() <= rel_tol))]
    out: dict = {
        "grid": asdict(g),
        "v_post_max_rel_error": float(err_post.max()),
        "v_post_mean_rel_error": float(err_post.mean()),
    }
    if s.expands:
        exact_full = closed_form.value_full(t, x, params, s)
        err_full = _rel_err(sol.v_full[:, sl], exact_full)
        out["v_full_max_rel_error"] = float(err_full.max())
        out["v_full_mean_rel_error"] = float(err_full.mean())
        checks.append(Check("v_full_max_rel_error", float(err_full.max()), rel_tol,
                            bool(err_full.max() <= rel_tol)))
        if sol.boundary_t2 is None:
            berr = math.inf
        else:
            berr = abs(sol.boundary_t2 - s.t2)
        out["boundary_t2"] = sol.boundary_t2
        out["analytic_t2"] = s.t2
        out["boundary_error"] = berr
        checks.append(Check("boundary_error", berr, g.dt * (1 + 1e-9), bool(berr <= g.dt * (1 + 1e-9))))
    else:
        out["boundary_t2"] = sol.boundary_t2
        ok = sol.boundary_t2 is None
        checks.append(Check("no_expansion_boundary", 0.0 if ok else 1.0, 0.0, ok))

    inner = slice(1, -1)
    dvx = np.diff(sol.v_full[:, inner], axis=1)
    d2 = sol.v_full[:, 2:] - 2 * sol.v_full[:, 1:-1] + sol.v_full[:, :-2]
    mono = int(np.count_nonzero(dvx <= 0))
    conc = int(np.count_nonzero(d2 >= 0))
    out["monotonicity_violations"] = mono
    out["concavity_violations"] = conc
    checks.append(Check("monotonicity_violations", mono, 0, mono == 0))
    checks.append(Check("concavity_violations", conc, 0, conc == 0))
    below = float(np.max((sol.v_post - sol.v_full) / np.abs(sol.v_post)))
    out["obstacle_violation"] = below
    checks.append(Check("obstacle_violation", below, 1e-12, below <= 1e-12))
    if "scheme_policy" in sol.info:
        comp = _complementarity(sol, params, cfg)
        out["complementarity_residual"] = comp
        checks.append(Check("complementarity_residual", comp, 1e-8, comp <= 1e-8))
    out["checks"] = [asdict(c) for c in checks]
    out["passed"] = all(c.passed for c in checks)
    return out
