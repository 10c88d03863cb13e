"""Parameter bundles, feasibility tests and the expansion thresholds.

Everything here is closed-form arithmetic on immutable values. The surplus
dynamics are

    dX = (r X + mu f - delta - rho 1{s >= tau}) ds + sigma f dW,

with the control capped at ``beta`` before the expansion time ``tau`` and
unbounded (non-negative) afterwards.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import DegenerateError, DomainError

__all__ = [
    "Case",
    "ExpansionSchedule",
    "FeasibilityReport",
    "MarketParams",
    "compute_schedule",
    "exposure_growth",
    "feasibility",
    "h",
    "h_integral",
    "validate",
    "waiting_time_formula",
    "waiting_time_sensitivity",
]


@dataclass(frozen=True)
class MarketParams:
    """Coefficients of the investment-expansion model.

    Construction does not validate; call :func:`validate` first when the
    values come from user input.
    """

    r: float
    mu: float
    sigma: float
    rho: float
    beta: float
    m: float
    T: float
    delta: float = 0.0
    x0: float = 0.0

    def replace(self, **changes) -> "MarketParams":
        return replace(self, **changes)

    def as_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    @property
    def merton_level(self) -> float:
        """Unconstrained optimal exposure at the horizon, mu / (sigma^2 m)."""
        return self.mu / (self.sigma**2 * self.m)


class Case(str, enum.Enum):
    IMMEDIATE_EXPANSION = "ImmediateExpansion"
    WAIT_FROM_START = "WaitFromStart"
    CONSTRAINED_THEN_WAIT = "ConstrainedThenWait"
    NEVER_EXPAND = "NeverExpand"


@dataclass(frozen=True)
class FeasibilityReport:
    cond_return: bool
    rho_max: float
    cond_cost: bool

    @property
    def expandable(self) -> bool:
        return self.cond_return and self.cond_cost


@dataclass(frozen=True)
class ExpansionSchedule:
    """Earliest-incentive time ``t1``, expansion time ``t2`` and the case.

    ``t1`` and ``t2`` are ``None`` for :attr:`Case.NEVER_EXPAND`.
    """

    case: Case
    t1: float | None
    t2: float | None
    T: float

    @property
    def expands(self) -> bool:
        return self.case is not Case.NEVER_EXPAND

    @property
    def waiting_time(self) -> float | None:
        if not self.expands:
            return None
        return self.t2 - self.t1


_POSITIVE = ("r", "mu", "sigma", "beta", "m", "T")
_NON_NEGATIVE = ("rho", "delta")


def validate(params: MarketParams) -> MarketParams:
    """Return ``params`` unchanged or raise :class:`DomainError`."""
    for name in _POSITIVE + _NON_NEGATIVE + ("x0",):
        value = getattr(params, name)
        if not isinstance(value, (int, float, np.floating, np.integer)) or not math.isfinite(value):
            raise DomainError(name, f"must be a finite real number, got {value!r}")
    for name in _POSITIVE:
        if getattr(params, name) <= 0:
            raise DomainError(name, f"must be > 0, got {getattr(params, name)!r}")
    for name in _NON_NEGATIVE:
        if getattr(params, name) < 0:
            raise DomainError(name, f"must be >= 0, got {getattr(params, name)!r}")
    return params


def rho_max(params: MarketParams) -> float:
    p = params
    return p.mu**2 / (2 * p.sigma**2 * p.m) + 0.5 * p.beta**2 * p.sigma**2 * p.m - p.beta * p.mu


def feasibility(params: MarketParams) -> FeasibilityReport:
    p = params
    bound = rho_max(p)
    return FeasibilityReport(
        cond_return=p.mu / p.sigma**2 > p.beta * p.m,
        rho_max=bound,
        cond_cost=p.rho <= bound,
    )


def exposure_growth(t, params: MarketParams):
    """a(t) = exp(r (T - t)); accepts scalars or arrays."""
    return np.exp(params.r * (params.T - np.asarray(t, dtype=float)))


def h(t, params: MarketParams):
    """Net marginal gain rate of expanding at time ``t`` (up to a positive factor).

    Quadratic in a(t) = exp(r (T - t)); its first root after ``t1`` is the
    optimal expansion time.
    """
    p = params
    a = exposure_growth(t, p)
    out = (
        p.mu**2 / (2 * p.sigma**2 * p.m)
        + 0.5 * p.beta**2 * p.sigma**2 * p.m * a**2
        - (p.beta * p.mu + p.rho) * a
    )
    return float(out) if np.ndim(out) == 0 else out


def h_integral(t, t_end: float, params: MarketParams):
    """Exact value of  m * int_t^{t_end} h(s) ds."""
    p = params
    a0 = exposure_growth(t, p)
    a1 = math.exp(p.r * (p.T - t_end))
    t = np.asarray(t, dtype=float)
    out = p.m * (
        p.mu**2 / (2 * p.sigma**2 * p.m) * (t_end - t)
        + 0.5 * p.beta**2 * p.sigma**2 * p.m * (a0**2 - a1**2) / (2 * p.r)
        - (p.beta * p.mu + p.rho) * (a0 - a1) / p.r
    )
    return float(out) if np.ndim(out) == 0 else out


def _log_gap(params: MarketParams) -> float:
    """r (t2 - t1) before clipping: log of the ratio of the two roots of h in a.

    Written as log1p of ((beta mu + rho)^2 - (beta mu)^2) = rho (2 beta mu + rho)
    so that small costs keep full relative precision.
    """
    p = params
    bm = p.beta * p.mu
    return math.log1p((p.rho + math.sqrt(p.rho * (2 * bm + p.rho))) / bm)


def _unclipped_t1(params: MarketParams) -> float:
    p = params
    return p.T - math.log(p.mu / (p.sigma**2 * p.beta * p.m)) / p.r


def _unclipped_t2(params: MarketParams) -> float:
    return _unclipped_t1(params) + _log_gap(params) / params.r


def classify(params: MarketParams) -> Case:
    """Direct evaluation of the three case inequalities."""
    p = params
    if not feasibility(p).expandable:
        return Case.NEVER_EXPAND
    eRT = math.exp(p.r * p.T)
    if p.mu / p.sigma**2 < p.beta * p.m * eRT:
        return Case.CONSTRAINED_THEN_WAIT
    bound = (
        p.mu**2 / (2 * p.sigma**2 * p.m) / eRT
        + 0.5 * p.beta**2 * p.sigma**2 * p.m * eRT
        - p.beta * p.mu
    )
    if p.rho <= bound:
        return Case.IMMEDIATE_EXPANSION
    return Case.WAIT_FROM_START


def compute_schedule(params: MarketParams) -> ExpansionSchedule:
    p = params
    case = classify(p)
    if case is Case.NEVER_EXPAND:
        return ExpansionSchedule(case=case, t1=None, t2=None, T=p.T)
    t1 = min(max(0.0, _unclipped_t1(p)), p.T)
    t2 = min(max(t1, _unclipped_t2(p)), p.T)
    if case is Case.IMMEDIATE_EXPANSION:
        t1 = t2 = 0.0
    elif case is Case.WAIT_FROM_START:
        t1 = 0.0
    return ExpansionSchedule(case=case, t1=t1, t2=t2, T=p.T)


def waiting_time_formula(params: MarketParams) -> float:
    """Waiting time t2 - t1 from the closed form, without the horizon clip.

    Defined whenever mu / sigma^2 > beta m. Beyond the cost bound the value
    exceeds T - t1, i.e. the firm would wait past the horizon.
    """
    p = params
    if not feasibility(p).cond_return:
        raise DomainError("mu", "waiting time needs mu / sigma^2 > beta m")
    t1 = _unclipped_t1(p)
    if t1 >= 0:
        return _log_gap(p) / p.r
    return max(0.0, t1 + _log_gap(p) / p.r)


def waiting_time_sensitivity(params: MarketParams) -> float:
    """d(t2 - t1)/d rho = 1 / (r sqrt((beta mu + rho)^2 - beta^2 mu^2))."""
    p = params
    if p.rho == 0:
        raise DegenerateError("derivative diverges at rho = 0")
    sched = compute_schedule(p)
    if not sched.expands or not sched.t2 > sched.t1:
        raise DegenerateError(f"no interior waiting period (case {sched.case.value})")
    b = p.beta * p.mu + p.rho
    return 1.0 / (p.r * math.sqrt(b * b - (p.beta * p.mu) ** 2))
