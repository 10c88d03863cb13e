"""Explicit value functions and the optimal control under exponential utility.

Every value surface here has the form

    V(t, x) = -(1/m) exp(E(t, x)),   E(t, x) = -m a(t) x + c(t),

with a(t) = exp(r (T - t)). Only the time part ``c`` differs between the
post-expansion value, the auxiliary value and the full value, so values are
built from exponents and exponentiated last.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import DomainError
from .model import (
    ExpansionSchedule,
    MarketParams,
    compute_schedule,
    exposure_growth,
    h,
    h_integral,
)

__all__ = [
    "PolicyKind",
    "PolicySpec",
    "SurfaceKind",
    "ValueSurface",
    "merton_exposure",
    "optimal_control",
    "premium",
    "utility",
    "value_full",
    "value_post_expansion",
]

# exp() overflows just above 709.78
_MAX_EXPONENT = 709.0


def utility(x, m: float):
    """Exponential (CARA) utility -(1/m) exp(-m x)."""
    return -np.exp(-m * np.asarray(x, dtype=float)) / m


def merton_exposure(t, params: MarketParams):
    """Unconstrained optimal exposure (mu / sigma^2 m) exp(-r (T - t))."""
    return params.merton_level / exposure_growth(t, params)


def _check(exponent):
    if np.any(np.asarray(exponent) > _MAX_EXPONENT):
        raise OverflowError(
            f"value exponent {np.max(exponent):.1f} exceeds the representable range"
        )


def _post_c(t, p: MarketParams):
    """Time part of the post-expansion exponent: -d(t) a(t) + g(t)."""
    a = exposure_growth(t, p)
    d = -(p.delta + p.rho) * p.m / p.r * (1.0 - 1.0 / a)
    return -d * a - p.mu**2 / (2 * p.sigma**2) * (p.T - np.asarray(t, dtype=float))


def _post_c_dot(t, p: MarketParams):
    a = exposure_growth(t, p)
    return -(p.delta + p.rho) * p.m * a + p.mu**2 / (2 * p.sigma**2)


def _pre_c(t, p: MarketParams, s: ExpansionSchedule):
    a = exposure_growth(t, p)
    a1 = math.exp(p.r * (p.T - s.t1))
    d0 = ((p.delta + p.rho) * p.m / p.r - p.rho * p.m / p.r * a1) / a - p.delta * p.m / p.r
    g0 = -p.mu**2 / (2 * p.sigma**2) * (p.T - np.asarray(t, dtype=float)) + h_integral(
        s.t1, s.t2, p
    )
    return -d0 * a + g0


def _pre_c_dot(t, p: MarketParams):
    a = exposure_growth(t, p)
    return -p.delta * p.m * a + p.mu**2 / (2 * p.sigma**2)


class SurfaceKind(str, enum.Enum):
    POST_EXPANSION = "PostExpansion"
    AUXILIARY = "Auxiliary"
    FULL = "Full"


@dataclass(frozen=True)
class ValueSurface:
    """A value function bundled with the schedule it depends on.

    ``AUXILIARY`` is only defined for t >= t1 (the control is pinned at beta
    until expansion); ``FULL`` covers the whole horizon.
    """

    params: MarketParams
    schedule: ExpansionSchedule
    kind: SurfaceKind = SurfaceKind.FULL

    @classmethod
    def build(cls, params: MarketParams, kind: SurfaceKind = SurfaceKind.FULL) -> "ValueSurface":
        return cls(params, compute_schedule(params), kind)

    def time_part(self, t):
        """c(t) in E = -m a(t) x + c(t), together with dc/dt."""
        p, s = self.params, self.schedule
        shape = np.shape(t)
        t = np.atleast_1d(np.asarray(t, dtype=float))
        c = np.array(_post_c(t, p), dtype=float)
        c_dot = np.array(_post_c_dot(t, p), dtype=float)
        if self.kind is SurfaceKind.POST_EXPANSION:
            return c.reshape(shape), c_dot.reshape(shape)
        if not s.expands:
            if self.kind is SurfaceKind.AUXILIARY:
                raise DomainError("schedule", "auxiliary value needs an expandable scenario")
            c, c_dot = _capped_no_expansion_part(t, p)
            return c.reshape(shape), c_dot.reshape(shape)
        if self.kind is SurfaceKind.AUXILIARY and np.any(t < s.t1):
            raise DomainError("t", f"auxiliary value is defined on [t1, T] = [{s.t1}, {p.T}]")
        wait = (t >= s.t1) & (t < s.t2)
        if np.any(wait):
            tw = t[wait]
            c[wait] += h_integral(tw, s.t2, p)
            c_dot[wait] -= p.m * np.asarray(h(tw, p))
        pre = t < s.t1
        if np.any(pre):
            c[pre] = _pre_c(t[pre], p, s)
            c_dot[pre] = _pre_c_dot(t[pre], p)
        return c.reshape(shape), c_dot.reshape(shape)

    def exponent(self, t, x):
        c, _ = self.time_part(t)
        a = exposure_growth(t, self.params)
        return -self.params.m * a * np.asarray(x, dtype=float) + c

    def __call__(self, t, x):
        e = self.exponent(t, x)
        _check(e)
        out = -np.exp(e) / self.params.m
        return float(out) if np.ndim(out) == 0 else out

    def derivatives(self, t, x) -> dict[str, np.ndarray]:
        """Analytic V, dV/dt, dV/dx and d2V/dx2."""
        p = self.params
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        c, c_dot = self.time_part(t)
        a = exposure_growth(t, p)
        e = -p.m * a * x + c
        _check(e)
        v = -np.exp(e) / p.m
        return {
            "v": v,
            "t": (p.r * p.m * a * x + c_dot) * v,
            "x": -p.m * a * v,
            "xx": (p.m * a) ** 2 * v,
        }


def _capped_no_expansion_part(t, p: MarketParams):
    """Time part when expansion never pays: exposure min(f1, beta) forever.

    X_T is Gaussian under a deterministic control, so c(t) is
    -int_t^T [m a (mu f - delta) - (m a sigma f)^2 / 2] ds.
    """

    def rate(s):
        a = math.exp(p.r * (p.T - s))
        f = min(p.merton_level / a, p.beta)
        return p.m * a * (p.mu * f - p.delta) - 0.5 * (p.m * a * p.sigma * f) ** 2

    flat = np.ravel(t)
    c = np.array([-integrate.quad(rate, float(s), p.T, limit=200)[0] for s in flat])
    c_dot = np.array([rate(float(s)) for s in flat])
    return c.reshape(np.shape(t)), c_dot.reshape(np.shape(t))


def value_post_expansion(t, x, params: MarketParams):
    """Value after expansion: -(1/m) exp{(-m x - d(t)) a(t) + g(t)}."""
    e = -params.m * exposure_growth(t, params) * np.asarray(x, dtype=float) + _post_c(t, params)
    _check(e)
    out = -np.exp(e) / params.m
    return float(out) if np.ndim(out) == 0 else out


def premium(t, x, params: MarketParams, schedule: ExpansionSchedule | None = None):
    """Option value of waiting, P = V_aux - V_post, on [t1, T]."""
    s = schedule if schedule is not None else compute_schedule(params)
    if not s.expands:
        raise DomainError("schedule", "premium needs an expandable scenario")
    t = np.asarray(t, dtype=float)
    if np.any(t < s.t1):
        raise DomainError("t", f"premium is defined on [t1, T], t1 = {s.t1}")
    gain = np.where(t < s.t2, h_integral(np.minimum(t, s.t2), s.t2, params), 0.0)
    out = -(1.0 - np.exp(gain)) * value_post_expansion(t, x, params)
    return float(out) if np.ndim(out) == 0 else out


def value_full(t, x, params: MarketParams, schedule: ExpansionSchedule | None = None):
    s = schedule if schedule is not None else compute_schedule(params)
    return ValueSurface(params, s, SurfaceKind.FULL)(t, x)


def optimal_control(t, params: MarketParams, schedule: ExpansionSchedule | None = None):
    """Optimal exposure: Merton level, then beta while waiting, then Merton again."""
    s = schedule if schedule is not None else compute_schedule(params)
    t = np.asarray(t, dtype=float)
    f1 = merton_exposure(t, params)
    if s.expands:
        out = np.where((t >= s.t1) & (t < s.t2), params.beta, f1)
    else:
        out = np.minimum(f1, params.beta)
    return float(out) if np.ndim(out) == 0 else out


class PolicyKind(str, enum.Enum):
    OPTIMAL = "Optimal"
    CAPPED_CONSTANT = "CappedConstant"
    PERTURBED = "Perturbed"


@dataclass(frozen=True)
class PolicySpec:
    """A deterministic exposure path plus the time at which expansion happens.

    ``OPTIMAL`` follows :func:`optimal_control`. ``CAPPED_CONSTANT`` holds
    ``level`` (capped at beta before expansion). ``PERTURBED`` adds ``offset``
    to the optimal path on ``window``; pre-expansion values are clipped back
    into [0, beta] and post-expansion values into [0, inf) so the policy stays
    admissible. ``expansion_shift`` moves the expansion time (the control
    switches to the Merton level at the shifted time).
    """

    schedule: ExpansionSchedule
    kind: PolicyKind = PolicyKind.OPTIMAL
    level: float = 0.0
    offset: float = 0.0
    window: tuple[float, float] | None = None
    expansion_shift: float = 0.0

    @classmethod
    def optimal(cls, params: MarketParams) -> "PolicySpec":
        return cls(compute_schedule(params))

    @property
    def expansion_time(self) -> float:
        """Time from which the cost rho is paid; inf when never expanding."""
        s = self.schedule
        if s.t2 is None:
            return math.inf
        return min(max(s.t2 + self.expansion_shift, 0.0), s.T) if self.expansion_shift else s.t2

    def control(self, t, params: MarketParams):
        t = np.asarray(t, dtype=float)
        tau = self.expansion_time
        expanded = t >= tau
        if self.kind is PolicyKind.CAPPED_CONSTANT:
            out = np.where(expanded, self.level, min(self.level, params.beta))
            return out.astype(float)

        f1 = merton_exposure(t, params)
        s = self.schedule
        t1 = s.t1 if s.t1 is not None else math.inf
        capped = np.minimum(f1, params.beta)
        out = np.where(expanded, f1, np.where(t >= t1, params.beta, capped))
        if self.kind is PolicyKind.PERTURBED:
            lo, hi = self.window if self.window is not None else (0.0, params.T)
            inside = (t >= lo) & (t < hi)
            out = np.where(inside, out + self.offset, out)
            out = np.where(expanded, np.maximum(out, 0.0), np.clip(out, 0.0, params.beta))
        return out.astype(float)

    def breakpoints(self) -> list[float]:
        s = self.schedule
        pts = [s.t1, self.expansion_time]
        if self.window is not None:
            pts.extend(self.window)
        return sorted({float(p) for p in pts if p is not None and 0.0 < p < s.T})
