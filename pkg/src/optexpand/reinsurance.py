"""Reinsurance expansion: Cramer-Lundberg insurer mapped onto the diffusion model.

An insurer with claim intensity ``lam``, claim moments ``z1`` (mean) and
``z2`` (raw second moment), premium loading ``eta`` and reinsurer loading
``theta`` retains a fraction ``f`` of each claim. Before expansion
f is in [0, 1]; afterwards f > 1 means writing reinsurance for others.
The diffusion approximation turns this into the investment model with
beta = 1, mu = theta lam z1, delta = (theta - eta) lam z1 and
sigma = sqrt(lam z2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

from .closed_form import optimal_control
from .errors import DomainError
from .model import Case, ExpansionSchedule, MarketParams, compute_schedule, validate

__all__ = [
    "CASE_LABELS",
    "InsuranceParams",
    "case_label",
    "diffusion_coefficients",
    "reinsurance_schedule",
    "reinsurance_strategy",
    "to_diffusion",
    "validate_insurance",
]

CASE_LABELS = {
    Case.IMMEDIATE_EXPANSION: "I",
    Case.WAIT_FROM_START: "II",
    Case.CONSTRAINED_THEN_WAIT: "III",
    Case.NEVER_EXPAND: "NeverExpand",
}


@dataclass(frozen=True)
class InsuranceParams:
    lam: float
    z1: float
    z2: float
    eta: float
    theta: float
    r: float
    rho: float
    m: float
    T: float
    x0hat: float = 0.0

    def replace(self, **changes) -> "InsuranceParams":
        return replace(self, **changes)

    def as_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    @property
    def premium_rate(self) -> float:
        """Expected-value premium (1 + eta) lam z1."""
        return (1 + self.eta) * self.lam * self.z1


def validate_insurance(ins: InsuranceParams) -> InsuranceParams:
    for name in ("lam", "z1", "z2", "eta", "theta", "r", "rho", "m", "T", "x0hat"):
        value = getattr(ins, name)
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise DomainError(name, f"must be a finite real number, got {value!r}")
    for name in ("z1", "eta", "r", "m", "T"):
        if getattr(ins, name) <= 0:
            raise DomainError(name, f"must be > 0, got {getattr(ins, name)!r}")
    for name in ("lam", "rho"):
        if getattr(ins, name) < 0:
            raise DomainError(name, f"must be >= 0, got {getattr(ins, name)!r}")
    if ins.theta < ins.eta:
        raise DomainError("theta", f"reinsurer loading {ins.theta} below insurer loading {ins.eta}")
    if ins.z2 < ins.z1**2:
        raise DomainError("z2", f"second moment {ins.z2} below z1^2 = {ins.z1 ** 2}")
    return ins


def diffusion_coefficients(ins: InsuranceParams) -> MarketParams:
    """The coefficient map alone; no validation of the result.

    A claim-free insurer (``lam = 0``) maps to mu = sigma = 0, which the
    diffusion model rejects but the jump simulation can still use.
    """
    return MarketParams(
        r=ins.r,
        mu=ins.theta * ins.lam * ins.z1,
        sigma=math.sqrt(ins.lam * ins.z2),
        rho=ins.rho,
        beta=1.0,
        m=ins.m,
        T=ins.T,
        delta=(ins.theta - ins.eta) * ins.lam * ins.z1,
        x0=ins.x0hat,
    )


def to_diffusion(ins: InsuranceParams) -> MarketParams:
    validate_insurance(ins)
    return validate(diffusion_coefficients(ins))


def reinsurance_schedule(ins: InsuranceParams) -> ExpansionSchedule:
    return compute_schedule(to_diffusion(ins))


def case_label(schedule: ExpansionSchedule) -> str:
    """Roman-numeral label (I, II, III) used for the reinsurance cases."""
    return CASE_LABELS[schedule.case]


def reinsurance_strategy(t, ins: InsuranceParams, schedule: ExpansionSchedule | None = None):
    """Optimal retained fraction: below 1 means buying cover, above 1 means selling it."""
    params = to_diffusion(ins)
    return optimal_control(t, params, schedule or compute_schedule(params))
