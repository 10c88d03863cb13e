import math

import numpy as np
import pytest

import oracles
from optexpand import (
    BudgetError,
    DistributionError,
    DomainError,
    MarketParams,
    NonFiniteError,
    PolicyKind,
    PolicySpec,
    compute_schedule,
    utility,
    value_full,
)
from optexpand.model import Case, ExpansionSchedule
from optexpand.reinsurance import InsuranceParams, reinsurance_schedule, to_diffusion
from optexpand.simulator import (
    GammaClaims,
    McConfig,
    admissibility_check,
    check_sampler,
    compare_policies,
    jump_terminal,
    simulate_diffusion,
    simulate_jump,
)

# tame expand-at-once scenario: log-variance of the terminal utility is 1
TAME = MarketParams(r=0.05, mu=0.5, sigma=0.5, rho=0.02, beta=1.0, m=1.0, T=1.0, x0=1.0)
INSURER = InsuranceParams(lam=50.0, z1=0.02, z2=0.008, eta=0.2, theta=0.5, r=0.05, rho=0.005,
                          m=1.0, T=5.0, x0hat=1.0)


def _euler_log_variance(p, policy, n_steps):
    """Exact variance of m X_T under the Euler recursion with a deterministic policy."""
    dt = p.T / n_steps
    f = policy.control(np.arange(n_steps) * dt, p)
    var = 0.0
    for fk in f:
        var = var * (1 + p.r * dt) ** 2 + p.sigma**2 * fk**2 * dt
    return p.m**2 * var


def _antithetic_se_ratio(s):
    """SE(antithetic) / SE(plain) for exp of a Gaussian with log-variance s."""
    return math.sqrt(1.0 - math.exp(-s))


def test_config_checks():
    with pytest.raises(BudgetError):
        McConfig(n_paths=10_000, n_steps=10_000, budget=1_000_000).check()
    with pytest.raises(DomainError):
        McConfig(n_paths=0).check()
    with pytest.raises(DomainError):
        McConfig(n_paths=11, antithetic=True).check()


def test_estimate_interval():
    est = simulate_diffusion(TAME, PolicySpec(compute_schedule(TAME)), McConfig(2000, 20, 3))
    lo, hi = est.ci95
    assert lo == pytest.approx(est.mean - 1.96 * est.std_err)
    assert hi == pytest.approx(est.mean + 1.96 * est.std_err)
    assert est.std_err >= 0 and est.n_effective == 2000


def test_seed_determinism(wait_case):
    pol = PolicySpec(compute_schedule(wait_case))
    a = simulate_diffusion(wait_case, pol, McConfig(4000, 50, 11))
    b = simulate_diffusion(wait_case, pol, McConfig(4000, 50, 11))
    c = simulate_diffusion(wait_case, pol, McConfig(4000, 50, 12))
    assert a == b
    assert a != c


def test_zero_policy_is_deterministic(wait_case):
    p = wait_case.replace(rho=0.2, delta=0.03)
    s = compute_schedule(p)
    assert s.case is Case.NEVER_EXPAND
    pol = PolicySpec(s, PolicyKind.CAPPED_CONSTANT, level=0.0)
    est = simulate_diffusion(p, pol, McConfig(1000, 400, 0))
    assert est.std_err == 0.0
    # Euler recursion of dx = (r x - delta) dt, solved exactly
    dt = p.T / 400
    g = 1 + p.r * dt
    x_T = p.x0 * g**400 - p.delta * dt * (g**400 - 1) / (g - 1)
    assert est.mean == pytest.approx(float(utility(x_T, p.m)), rel=1e-12)
    continuous = p.x0 * math.exp(p.r * p.T) - p.delta / p.r * (math.exp(p.r * p.T) - 1)
    assert x_T == pytest.approx(continuous, rel=1e-3)


def test_euler_law_matches_closed_form(wait_case):
    # the Euler scheme's own expected utility is within 0.1% of the exact value
    s = compute_schedule(wait_case)
    pol = PolicySpec(s)
    n = 800
    dt = wait_case.T / n
    t = np.arange(n) * dt
    f = pol.control(t, wait_case)
    cost = np.where(t >= pol.expansion_time, wait_case.rho, 0.0)
    mean, var = wait_case.x0, 0.0
    for k in range(n):
        mean = mean * (1 + wait_case.r * dt) + (wait_case.mu * f[k] - wait_case.delta - cost[k]) * dt
        var = var * (1 + wait_case.r * dt) ** 2 + wait_case.sigma**2 * f[k] ** 2 * dt
    euler = -math.exp(-wait_case.m * mean + 0.5 * wait_case.m**2 * var) / wait_case.m
    assert euler == pytest.approx(value_full(0.0, wait_case.x0, wait_case, s), rel=1e-3)


def test_tame_attainment():
    s = compute_schedule(TAME)
    est = simulate_diffusion(TAME, PolicySpec(s), McConfig(40_000, 100, 0))
    assert abs(est.mean - value_full(0.0, TAME.x0, TAME, s)) <= 3 * est.std_err


def test_antithetic_reduction_tame():
    pol = PolicySpec(compute_schedule(TAME))
    s = _euler_log_variance(TAME, pol, 100)
    predicted = _antithetic_se_ratio(s)
    assert predicted < 0.9
    anti = simulate_diffusion(TAME, pol, McConfig(40_000, 100, 0, antithetic=True))
    plain = simulate_diffusion(TAME, pol, McConfig(40_000, 100, 0, antithetic=False))
    ratio = anti.std_err / plain.std_err
    assert ratio <= 0.9
    assert ratio == pytest.approx(predicted, abs=0.05)


@pytest.mark.xfail(strict=True, reason="antithetic pairs cannot reduce variance when the "
                   "terminal utility has log-variance 11; see the decisions ledger")
def test_antithetic_reduction_wait_case(wait_case):
    s = _euler_log_variance(wait_case, PolicySpec(compute_schedule(wait_case)), 800)
    assert s == pytest.approx(11.18, abs=0.01)
    assert _antithetic_se_ratio(s) <= 0.9


def test_step_refinement():
    pol = PolicySpec(compute_schedule(TAME))
    a = simulate_diffusion(TAME, pol, McConfig(40_000, 100, 5))
    b = simulate_diffusion(TAME, pol, McConfig(40_000, 200, 5))
    assert abs(a.mean - b.mean) < 2 * max(a.std_err, b.std_err)


def test_monotone_in_initial_surplus(wait_case):
    pol = PolicySpec(compute_schedule(wait_case))
    cfg = McConfig(4000, 100, 2)
    means = [simulate_diffusion(wait_case, pol, cfg, x0=x).mean for x in (0.0, 1.0, 2.0)]
    assert means[0] < means[1] < means[2]


def test_compare_policies_uses_common_numbers():
    s = compute_schedule(TAME)
    pols = {"optimal": PolicySpec(s),
            "up": PolicySpec(s, PolicyKind.PERTURBED, offset=0.2, window=(0.0, TAME.T))}
    rows = compare_policies(TAME, pols, McConfig(20_000, 50, 1))
    base, up = rows
    assert base["gap"] == 0.0 and base["gap_std_err"] == 0.0
    assert up["gap_std_err"] < up["combined_std_err"]
    assert up["mean"] <= base["mean"] + 3 * up["combined_std_err"]


def test_nonfinite_path_reports_step(wait_case):
    s = compute_schedule(wait_case)

    class Broken:
        schedule = s
        expansion_time = s.t2

        def control(self, t, p):
            return np.where(np.arange(np.size(t)) == 4, np.nan, 1.0)

    with pytest.raises(NonFiniteError) as err:
        simulate_diffusion(wait_case, Broken(), McConfig(100, 10, 0))
    assert err.value.step == 5


def test_admissibility_wait_case(wait_case):
    s = compute_schedule(wait_case)
    rep = admissibility_check(wait_case, PolicySpec(s), McConfig(2000, 100, 0))
    # piecewise elementary integral of f^4, evaluated independently
    k, r, T = wait_case.mu / (wait_case.sigma**2 * wait_case.m), wait_case.r, wait_case.T
    expected = (k**4 / (4 * r) * (math.exp(-4 * r * (T - s.t1)) - math.exp(-4 * r * T))
                + (s.t2 - s.t1)
                + k**4 / (4 * r) * (1 - math.exp(-4 * r * (T - s.t2))))
    assert rep["int_f4"] == pytest.approx(expected, rel=1e-12)
    assert not rep["flagged"]
    assert math.isfinite(rep["mc_int_dvx4"]["mean"])


def test_admissibility_zero_and_blowup(wait_case):
    never = compute_schedule(wait_case.replace(rho=0.2))
    rep = admissibility_check(wait_case.replace(rho=0.2), PolicySpec(never, PolicyKind.CAPPED_CONSTANT),
                              McConfig(200, 20, 0))
    assert rep["int_f4"] == 0.0 and not rep["flagged"]

    class BlowUp:
        kind = PolicyKind.PERTURBED
        schedule = compute_schedule(wait_case)
        expansion_time = schedule.t2

        def control(self, t, p):
            with np.errstate(divide="ignore"):
                return 1.0 / (p.T - np.asarray(t, dtype=float))

        def breakpoints(self):
            return []

    assert admissibility_check(wait_case, BlowUp(), McConfig(200, 20, 0))["flagged"]


def test_gamma_sampler_moments():
    g = GammaClaims(0.02, 0.008)
    check_sampler(g)
    assert g.shape * g.scale == pytest.approx(0.02)
    assert g.shape * (g.shape + 1) * g.scale**2 == pytest.approx(0.008)


def test_bad_sampler_rejected():
    class Liar:
        z1, z2 = 1.0, 2.0

        def __call__(self, rng, size):
            return rng.exponential(1.2, size)

    with pytest.raises(DistributionError):
        check_sampler(Liar())
    s = reinsurance_schedule(INSURER)
    with pytest.raises(DistributionError):
        simulate_jump(INSURER, PolicySpec(s), McConfig(100, 1, 0, False), sampler=Liar())


def test_no_claims_is_deterministic():
    ins = INSURER.replace(lam=0.0)
    s = ExpansionSchedule(Case.NEVER_EXPAND, None, None, ins.T)
    pol = PolicySpec(s, PolicyKind.CAPPED_CONSTANT, level=1.0)
    est = simulate_jump(ins, pol, McConfig(500, 1, 0, False))
    assert est.std_err == 0.0
    x_T = ins.x0hat * math.exp(ins.r * ins.T)
    assert est.mean == pytest.approx(float(utility(x_T, ins.m)), rel=1e-12)


def test_jump_increment_moments():
    ins = INSURER.replace(T=1.0, rho=0.0, x0hat=0.0)
    s = reinsurance_schedule(ins)
    pol = PolicySpec(s, PolicyKind.CAPPED_CONSTANT, level=1.0)
    x = jump_terminal(ins, pol, McConfig(200_000, 1, 0, False))
    growth = (math.exp(ins.r) - 1) / ins.r
    # retained premium minus expected claims, and claim variance, both compounded
    mean = ((1 + ins.eta) * ins.lam * ins.z1 - ins.lam * ins.z1) * growth
    var = ins.lam * ins.z2 * (math.exp(2 * ins.r) - 1) / (2 * ins.r)
    se_mean = x.std(ddof=1) / math.sqrt(x.size)
    dev2 = (x - x.mean()) ** 2
    se_var = dev2.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - mean) <= 3 * se_mean
    assert abs(x.var(ddof=1) - var) <= 3 * se_var


def _mapped(ins):
    return dict(r=ins.r, mu=ins.theta * ins.lam * ins.z1, sigma=math.sqrt(ins.lam * ins.z2),
                m=ins.m, T=ins.T, beta=1.0, rho=ins.rho)


def _jump_gap(ins):
    """Exact log E[exp(-m X_T)]: jump model minus its diffusion approximation."""
    d = _mapped(ins)
    t1, t2 = oracles.times(d)
    path = oracles.optimal_path(d, t1, t2)
    jump = oracles.jump_log_moment(ins, path, t2, breaks=(t1, t2))
    d["breaks"] = (t1, t2)
    diff = oracles.gaussian_utility(d, 0, ins.x0hat, path, t2,
                                    delta=(ins.theta - ins.eta) * ins.lam * ins.z1)
    return float(jump - mp_log(-ins.m * diff))


def mp_log(x):
    return oracles.mp.log(x)


def test_jump_model_matches_exact_moment():
    s = reinsurance_schedule(INSURER)
    est = simulate_jump(INSURER, PolicySpec(s), McConfig(100_000, 1, 0, False))
    d = _mapped(INSURER)
    t1, t2 = oracles.times(d)
    exact = -float(oracles.mp.e ** oracles.jump_log_moment(
        INSURER, oracles.optimal_path(d, t1, t2), t2, breaks=(t1, t2))) / INSURER.m
    assert abs(est.mean - exact) <= 3 * est.std_err


def test_diffusion_of_insurer_attains_closed_form():
    p = to_diffusion(INSURER)
    s = compute_schedule(p)
    est = simulate_diffusion(p, PolicySpec(s), McConfig(40_000, 200, 0))
    assert abs(est.mean - value_full(0.0, p.x0, p, s)) <= 3 * est.std_err


@pytest.mark.xfail(strict=True, reason="with lam*z1 and lam*z2 held fixed the claim skewness "
                   "term lam*E[Z^3] stays constant, so the gap does not shrink; see the ledger")
def test_jump_gap_shrinks_with_fixed_aggregate_moments():
    gaps = [abs(_jump_gap(INSURER.replace(lam=lam, z1=1.0 / lam, z2=0.4 / lam)))
            for lam in (50.0, 200.0)]
    assert gaps[1] < gaps[0]


def test_jump_gap_shrinks_under_diffusion_scaling():
    gaps = []
    for n in (1.0, 4.0, 16.0):
        ins = INSURER.replace(lam=INSURER.lam * n, z1=INSURER.z1 / math.sqrt(n), z2=INSURER.z2 / n,
                              theta=INSURER.theta / math.sqrt(n), eta=INSURER.eta / math.sqrt(n))
        assert to_diffusion(ins).mu == pytest.approx(to_diffusion(INSURER).mu)
        gaps.append(abs(_jump_gap(ins)))
    assert gaps[0] > gaps[1] > gaps[2]
    # leading error is the claim skewness, of order n^{-1/2}
    assert gaps[1] / gaps[2] == pytest.approx(2.0, rel=0.15)
