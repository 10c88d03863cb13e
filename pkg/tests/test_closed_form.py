import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

import oracles
from conftest import market_params
from optexpand import (
    DomainError,
    PolicyKind,
    PolicySpec,
    SurfaceKind,
    ValueSurface,
    compute_schedule,
    optimal_control,
    premium,
    utility,
    value_full,
    value_post_expansion,
)


def _oracle_dict(p):
    return dict(r=p.r, mu=p.mu, sigma=p.sigma, m=p.m, T=p.T, beta=p.beta, rho=p.rho)


@pytest.mark.parametrize("t,x", [(0.0, 1.0), (1.0, -2.0), (3.0, 0.5), (5.5, 2.0), (7.0, 0.0)])
def test_full_value_matches_gaussian_oracle(wait_case, t, x):
    s = compute_schedule(wait_case)
    d = {**_oracle_dict(wait_case), "breaks": [s.t1, s.t2]}
    path = oracles.optimal_path(d, max(t, s.t1), s.t2) if t < s.t2 else oracles.optimal_path(d, s.t2, s.t2)
    exact = oracles.gaussian_utility(d, t, x, path, s.t2)
    assert value_full(t, x, wait_case, s) == pytest.approx(float(exact), rel=1e-10)


@pytest.mark.parametrize("t,x", [(0.0, 1.0), (4.0, 1.0), (7.9, -1.0)])
def test_post_value_matches_gaussian_oracle(wait_case, t, x):
    d = _oracle_dict(wait_case)
    exact = oracles.gaussian_utility(d, t, x, lambda s: oracles.merton(s, **d), -1)
    assert value_post_expansion(t, x, wait_case) == pytest.approx(float(exact), rel=1e-10)


def test_never_expand_value_matches_gaussian_oracle(wait_case):
    p = wait_case.replace(rho=0.2)
    d = _oracle_dict(p)
    t_cross = oracles.WAIT_CASE_T1
    d["breaks"] = [t_cross]
    exact = oracles.gaussian_utility(d, 0.0, 1.0, lambda s: min(oracles.merton(s, **d), 1), math.inf)
    assert value_full(0.0, 1.0, p) == pytest.approx(float(exact), rel=1e-8)


def test_terminal_conditions(wait_case):
    x = np.linspace(-3, 3, 7)
    np.testing.assert_allclose(value_post_expansion(wait_case.T, x, wait_case), utility(x, wait_case.m), rtol=1e-15)
    np.testing.assert_allclose(value_full(wait_case.T, x, wait_case), utility(x, wait_case.m), rtol=1e-15)


def test_continuity_at_thresholds(wait_case):
    s = compute_schedule(wait_case)
    surf = ValueSurface(wait_case, s)
    for tk in (s.t1, s.t2):
        for x in (-1.0, 1.0, 3.0):
            left = surf(tk - 1e-12, x)
            right = surf(tk, x)
            assert abs(left - right) <= 1e-10


def test_equality_region(wait_case):
    assert value_full(7.0, 0.0, wait_case) - value_post_expansion(7.0, 0.0, wait_case) == 0.0
    assert premium(wait_case.T, 0.3, wait_case) == 0.0


def test_premium_zero_at_t2_and_positive_before(wait_case):
    s = compute_schedule(wait_case)
    x = np.linspace(-2, 2, 9)
    assert np.all(premium(s.t2, x, wait_case, s) == 0.0)
    assert np.all(premium(3.0, x, wait_case, s) > 0.0)
    with pytest.raises(DomainError):
        premium(1.0, 0.0, wait_case, s)


def test_premium_matches_quadrature_oracle(wait_case):
    s = compute_schedule(wait_case)
    d = _oracle_dict(wait_case)
    integral = mp.quad(lambda u: wait_case.m * oracles.gain_rate(u, **d), [3.0, s.t2])
    expected = -(1 - mp.e**integral) * value_post_expansion(3.0, 1.0, wait_case)
    assert premium(3.0, 1.0, wait_case, s) == pytest.approx(float(expected), rel=1e-12)


def test_analytic_derivatives_match_finite_differences(wait_case):
    surf = ValueSurface.build(wait_case)
    post = ValueSurface.build(wait_case, SurfaceKind.POST_EXPANSION)
    for sf, t, x in ((post, 4.0, 1.0), (surf, 1.0, 0.5), (surf, 4.0, 1.0), (surf, 7.0, 2.0)):
        d = sf.derivatives(t, x)
        hx, ht = 1e-5, 1e-6
        fx = (sf(t, x + hx) - sf(t, x - hx)) / (2 * hx)
        fxx = (sf(t, x + hx) - 2 * sf(t, x) + sf(t, x - hx)) / hx**2
        ft = (sf(t + ht, x) - sf(t - ht, x)) / (2 * ht)
        assert float(d["x"]) == pytest.approx(fx, rel=1e-6)
        assert float(d["xx"]) == pytest.approx(fxx, rel=1e-4)
        assert float(d["t"]) == pytest.approx(ft, rel=1e-6)


def _residual(p, s, t, x):
    """Relative residual of the HJB / VI operator evaluated on the closed form."""
    d = ValueSurface(p, s).derivatives(t, x)
    post = t >= s.t2
    f = -p.mu * d["x"] / (p.sigma**2 * d["xx"])
    if not post:
        f = np.clip(f, 0.0, p.beta)
    cost = p.rho if post else 0.0
    gen = (p.r * x + p.mu * f - p.delta - cost) * d["x"] + 0.5 * p.sigma**2 * f**2 * d["xx"]
    return abs(d["t"] + gen) / (abs(d["v"]) * max(1.0, abs(d["t"] / d["v"])))


def test_pde_residual_wait_case(wait_case):
    s = compute_schedule(wait_case)
    for t in np.linspace(0.05, 7.95, 40):
        for x in (-2.0, 0.0, 1.0, 4.0):
            assert _residual(wait_case, s, t, x) <= 1e-6


@settings(max_examples=100, deadline=None)
@given(market_params(), st.floats(0.0, 1.0), st.floats(-2.0, 2.0))
def test_pde_residual_random(p, u, x):
    s = compute_schedule(p)
    t = u * p.T * 0.999
    # below this V is zero in double precision and a relative residual is meaningless
    assume(float(ValueSurface(p, s).exponent(t, x)) > -600)
    assert _residual(p, s, t, x) <= 1e-6


@settings(max_examples=100, deadline=None)
@given(market_params(), st.floats(0.0, 1.0), st.floats(-2.0, 2.0))
def test_obstacle_ordering_and_shape(p, u, x):
    s = compute_schedule(p)
    t = u * p.T
    full = ValueSurface(p, s)
    post = ValueSurface(p, s, SurfaceKind.POST_EXPANSION)
    # compare exponents: V = -(1/m) exp(E), so V >= V1 iff E <= E1
    e, e1 = float(full.exponent(t, x)), float(post.exponent(t, x))
    if t >= s.t2:
        assert e == e1
    else:
        assert e <= e1 + 1e-12 * max(1.0, abs(e1))
    # finite differences of V / |V(t, x)|, immune to underflow
    hx = 1e-3 / max(1.0, p.m * math.exp(p.r * (p.T - t)))
    vp = -math.exp(float(full.exponent(t, x + hx)) - e)
    vm = -math.exp(float(full.exponent(t, x - hx)) - e)
    assert vp > -1.0 > vm
    assert vp + 2.0 + vm < 0


def test_optimal_control_shape(wait_case):
    s = compute_schedule(wait_case)
    assert optimal_control(s.t1 - 1e-12, wait_case, s) == pytest.approx(1.0, abs=1e-10)
    assert optimal_control(s.t1, wait_case, s) == 1.0
    assert optimal_control(s.t2 - 1e-9, wait_case, s) == 1.0
    jump = optimal_control(s.t2, wait_case, s)
    assert jump > 1.0
    assert jump == pytest.approx(float(oracles.merton(s.t2, **oracles.WAIT_CASE)), rel=1e-12)
    assert optimal_control(wait_case.T, wait_case, s) == pytest.approx(wait_case.mu / (wait_case.sigma**2 * wait_case.m))
    t = np.linspace(0, wait_case.T, 2001)
    f = optimal_control(t, wait_case, s)
    assert np.all(f[t < s.t2] <= 1.0) and np.all(f[t >= s.t2] > 1.0)


def test_overflow_is_reported(wait_case):
    with pytest.raises(OverflowError):
        value_post_expansion(0.0, -1e4, wait_case)


def test_policy_spec_variants(wait_case):
    s = compute_schedule(wait_case)
    t = np.linspace(0, wait_case.T, 801)
    opt = PolicySpec(s).control(t, wait_case)
    np.testing.assert_array_equal(opt, optimal_control(t, wait_case, s))
    capped = PolicySpec(s, PolicyKind.CAPPED_CONSTANT, level=2.0).control(t, wait_case)
    assert np.all(capped[t < s.t2] == 1.0) and np.all(capped[t >= s.t2] == 2.0)
    pert = PolicySpec(s, PolicyKind.PERTURBED, offset=0.2, window=(0.0, wait_case.T)).control(t, wait_case)
    assert np.all(pert[t < s.t2] <= 1.0)
    shifted = PolicySpec(s, PolicyKind.PERTURBED, expansion_shift=0.5)
    assert shifted.expansion_time == pytest.approx(s.t2 + 0.5)
    late = shifted.control(t, wait_case)
    assert np.all(late[(t >= s.t2) & (t < s.t2 + 0.5)] == 1.0)
