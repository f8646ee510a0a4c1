import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from asip.analytic import (closed_form_profile, diffusive_profile, lucas_coefficients, lucas_profile,
                           reynolds, shock_wave, steady_current, steady_profile)
from asip.model import LatticeParams, Phase, derive_rates


@st.composite
def asymmetric_params(draw):
    gl = draw(st.floats(0.1, 5.0, allow_subnormal=False))
    gr = draw(st.floats(0.0, 0.95, allow_subnormal=False)) * gl
    return LatticeParams(L=draw(st.integers(3, 40)), gamma_l=gl, gamma_r=gr,
                         kappa_l=draw(st.floats(0.1, 5.0, allow_subnormal=False)), kappa_r=draw(st.floats(0.1, 5.0, allow_subnormal=False)),
                         nbar_l=draw(st.floats(0.0, 20.0, allow_subnormal=False)), nbar_r=draw(st.floats(0.0, 40.0, allow_subnormal=False)))


def bond_residual(n, p, j):
    return p.gamma_a * n[:-1] * n[1:] + p.gamma_l * n[1:] - p.gamma_r * n[:-1] - j


def test_fibonacci_case_limit():
    p = LatticeParams(L=40, gamma_l=1.0, gamma_r=0.0)
    coeffs = lucas_coefficients(p, current=1.0, n1=1.0)
    assert (coeffs.a, coeffs.b, coeffs.d) == (1.0, 1.0, 0.0)
    n = lucas_profile(coeffs, 40).occupations
    v, oracle = 1.0, [1.0]
    for _ in range(39):
        v = 1.0 / (1.0 + v)
        oracle.append(v)
    np.testing.assert_allclose(n, oracle, rtol=1e-13)
    assert n[-1] == pytest.approx((math.sqrt(5) - 1) / 2, rel=1e-12)
    # oscillating approach
    dev = n[1:12] - (math.sqrt(5) - 1) / 2
    assert np.all(np.sign(dev[1:]) == -np.sign(dev[:-1]))


def test_zero_a_collapses():
    p = LatticeParams(L=8, gamma_l=2.0, gamma_r=0.5)
    coeffs = lucas_coefficients(p, current=2.0 * 0.5 / 1.5, n1=3.0)
    assert coeffs.a == 0.0
    n = lucas_profile(coeffs, 8).occupations
    np.testing.assert_allclose(n[1:], 0.5 / 1.5, rtol=1e-15)


def test_mu_zero_is_flat():
    p = LatticeParams(L=12, gamma_l=1.0, gamma_r=0.3, nbar_r=4.0)
    r = derive_rates(p)
    coeffs = lucas_coefficients(p, r.current_j, r.n_inf)
    assert coeffs.mu == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(lucas_profile(coeffs, 12).occupations, r.n_inf, rtol=1e-12)


@given(asymmetric_params())
@settings(max_examples=100, deadline=None)
def test_lucas_identities_and_closed_form(p):
    r = derive_rates(p)
    assume(r.phase is not Phase.CRITICAL)
    prof = steady_profile(p, closure="infinite")
    coeffs = lucas_coefficients(p, prof.current, prof.occupations[0])
    assert math.sqrt(coeffs.b**2 + 4 * coeffs.a) == pytest.approx(2 * r.n_inf + 1, rel=1e-10)
    assert coeffs.phi_plus - coeffs.phi_minus == pytest.approx(2 * r.speed_c / p.gamma_a, rel=1e-10)
    assert coeffs.ratio == pytest.approx((r.gamma_s - r.speed_c) / (r.gamma_s + r.speed_c), rel=1e-9, abs=1e-12)
    closed = closed_form_profile(coeffs, p.L)
    floor = max(r.n_inf, coeffs.d, 1.0)
    np.testing.assert_allclose(closed, prof.occupations, rtol=1e-9, atol=1e-12 * floor)


@given(asymmetric_params())
@settings(max_examples=100, deadline=None)
def test_lucas_matches_steady_profile(p):
    prof = steady_profile(p)
    coeffs = lucas_coefficients(p, prof.current, prof.occupations[0])
    np.testing.assert_allclose(lucas_profile(coeffs, p.L).occupations, prof.occupations, rtol=1e-9)
    scale = max(abs(prof.current), p.gamma_l * prof.occupations.max(), p.gamma_l * p.gamma_r / p.gamma_a, 1e-300)
    assert np.max(np.abs(bond_residual(prof.occupations, p, prof.current))) <= 1e-9 * scale
    # both reservoir conditions hold for the finite closure
    n = prof.occupations
    assert p.kappa_l * (n[0] - p.nbar_l) == pytest.approx(prof.current, rel=1e-9, abs=1e-9 * scale)
    assert p.kappa_r * (p.nbar_r - n[-1]) == pytest.approx(prof.current, rel=1e-9, abs=1e-9 * scale)


@given(asymmetric_params())
@settings(max_examples=60, deadline=None)
def test_zigzag_alternation(p):
    r = derive_rates(p)
    assume(r.phase is Phase.ZIGZAG)
    n = steady_profile(p, closure="infinite").occupations
    dev = n - r.n_inf
    k = int(np.argmax(np.abs(dev) < 1e-8 * max(r.n_inf, 1.0))) if np.any(np.abs(dev) < 1e-8 * max(r.n_inf, 1.0)) else n.size
    region = dev[: min(k, 6)]
    assume(region.size >= 3)
    assert np.all(np.sign(region[1:]) == -np.sign(region[:-1]))


def test_smooth_has_no_alternation():
    p = LatticeParams(L=30, gamma_l=1.0, gamma_r=0.95, nbar_r=10.0)
    assert derive_rates(p).phase is Phase.SMOOTH
    dev = steady_profile(p, closure="infinite").occupations - derive_rates(p).n_inf
    assert np.all(np.sign(dev[:10]) == np.sign(dev[0]))


def test_geometric_tail_ratio():
    for gr, nb in ((0.7, 1.0), (0.5, 10.0), (0.6, 10.0)):
        p = LatticeParams(L=150, gamma_l=1.0, gamma_r=gr, nbar_r=nb)
        r = derive_rates(p)
        coeffs = lucas_coefficients(p, r.current_j, 0.3 * r.n_inf)
        n = lucas_profile(coeffs, p.L).occupations
        dev = np.abs(n - r.n_inf)
        # deep tail: boundary correction r^p mu negligible, deviation well above rounding
        k = np.arange(1, p.L + 1)
        rr = abs(coeffs.ratio)
        tail = (rr**k * abs(coeffs.mu) < 1e-8) & (dev > 1e-10 * r.n_inf)
        assert tail.sum() >= 4
        slope = np.polyfit(k[tail], np.log(dev[tail]), 1)[0]
        assert math.exp(slope) == pytest.approx(abs((r.gamma_s - r.speed_c) / (r.gamma_s + r.speed_c)), rel=1e-6)


def test_back_flow_profile():
    p = LatticeParams(L=6, gamma_l=1.0, gamma_r=0.75, nbar_l=5.0, nbar_r=0.0)
    prof = steady_profile(p)
    assert prof.current < -p.gamma_a / 4
    coeffs = lucas_coefficients(p, prof.current, prof.occupations[0])
    assert math.isnan(coeffs.mu)
    np.testing.assert_allclose(lucas_profile(coeffs, p.L).occupations, prof.occupations, rtol=1e-12)
    with pytest.raises(ValueError):
        closed_form_profile(coeffs, p.L)


def test_zigzag_example():
    p = LatticeParams(L=10, gamma_l=1.0, gamma_r=0.0, kappa_l=1.0, kappa_r=1.0, nbar_r=30.0)
    n = steady_profile(p).occupations
    assert n[0] > n[1] < n[2]
    assert abs(n[-1] - derive_rates(p).n_inf) < abs(n[1] - derive_rates(p).n_inf)


def test_critical_profile_flat():
    base = LatticeParams(L=15, gamma_l=1.0, kappa_l=2.0, kappa_r=1.0, nbar_r=10.0)
    ga = derive_rates(base).gamma_a_crit
    p = base.replace(gamma_r=1.0 - ga)
    r = derive_rates(p)
    for closure in ("finite", "infinite"):
        n = steady_profile(p, closure).occupations
        np.testing.assert_allclose(n[1:], r.n_inf, rtol=1e-9)
        assert abs(n[0] - r.n_inf) > 1e-3
    assert steady_current(p) == pytest.approx(p.kappa_r * p.nbar_r * p.gamma_l / (p.gamma_l + p.kappa_r), rel=1e-10)


def test_finite_closure_near_infinite_for_long_chain():
    p = LatticeParams(L=200, gamma_l=1.0, gamma_r=0.5, nbar_r=3.0)
    assert steady_current(p) == pytest.approx(steady_current(p, "infinite"), rel=1e-12)
    with pytest.raises(ValueError):
        steady_current(p, "bogus")


def test_diffusive_against_dense_solve():
    p = LatticeParams(L=15, gamma_l=1.0, gamma_r=1.0, kappa_l=1.0, kappa_r=1.0, nbar_r=10.0)
    L = p.L
    # unknowns n_1..n_L, J; equations: left reservoir, L-1 bonds, right reservoir
    a = np.zeros((L + 1, L + 1))
    rhs = np.zeros(L + 1)
    a[0, 0], a[0, L], rhs[0] = p.kappa_l, -1.0, p.kappa_l * p.nbar_l
    for k in range(L - 1):
        a[k + 1, k + 1], a[k + 1, k], a[k + 1, L] = p.gamma_s, -p.gamma_s, -1.0
    a[L, L - 1], a[L, L], rhs[L] = -p.kappa_r, -1.0, -p.kappa_r * p.nbar_r
    sol = np.linalg.solve(a, rhs)
    prof = diffusive_profile(p)
    np.testing.assert_allclose(prof.occupations, sol[:L], rtol=1e-12)
    assert prof.current == pytest.approx(sol[L], rel=1e-12)
    assert np.allclose(np.diff(prof.occupations, 2), 0, atol=1e-12)
    assert steady_profile(p).current == prof.current


def test_diffusive_equilibrium_and_scaling():
    eq = diffusive_profile(LatticeParams(L=9, gamma_l=0.7, gamma_r=0.7, nbar_l=3.0, nbar_r=3.0))
    np.testing.assert_allclose(eq.occupations, 3.0)
    assert eq.current == 0.0
    j = [diffusive_profile(LatticeParams(L=L, gamma_l=1.0, gamma_r=1.0, nbar_r=10.0)).current for L in (400, 800)]
    assert j[1] / j[0] == pytest.approx(0.5, rel=0.02)
    with pytest.raises(ValueError):
        diffusive_profile(LatticeParams(L=5, gamma_l=1.0, gamma_r=0.5))


def test_shock_wave():
    p = LatticeParams(L=100, gamma_l=1.0, gamma_r=0.6)
    sw = shock_wave(2.0, p)
    assert sw.speed == pytest.approx(0.4 * 3.0)
    assert sw.speed > p.gamma_a and sw.width > 0
    assert shock_wave(1e-12, p).speed == pytest.approx(p.gamma_a)
    widths = [shock_wave(n, p).width for n in (1.0, 10.0, 1e3, 1e6)]
    assert np.all(np.diff(widths) < 0) and widths[-1] < 1e-5
    assert sw.density(-1e6) == pytest.approx(0.0)
    assert sw.density(1e6) == pytest.approx(2.0)
    assert sw.density(100.0) == pytest.approx(1.0)
    assert sw.center(10.0) == pytest.approx(100 - 12.0)
    with pytest.raises(ValueError):
        shock_wave(0.0, p)


def test_reynolds():
    assert reynolds(3.0, LatticeParams(L=5, gamma_l=1.0, gamma_r=1.0)) == 0.0
    assert reynolds(1.0, LatticeParams(L=5, gamma_l=1.0, gamma_r=0.0)) == pytest.approx(2.0)


def test_reynolds_tracks_transition():
    # Re(n_inf + 1/2) = c / gamma_s, so Re > 1 exactly in the zigzag phase
    for ga in np.linspace(0.02, 1.0, 30):
        for nb in (1.0, 10.0, 30.0):
            p = LatticeParams(L=10, gamma_l=1.0, gamma_r=1.0 - ga, nbar_r=nb)
            r = derive_rates(p)
            if r.phase is Phase.CRITICAL:
                continue
            assert (reynolds(r.n_inf + 0.5, p) > 1) == (r.phase is Phase.ZIGZAG)
