import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from asip.model import (CRITICAL_WINDOW, DensityProfile, LatticeParams, Phase, Provenance,
                        asymmetry_from_bath, asymptotic_density, derive_rates)

rate = st.floats(0.01, 10.0, allow_subnormal=False)
occupation = st.floats(0.0, 100.0, allow_subnormal=False)


@st.composite
def asymmetric_params(draw):
    gl = draw(rate)
    gr = draw(st.floats(0.0, 0.999, allow_subnormal=False)) * gl
    return LatticeParams(L=draw(st.integers(2, 50)), gamma_l=gl, gamma_r=gr, kappa_l=draw(rate),
                         kappa_r=draw(rate), nbar_l=draw(occupation), nbar_r=draw(occupation))


def test_rejects_invalid():
    with pytest.raises(ValueError):
        LatticeParams(L=1)
    with pytest.raises(ValueError):
        LatticeParams(L=5, kappa_l=-1.0)
    with pytest.raises(ValueError):
        LatticeParams(L=5, gamma_l=0.5, gamma_r=1.0)
    with pytest.raises(ValueError):
        LatticeParams(L=5, nbar_r=math.nan)
    with pytest.raises(ValueError):
        derive_rates(LatticeParams(L=5, gamma_l=0.0, gamma_r=0.0))


def test_critical_asymmetry_example():
    r = derive_rates(LatticeParams(L=10, gamma_l=1.0, gamma_r=0.5, kappa_r=1.0, nbar_r=10.0))
    assert r.gamma_a_crit == pytest.approx(2.0 / 12.0, rel=1e-12)


def test_density_example_against_root_finder():
    p = LatticeParams(L=10, gamma_l=1.0, gamma_r=0.0, kappa_r=1.0, nbar_r=30.0)
    r = derive_rates(p)
    oracle = brentq(lambda n: n * n + 2 * n - 30.0, 0.0, 30.0, xtol=1e-15)
    assert r.n_inf == pytest.approx(oracle, rel=1e-13)
    assert r.n_inf == pytest.approx(math.sqrt(31) - 1, rel=1e-13)
    assert r.current_j == pytest.approx(30.0 - oracle, rel=1e-13)
    assert r.current_j == pytest.approx(oracle * (1 + oracle), rel=1e-12)
    assert r.phase is Phase.ZIGZAG


def test_symmetric_is_diffusive():
    r = derive_rates(LatticeParams(L=10, gamma_l=1.0, gamma_r=1.0, nbar_r=5.0))
    assert r.phase is Phase.DIFFUSIVE
    assert r.xi == math.inf


def test_critical_label():
    # c = gamma_s when gamma_a = gamma_a_crit
    base = LatticeParams(L=10, gamma_l=1.0, kappa_r=1.0, nbar_r=10.0)
    ga = derive_rates(base).gamma_a_crit
    r = derive_rates(base.replace(gamma_r=1.0 - ga))
    assert abs(r.speed_c - r.gamma_s) < CRITICAL_WINDOW * r.gamma_s
    assert r.phase is Phase.CRITICAL and r.xi == 0.0


@given(asymmetric_params())
@settings(max_examples=200, deadline=None)
def test_current_consistency(p):
    r = derive_rates(p)
    assert r.gamma_s >= r.gamma_a / 2 >= 0
    assert r.current_j == pytest.approx(r.gamma_a * r.n_inf * (1 + r.n_inf), rel=1e-12, abs=1e-300)
    if r.phase is Phase.SMOOTH:
        assert r.speed_c < r.gamma_s
    if r.phase is Phase.ZIGZAG:
        assert r.speed_c > r.gamma_s


@given(asymmetric_params())
@settings(max_examples=100, deadline=None)
def test_transition_at_critical_asymmetry(p):
    r = derive_rates(p)
    if abs(r.gamma_a - r.gamma_a_crit) > 1e-6 * p.gamma_l:
        assert (r.gamma_a > r.gamma_a_crit) == (r.speed_c > r.gamma_s)


def test_xi_monotone_grid():
    nbars = [1.0, 3.0, 10.0, 30.0]
    for nb in nbars:
        base = LatticeParams(L=10, gamma_l=1.0, kappa_r=1.0, nbar_r=nb)
        crit = derive_rates(base).gamma_a_crit
        gas = np.linspace(0.01, crit * (1 - 1e-6), 40)
        xis = [derive_rates(base.replace(gamma_r=1.0 - g)).xi for g in gas]
        assert np.all(np.diff(xis) < 0)
    ga = 0.02
    xis = [derive_rates(LatticeParams(L=10, gamma_l=1.0, gamma_r=1 - ga, nbar_r=nb)).xi for nb in nbars]
    assert np.all(np.diff(xis) < 0)


def test_large_nbar_asymptote():
    p = LatticeParams(L=10, gamma_l=1.0, gamma_r=0.5, kappa_r=1.0, nbar_r=1e6)
    n = derive_rates(p).n_inf
    assert abs(n / math.sqrt(1e6 * 1.0 / 0.5) - 1) < 0.01


def test_asymptotic_density_small_gamma_a_is_stable():
    # the naive quadratic formula loses all digits here
    n = asymptotic_density(1e-14, 1.0, 5.0)
    assert n == pytest.approx(5.0, rel=1e-10)


def test_bath_ratio():
    assert asymmetry_from_bath(0.0, 3.0) == 1.0
    assert asymmetry_from_bath(2.0, 2.0) == pytest.approx(math.e, rel=1e-15)
    assert asymmetry_from_bath(4.0, 2.0) == pytest.approx(math.e**2, rel=1e-15)
    with pytest.raises(ValueError):
        asymmetry_from_bath(1.0, 0.0)


def test_density_profile_invariants():
    with pytest.raises(ValueError):
        DensityProfile(np.array([1.0, -0.1]), 0.0, Provenance.ANALYTIC)
    prof = DensityProfile([1.0, 2.0], 0.0, "meanfield")
    assert prof.provenance is Provenance.MEANFIELD and prof.L == 2
    with pytest.raises(ValueError):
        prof.occupations[0] = 3.0


def test_reynolds_from_rates():
    r = derive_rates(LatticeParams(L=10, gamma_l=1.0, gamma_r=0.0, nbar_r=1.0))
    assert r.reynolds(1.0) == pytest.approx(2.0)
