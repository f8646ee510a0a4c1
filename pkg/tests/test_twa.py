import math

import numpy as np
import pytest

from asip.model import LatticeParams
from asip.twa import (HIST_BINS_1D, HIST_BINS_2D, SdeConfig, boundary_diffusion, check_params,
                      phase_diffusion_experiment, reduced_site_drift, run_twa, sde_step)


def test_no_dynamics_leaves_state():
    p = LatticeParams(L=4, gamma_l=0.0, gamma_r=0.0, kappa_l=0.0, kappa_r=0.0)
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 4)) + 1j * rng.normal(size=(3, 4))
    np.testing.assert_array_equal(sde_step(a, p, rng, 0.1), a)


def test_two_site_drift_pair():
    gl, dt = 1.3, 1e-4
    kl, kr = 1.0, 0.6
    p = LatticeParams(L=2, gamma_l=gl, gamma_r=0.0, kappa_l=kl, kappa_r=kr)
    a = np.array([0.7 + 0.2j, -1.1 + 0.5j])
    new = sde_step(a, p, np.random.default_rng(0), dt, noise=False)
    m1, m2 = abs(a[0]) ** 2, abs(a[1]) ** 2
    hop = np.array([0.5 * gl * a[0] * (m2 - 0.5), -0.5 * gl * a[1] * (m1 + 0.5)])
    expected = a + dt * (hop - 0.5 * np.array([kl, kr]) * a)
    np.testing.assert_allclose(new, expected, rtol=1e-14)


def test_noise_variance_at_frozen_amplitudes():
    p = LatticeParams(L=4, gamma_l=1.0, gamma_r=0.4, kappa_l=0.8, kappa_r=1.2, nbar_l=0.3, nbar_r=2.0)
    a0 = np.array([1.0 + 0.5j, -0.3 + 1.2j, 2.0 - 0.1j, 0.4 + 0.4j])
    B, dt = 40000, 0.01
    out = sde_step(np.tile(a0, (B, 1)), p, np.random.default_rng(1), dt, drift=False)
    inc = out - a0
    dl, dr = boundary_diffusion(p)
    gs = p.gamma_s
    m = np.abs(a0) ** 2
    total = gs * (np.r_[m[1:], 0.0] + np.r_[0.0, m[:-1]])
    total[0] += dl
    total[-1] += dr
    var_re = inc.real.var(axis=0)
    np.testing.assert_allclose(var_re, 0.5 * dt * total, rtol=0.05)
    np.testing.assert_allclose(inc.mean(axis=0), 0.0, atol=5 * math.sqrt(dt * total.max() / B))
    # adjacent sites share the bond increment with opposite sign and a conjugate
    cov01 = np.mean(inc[:, 0] * inc[:, 1])
    expected = -gs * a0[1] * a0[0] * dt
    assert abs(cov01 - expected) < 0.05 * abs(expected) + 5 * dt * math.sqrt(gs**2 * m[0] * m[1] / B)


def test_boundary_diffusion_and_check():
    p = LatticeParams(L=3, gamma_l=1.0, gamma_r=0.0, kappa_l=1.0, kappa_r=1.0, nbar_r=10.0)
    assert boundary_diffusion(p) == (0.5 - 0.25, 0.5 * 21 + 0.25)
    with pytest.raises(ValueError):
        check_params(p.replace(kappa_l=0.1))
    with pytest.raises(ValueError):
        run_twa(p.replace(kappa_l=0.1), SdeConfig(n_traj=2, t_end=0.01))


def test_config_validation():
    for bad in (dict(dt=0.0), dict(n_traj=1), dict(initial="squeezed"), dict(phase_policy="none"),
                dict(record_every=0), dict(t_end=-1.0)):
        with pytest.raises(ValueError):
            SdeConfig(**bad)


def test_detached_sites_are_thermal():
    p = LatticeParams(L=2, gamma_l=0.0, gamma_r=0.0, kappa_l=1.0, kappa_r=2.0, nbar_l=0.5, nbar_r=3.0)
    ens = run_twa(p, SdeConfig(n_traj=6000, t_end=12.0, dt=5e-3, seed=2, record_every=200))
    n, se = ens.density()
    assert np.all(np.abs(n - [0.5, 3.0]) < 4 * se)
    g2, g2se = ens.g2()
    assert np.all(np.abs(g2 - 2.0) < 4 * g2se)


def test_vacuum_symmetry_and_floor():
    p = LatticeParams(L=5, gamma_l=1.0, gamma_r=0.3, nbar_r=2.0)
    N = 2000
    ens = run_twa(p, SdeConfig(n_traj=N, t_end=8.0, dt=2e-3, seed=4, record_every=250))
    z = np.abs(ens.mean_alpha) / np.sqrt(ens.mean_mod2 / N)
    assert z.max() < 5.0
    assert np.all(ens.mean_mod2 >= 0.5 - 4 * np.sqrt(ens.mean_mod2 / N))
    g1 = ens.g1()


def test_g1_normalisation_and_bound():
    p = LatticeParams(L=4, gamma_l=1.0, gamma_r=0.0, nbar_r=5.0)
    cfg = SdeConfig(n_traj=1000, t_end=6.0, dt=2e-3, seed=7, record_every=100, t_ref=3.0)
    ens = run_twa(p, cfg)
    g1 = ens.g1()
    assert g1.shape == (ens.tau.size, 4)
    np.testing.assert_allclose(g1[0], 1.0, rtol=1e-12)
    assert np.all(np.abs(g1) <= 1.0 + 0.1)
    assert ens.tau[0] == 0.0 and ens.tau[-1] == pytest.approx(3.0)


def test_g2_undefined_at_vacuum():
    p = LatticeParams(L=3, gamma_l=1.0, gamma_r=0.5)
    ens = run_twa(p, SdeConfig(n_traj=200, t_end=1.0, dt=1e-2, seed=0, record_every=10))
    g2, _ = ens.g2()
    assert np.all(np.isnan(g2))


def test_determinism_and_threads():
    p = LatticeParams(L=4, gamma_l=1.0, gamma_r=0.2, nbar_r=3.0)
    cfg = SdeConfig(n_traj=300, t_end=1.0, dt=1e-2, seed=5, block_size=100, record_every=10)
    a = run_twa(p, cfg)
    b = run_twa(p, SdeConfig(**{**cfg.__dict__, "threads": 3}))
    c = run_twa(p, SdeConfig(**{**cfg.__dict__, "seed": 6}))
    np.testing.assert_array_equal(a.final, b.final)
    np.testing.assert_array_equal(a.mean_mod2, b.mean_mod2)
    assert not np.array_equal(a.final, c.final)


def test_coherent_start_shared_phases():
    p = LatticeParams(L=3, gamma_l=1.0, gamma_r=0.0, nbar_r=1.0)
    cfg = SdeConfig(n_traj=4000, t_end=0.01, dt=1e-2, seed=3, initial="coherent", record_every=1)
    ens = run_twa(p, cfg)
    amp = np.abs(ens.mean_alpha[0])
    np.testing.assert_allclose(amp, math.sqrt(3.0), atol=5 * math.sqrt(0.5 / 4000))
    fixed = run_twa(p, SdeConfig(**{**cfg.__dict__, "phase_policy": "fixed"}))
    np.testing.assert_allclose(fixed.mean_alpha[0].real, math.sqrt(3.0), atol=5 * math.sqrt(0.5 / 4000))


def test_step_size_convergence():
    p = LatticeParams(L=4, gamma_l=1.0, gamma_r=0.5, nbar_r=3.0)
    res = []
    for dt in (4e-3, 2e-3):
        ens = run_twa(p, SdeConfig(n_traj=3000, t_end=10.0, dt=dt, seed=8, record_every=int(0.5 / dt)))
        res.append(ens.density())
    (n1, s1), (n2, s2) = res
    assert np.all(np.abs(n1 - n2) < 4 * np.hypot(s1, s2))


def test_histograms():
    p = LatticeParams(L=3, gamma_l=1.0, gamma_r=0.0, nbar_r=4.0)
    ens = run_twa(p, SdeConfig(n_traj=500, t_end=2.0, dt=1e-2, seed=1, record_every=10))
    est = ens.estimates()
    assert est.hist_complex.shape == (3, HIST_BINS_2D, HIST_BINS_2D)
    assert est.hist_mod2.shape == (3, HIST_BINS_1D)
    assert np.all(est.hist_mod2.sum(axis=1) == 500)
    n_max = max(ens.density()[0].max(), 0.5)
    assert est.hist_edges[-1] == pytest.approx(1.5 * math.sqrt(n_max))


def test_reduced_site_drift_saturates():
    j, kl = 12.0, 1.0
    fixed = math.sqrt(j / kl - 0.5)
    assert abs(reduced_site_drift(fixed, j, kl)) < 1e-12
    assert reduced_site_drift(0.5 * fixed, j, kl).real > 0
    assert reduced_site_drift(2.0 * fixed, j, kl).real < 0


def test_no_current_no_amplification():
    # symmetric hopping carries no stationary current and no gain
    p = LatticeParams(L=10, gamma_l=1.0, gamma_r=1.0, kappa_l=1.0, kappa_r=1.0, nbar_r=0.0)
    fit = phase_diffusion_experiment(p, SdeConfig(n_traj=200, t_end=4.0, dt=1e-2, initial="coherent",
                                                  seed=0, record_every=10))
    assert not fit.amplified
    assert fit.current == 0.0
    assert fit.mean_amp[-1] < fit.mean_amp[0]
    with pytest.raises(ValueError):
        phase_diffusion_experiment(p, SdeConfig(n_traj=2, t_end=0.1))


@pytest.mark.slow
def test_first_site_follows_reduced_model():
    # the saturated first-site occupation sits at the reduced-model fixed point J/kappa_l
    p = LatticeParams(L=10, gamma_l=1.0, gamma_r=0.0, kappa_l=1.0, kappa_r=1.0, nbar_r=20.0)
    ens = run_twa(p, SdeConfig(n_traj=500, t_end=20.0, dt=2e-3, seed=1, record_every=500))
    from asip.analytic import steady_current
    n, se = ens.density()
    assert n[0] == pytest.approx(steady_current(p) / p.kappa_l, rel=0.1)


@pytest.mark.slow
def test_coherence_time_ordering():
    p = LatticeParams(L=10, gamma_l=1.0, gamma_r=0.0, kappa_l=1.0, kappa_r=1.0, nbar_r=30.0)
    ens = run_twa(p, SdeConfig(n_traj=600, t_end=30.0, dt=1e-3, seed=2, record_every=500))
    g1 = np.abs(ens.g1())
    tau = ens.tau
    k = int(np.searchsorted(tau, 10.0))
    # odd boundary site keeps phase memory beyond 10/gamma_l, the even neighbour loses it almost at once
    assert g1[k, 0] > 0.5
    assert g1[1, 1] < 0.3


def test_vacuum_is_stationary_without_injection():
    p = LatticeParams(L=3, gamma_l=1.0, gamma_r=0.5)
    ens = run_twa(p, SdeConfig(n_traj=4000, t_end=3.0, dt=1e-3, seed=1, record_every=500))
    n0 = ens.mean_mod2[0] - 0.5
    assert np.all(np.abs(n0) < 4 * math.sqrt(0.25 / 4000) * 2)
    n, se = ens.density()
    assert np.all(np.abs(n) < 4 * se)


def test_phase_diffusion_jackknife_error():
    p = LatticeParams(L=4, gamma_l=1.0, gamma_r=0.0, kappa_l=1.0, kappa_r=1.0, nbar_r=4.0)
    cfg = SdeConfig(n_traj=400, t_end=12.0, dt=5e-3, initial="coherent", seed=2, record_every=40,
                    block_size=50)
    fit = phase_diffusion_experiment(p, cfg)
    assert fit.amplified and math.isfinite(fit.tau_coh)
    assert 0 < fit.tau_stderr < fit.tau_coh
    few = phase_diffusion_experiment(p, SdeConfig(**{**cfg.__dict__, "block_size": 200}))
    assert math.isnan(few.tau_stderr)
