"""Truncated-Wigner sampling of the bosonic chain.

Each trajectory carries complex amplitudes ``alpha_p`` that follow Ito
equations built bond by bond: bond ``(p, p+1)`` with complex Wiener increment
``dV`` adds

* ``(gamma_a/2) alpha_p |alpha_{p+1}|^2 dt - (gamma_s/2) alpha_p dt + sqrt(gamma_s) alpha_{p+1} dV`` to site p,
* ``-(gamma_a/2) alpha_{p+1} |alpha_p|^2 dt - (gamma_s/2) alpha_{p+1} dt - sqrt(gamma_s) alpha_p dV*`` to site p+1,

and the reservoirs add ``-(kappa/2) alpha dt`` plus additive noise of
strength ``kappa (2 nbar + 1)/2 -+ gamma_a/4`` (minus on the left, plus on the
right).  Increments are ``(g1 + i g2) sqrt(dt/2)`` with standard normals
``g1, g2``, integrated with Euler-Maruyama in a compiled kernel.  Symmetric
moments are converted with ``n = <|alpha|^2> - 1/2``.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .analytic import steady_current
from .model import DensityProfile, LatticeParams, Provenance

log = logging.getLogger(__name__)

BLOCK_SIZE = 500
HIST_BINS_2D = 101
HIST_BINS_1D = 100


def boundary_diffusion(params: LatticeParams) -> tuple[float, float]:
    """Additive noise strengths of the left and right boundary sites."""
    left = 0.5 * params.kappa_l * (2.0 * params.nbar_l + 1.0) - 0.25 * params.gamma_a
    right = 0.5 * params.kappa_r * (2.0 * params.nbar_r + 1.0) + 0.25 * params.gamma_a
    return left, right


def check_params(params: LatticeParams):
    left, _ = boundary_diffusion(params)
    if left < 0:
        raise ValueError(
            f"left boundary diffusion {left:.4g} is negative: kappa_l (2 nbar_l + 1)/2 must exceed gamma_a/4"
        )


@dataclass(frozen=True)
class SdeConfig:
    """Integration and ensemble settings.

    ``initial`` is ``"vacuum"`` or ``"coherent"``; coherent starts add
    ``amplitude * exp(i phi_p)`` to the vacuum noise, with ``phi_p`` drawn once
    per site and shared by all trajectories (``phase_policy="random"``) or
    zero (``"fixed"``).  ``t_ref`` defaults to ``10 / gamma_l``.
    """

    dt: float = 1e-3
    n_traj: int = 1000
    seed: int = 0
    t_end: float = 20.0
    initial: str = "vacuum"
    amplitude: float = math.sqrt(3.0)
    phase_policy: str = "random"
    t_ref: float | None = None
    record_every: int = 100
    threads: int | None = None
    block_size: int = BLOCK_SIZE
    n_batches: int = 20

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_traj < 2:
            raise ValueError("n_traj must be >= 2")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.initial not in ("vacuum", "coherent"):
            raise ValueError(f"unknown initial state {self.initial!r}")
        if self.phase_policy not in ("random", "fixed"):
            raise ValueError(f"unknown phase policy {self.phase_policy!r}")
        if self.record_every < 1 or self.block_size < 1:
            raise ValueError("record_every and block_size must be >= 1")


def _wiener(rng, shape, dt):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * math.sqrt(0.5 * dt)


@njit(cache=True, nogil=True)
def _apply_step(a, dv, dvl, dvr, dt, ga, gs, kl, kr, sdl, sdr, use_drift):
    """In-place update of one trajectory ``a`` given its Wiener increments."""
    L = a.size
    first, last = a[0], a[L - 1]
    sg = math.sqrt(gs)
    lo = a[0]
    for p in range(L - 1):
        # a[p + 1] is still at its old value; lo carries the old a[p]
        hi = a[p + 1]
        if use_drift:
            a[p] += (0.5 * ga * (hi.real**2 + hi.imag**2) - 0.5 * gs) * lo * dt
            a[p + 1] -= (0.5 * ga * (lo.real**2 + lo.imag**2) + 0.5 * gs) * hi * dt
        a[p] += sg * hi * dv[p]
        a[p + 1] -= sg * lo * np.conj(dv[p])
        lo = hi
    if use_drift:
        a[0] -= 0.5 * kl * first * dt
        a[L - 1] -= 0.5 * kr * last * dt
    a[0] += sdl * dvl
    a[L - 1] += sdr * dvr


def sde_step(alpha, params: LatticeParams, rng: np.random.Generator, dt: float,
             drift: bool = True, noise: bool = True) -> np.ndarray:
    """One Euler-Maruyama step for amplitudes of shape (..., L)."""
    alpha = np.asarray(alpha, dtype=complex)
    dl, dr = boundary_diffusion(params)
    if dl < 0:
        raise ValueError("negative left boundary diffusion")
    out = alpha.reshape(-1, alpha.shape[-1]).copy()
    B, L = out.shape
    if noise:
        dv = _wiener(rng, (B, L - 1), dt)
        dvl, dvr = _wiener(rng, B, dt), _wiener(rng, B, dt)
    else:
        dv, dvl, dvr = np.zeros((B, L - 1), complex), np.zeros(B, complex), np.zeros(B, complex)
    for b in range(B):
        _apply_step(out[b], dv[b], dvl[b], dvr[b], dt, params.gamma_a, params.gamma_s,
                    params.kappa_l, params.kappa_r, math.sqrt(dl), math.sqrt(dr), drift)
    return out.reshape(alpha.shape)


@njit(cache=True, nogil=True)
def _complex_increment(dt):
    # Box-Muller: r e^{i theta} sqrt(dt/2) with r = sqrt(-2 log u) has unit complex variance per dt
    r = math.sqrt(-dt * math.log(1.0 - np.random.random()))
    theta = 2.0 * math.pi * np.random.random()
    return complex(r * math.cos(theta), r * math.sin(theta))


@njit(cache=True, nogil=True)
def _integrate(alpha, seed, n_steps, dt, ga, gs, kl, kr, sdl, sdr, record_every, ref_step, n_rec, n_tau):
    np.random.seed(seed)
    B, L = alpha.shape
    sum_a = np.zeros((n_rec, L), np.complex128)
    sum_m = np.zeros((n_rec, L))
    sum_a1sq = np.zeros(n_rec)
    g1 = np.zeros((n_tau, L), np.complex128)
    ref_mod2 = np.zeros(L)
    ref = np.zeros(L, np.complex128)
    dv = np.empty(L - 1, np.complex128)
    finite = True
    for b in range(B):
        a = alpha[b].copy()
        for step in range(n_steps + 1):
            if step > 0:
                for p in range(L - 1):
                    dv[p] = _complex_increment(dt)
                dvl = _complex_increment(dt)
                dvr = _complex_increment(dt)
                _apply_step(a, dv, dvl, dvr, dt, ga, gs, kl, kr, sdl, sdr, True)
            if step % record_every == 0:
                k = step // record_every
                for p in range(L):
                    m2 = a[p].real**2 + a[p].imag**2
                    if not math.isfinite(m2):
                        finite = False
                    sum_a[k, p] += a[p]
                    sum_m[k, p] += m2
                sum_a1sq[k] += a[0].real**2 + a[0].imag**2
                if ref_step >= 0 and step >= ref_step:
                    if step == ref_step:
                        for p in range(L):
                            ref[p] = a[p]
                            ref_mod2[p] += a[p].real**2 + a[p].imag**2
                    j = (step - ref_step) // record_every
                    for p in range(L):
                        g1[j, p] += np.conj(a[p]) * ref[p]
        if not finite:
            break
        alpha[b] = a
    return sum_a, sum_m, sum_a1sq, g1, ref_mod2, finite


@dataclass
class CorrelationEstimates:
    """Moment estimators of a finished ensemble.

    ``g2`` is ``nan`` where the normal-ordered occupation is not resolved
    above twice its standard error.  ``g1`` has shape (len(tau), L) and is
    exactly 1 at ``tau = 0``.
    """

    g2: np.ndarray
    g2_stderr: np.ndarray
    tau: np.ndarray
    g1: np.ndarray = field(repr=False)
    mean_amp_times: np.ndarray = field(repr=False)
    mean_amp: np.ndarray = field(repr=False)
    mean_amp_stderr: np.ndarray = field(repr=False)
    hist_edges: np.ndarray = field(repr=False)
    hist_complex: np.ndarray = field(repr=False)
    hist_mod2_edges: np.ndarray = field(repr=False)
    hist_mod2: np.ndarray = field(repr=False)


@dataclass
class TwaEnsemble:
    """Final amplitudes and recorded ensemble sums of a truncated-Wigner run.

    ``record_times`` index the rows of ``mean_alpha`` and ``mean_mod2``
    (ensemble means of ``alpha`` and ``|alpha|^2``).
    """

    params: LatticeParams
    config: SdeConfig
    final: np.ndarray = field(repr=False)
    record_times: np.ndarray = field(repr=False)
    mean_alpha: np.ndarray = field(repr=False)
    mean_mod2: np.ndarray = field(repr=False)
    mean_alpha1_sq: np.ndarray = field(repr=False)
    tau: np.ndarray = field(repr=False)
    g1_raw: np.ndarray = field(repr=False)
    ref_mod2: np.ndarray = field(repr=False)
    # per-block sums of alpha_1 over the record times, with the block sizes
    block_alpha1: np.ndarray | None = field(default=None, repr=False)
    block_sizes: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_traj(self) -> int:
        return self.final.shape[0]

    def _batched(self, values):
        mean = values.mean(axis=0)
        nb = min(self.config.n_batches, values.shape[0])
        batches = np.array([b.mean(axis=0) for b in np.array_split(values, nb)])
        return mean, batches.std(axis=0, ddof=1) / math.sqrt(nb)

    def density(self):
        """Normal-ordered occupations at ``t_end`` with batch standard errors."""
        m, se = self._batched(np.abs(self.final) ** 2)
        return m - 0.5, se

    def profile(self) -> DensityProfile:
        m, se = self.density()
        return DensityProfile(np.clip(m, 0.0, None), math.nan, Provenance.TWA, se)

    def density_series(self) -> np.ndarray:
        return self.mean_mod2 - 0.5

    def g2(self):
        mod2 = np.abs(self.final) ** 2

        def est(x):
            m = x.mean(axis=0)
            with np.errstate(divide="ignore", invalid="ignore"):
                return ((x**2).mean(axis=0) - 2.0 * m + 0.5) / (m - 0.5) ** 2

        value = est(mod2)
        chunks = np.array_split(mod2, min(self.config.n_batches, mod2.shape[0]))
        nb = len(chunks)
        loo = np.array([est(np.concatenate(chunks[:k] + chunks[k + 1 :])) for k in range(nb)])
        se = np.sqrt((nb - 1) / nb * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
        n, n_se = self.density()
        value = np.where(n > 2.0 * n_se, value, np.nan)
        return value, se

    def g1(self) -> np.ndarray:
        if self.tau.size == 0:
            return np.zeros((0, self.final.shape[1]), complex)
        return self.g1_raw / self.ref_mod2

    def mean_amp(self):
        """``|<alpha_1>|(t)`` with its standard error ``sqrt(var(alpha_1)/N)``."""
        amp = np.abs(self.mean_alpha[:, 0])
        var = np.maximum(self.mean_alpha1_sq - amp**2, 0.0)
        return self.record_times, amp, np.sqrt(var / self.n_traj)

    def histograms(self):
        mod2 = np.abs(self.final) ** 2
        n_max = max(float(np.max(mod2.mean(axis=0) - 0.5)), 0.5)
        half = 1.5 * math.sqrt(n_max)
        edges = np.linspace(-half, half, HIST_BINS_2D + 1)
        L = self.final.shape[1]
        hc = np.empty((L, HIST_BINS_2D, HIST_BINS_2D), dtype=np.int64)
        hm = np.empty((L, HIST_BINS_1D), dtype=np.int64)
        m_edges = np.empty((L, HIST_BINS_1D + 1))
        for p in range(L):
            hc[p] = np.histogram2d(self.final[:, p].real, self.final[:, p].imag, bins=(edges, edges))[0]
            counts, m_edges[p] = np.histogram(mod2[:, p], bins=HIST_BINS_1D)
            hm[p] = counts
        return edges, hc, m_edges, hm

    def estimates(self) -> CorrelationEstimates:
        g2, g2_se = self.g2()
        t, amp, amp_se = self.mean_amp()
        edges, hc, m_edges, hm = self.histograms()
        return CorrelationEstimates(g2, g2_se, self.tau, self.g1(), t, amp, amp_se, edges, hc, m_edges, hm)


def _initial(rng, size, L, config, phases):
    alpha = _wiener(rng, (size, L), 0.5)  # vacuum: <|alpha|^2> = 1/2
    if config.initial == "coherent":
        alpha = alpha + config.amplitude * np.exp(1j * phases)
    return alpha


def _run_block(params, config, size, rng, phases, n_steps, ref_step):
    alpha = _initial(rng, size, params.L, config, phases)
    n_rec = n_steps // config.record_every + 1
    n_tau = 0 if ref_step is None else (n_steps - ref_step) // config.record_every + 1
    dl, dr = boundary_diffusion(params)
    seed = int(rng.integers(0, 2**32))
    sum_a, sum_m, sum_a1sq, g1, ref_mod2, finite = _integrate(
        alpha, seed, n_steps, config.dt, params.gamma_a, params.gamma_s, params.kappa_l, params.kappa_r,
        math.sqrt(dl), math.sqrt(dr), config.record_every, -1 if ref_step is None else ref_step, n_rec, n_tau)
    if not finite:
        raise FloatingPointError("amplitudes diverged; reduce dt")
    return alpha, sum_a, sum_m, sum_a1sq, g1, ref_mod2


def run_twa(params: LatticeParams, config: SdeConfig | None = None) -> TwaEnsemble:
    """Integrate ``config.n_traj`` trajectories to ``config.t_end``.

    Ensemble sums are recorded every ``record_every`` steps.  Two-time
    correlators use the amplitudes at the first record at or after ``t_ref``.
    Blocks of ``block_size`` trajectories draw from independent children of
    ``SeedSequence(seed)``; child 0 sets the shared coherent phases.
    """
    config = config or SdeConfig()
    check_params(params)
    n_steps = int(round(config.t_end / config.dt))
    stride = config.record_every * config.dt
    t_ref = 10.0 / params.gamma_l if config.t_ref is None and params.gamma_l > 0 else config.t_ref
    ref_step = None
    if t_ref is not None and t_ref <= config.t_end:
        ref_step = int(math.ceil(round(t_ref / stride, 9))) * config.record_every
        if ref_step > n_steps:
            ref_step = None
    threads = config.threads
    if threads is None:
        threads = int(os.environ.get("ASIP_THREADS", "1") or 1)
    n_blocks = -(-config.n_traj // config.block_size)
    children = np.random.SeedSequence(int(config.seed)).spawn(n_blocks + 1)
    phase_rng = np.random.Generator(np.random.PCG64(children[0]))
    phases = phase_rng.uniform(0, 2 * np.pi, params.L) if config.phase_policy == "random" else np.zeros(params.L)

    def work(b):
        size = min(config.block_size, config.n_traj - b * config.block_size)
        rng = np.random.Generator(np.random.PCG64(children[b + 1]))
        return _run_block(params, config, size, rng, phases, n_steps, ref_step)

    if threads <= 1:
        parts = [work(b) for b in range(n_blocks)]
    else:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, range(n_blocks)))
    N = config.n_traj
    final = np.concatenate([p[0] for p in parts])
    mean_alpha = sum(p[1] for p in parts) / N
    mean_mod2 = sum(p[2] for p in parts) / N
    mean_a1sq = sum(p[3] for p in parts) / N
    g1_raw = sum(p[4] for p in parts) / N
    ref_mod2 = sum(p[5] for p in parts) / N
    times = np.arange(mean_alpha.shape[0]) * stride
    tau = np.arange(g1_raw.shape[0]) * stride
    block_alpha1 = np.array([p[1][:, 0] for p in parts])
    block_sizes = np.array([p[0].shape[0] for p in parts])
    return TwaEnsemble(params, config, final, times, mean_alpha, mean_mod2, mean_a1sq, tau, g1_raw, ref_mod2,
                       block_alpha1, block_sizes)


def reduced_site_drift(alpha1, current: float, kappa_l: float):
    """Saturable-gain drift of the first site when the second follows adiabatically."""
    alpha1 = np.asarray(alpha1, complex)
    return 0.5 * alpha1 * (current / (np.abs(alpha1) ** 2 + 0.5) - kappa_l)


@dataclass(frozen=True)
class PhaseDiffusionFit:
    tau_coh: float
    tau_pred: float
    amplitude: float
    t_start: float
    t_stop: float
    amplified: bool
    current: float
    times: np.ndarray = field(repr=False)
    mean_amp: np.ndarray = field(repr=False)
    tau_stderr: float = math.nan

    @property
    def relative_error(self) -> float:
        return abs(self.tau_coh - self.tau_pred) / self.tau_pred


def fit_decay(times, amp, stderr, floor_factor: float = 5.0):
    """Fit ``A exp(-t/tau)`` from the maximum of ``amp`` until it falls below
    ``floor_factor`` standard errors.  Returns ``(tau, A, t_start, t_stop, amplified)``."""
    times, amp, stderr = map(np.asarray, (times, amp, stderr))
    k0 = int(np.argmax(amp))
    amplified = amp[k0] > amp[0] * (1 + 1e-9) and k0 > 0
    above = amp[k0:] > floor_factor * stderr[k0:]
    stop = k0 + (int(np.argmin(above)) if not above.all() else above.size)
    if stop - k0 < 3:
        return math.nan, math.nan, float(times[k0]), float(times[min(stop, times.size - 1)]), amplified
    slope, intercept = np.polyfit(times[k0:stop], np.log(amp[k0:stop]), 1)
    tau = -1.0 / slope if slope < 0 else math.inf
    return tau, math.exp(intercept), float(times[k0]), float(times[stop - 1]), amplified


def phase_diffusion_experiment(params: LatticeParams, config: SdeConfig | None = None,
                               floor_factor: float = 5.0) -> PhaseDiffusionFit:
    """Decay time of ``|<alpha_1>|`` after amplification of a coherent start.

    The prediction ``4 J / kappa_l^2`` uses the stationary mean-field current.
    ``amplified`` is False when ``|<alpha_1>|`` never grows above its initial value.
    ``tau_stderr`` is a leave-one-block-out jackknife over trajectory blocks
    (same fit window), ``nan`` with fewer than four blocks.
    """
    config = config or SdeConfig(initial="coherent", t_end=200.0)
    if config.initial != "coherent":
        raise ValueError("phase diffusion needs a coherent initial state")
    ens = run_twa(params, config)
    times, amp, se = ens.mean_amp()
    tau, a0, t0, t1, amplified = fit_decay(times, amp, se, floor_factor)
    if not amplified:
        log.warning("no amplification of the first-site amplitude detected")
    current = steady_current(params) if params.gamma_a > 0 else 0.0
    pred = 4.0 * current / params.kappa_l**2
    return PhaseDiffusionFit(tau, pred, a0, t0, t1, amplified, current, times, amp,
                             _jackknife_tau(ens, times, t0, t1))


def _jackknife_tau(ens: TwaEnsemble, times, t0, t1) -> float:
    sums, sizes = ens.block_alpha1, ens.block_sizes
    nb = 0 if sums is None else sums.shape[0]
    window = (times >= t0) & (times <= t1)
    if nb < 4 or window.sum() < 3:
        return math.nan
    total, n = sums.sum(axis=0), sizes.sum()
    taus = []
    for k in range(nb):
        amp = np.abs((total - sums[k]) / (n - sizes[k]))[window]
        slope = np.polyfit(times[window], np.log(amp), 1)[0]
        taus.append(-1.0 / slope if slope < 0 else math.inf)
    taus = np.array(taus)
    if not np.all(np.isfinite(taus)):
        return math.inf
    return float(math.sqrt((nb - 1) / nb * np.sum((taus - taus.mean()) ** 2)))
