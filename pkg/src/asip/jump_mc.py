"""Stochastic sampling of the classical occupation-number master equation.

Events on a configuration ``n`` (integers, sites 1..L):

* hop ``p+1 -> p`` at rate ``gamma_l n_{p+1} (1 + n_p)``
* hop ``p -> p+1`` at rate ``gamma_r n_p (1 + n_{p+1})``
* injection at site 1 / L at rate ``kappa nbar (1 + n)``
* removal at site 1 / L at rate ``kappa (nbar + 1) n``

The default sampler is the direct Gillespie method, vectorised over a block
of trajectories.  A fixed-step sampler (at most one event per step, chosen
with probability ``rate * dt``) is kept for cross-checks.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import DensityProfile, LatticeParams, Provenance

DEFAULT_CAP = 10**6
BLOCK_SIZE = 1024


class OccupationCapError(RuntimeError):
    pass


@dataclass
class Configuration:
    n: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.n)
        if n.ndim != 1 or not np.issubdtype(n.dtype, np.integer) or np.any(n < 0):
            raise ValueError("configuration must be a 1D vector of non-negative integers")
        self.n = n.astype(np.int64)


@dataclass(frozen=True)
class EventRates:
    """Rates of all events of one configuration."""

    hop_left: np.ndarray
    hop_right: np.ndarray
    inject: tuple
    remove: tuple

    @property
    def total(self) -> float:
        return float(self.hop_left.sum() + self.hop_right.sum() + sum(self.inject) + sum(self.remove))


def _rate_table(n, params: LatticeParams) -> np.ndarray:
    """Rates for a batch ``n`` of shape (B, L), one column per event.

    Columns: L-1 left hops, L-1 right hops, inject left, inject right,
    remove left, remove right.
    """
    n = n.astype(float)
    L = n.shape[1]
    out = np.empty((n.shape[0], 2 * L + 2))
    out[:, : L - 1] = params.gamma_l * n[:, 1:] * (1.0 + n[:, :-1])
    out[:, L - 1 : 2 * L - 2] = params.gamma_r * n[:, :-1] * (1.0 + n[:, 1:])
    out[:, 2 * L - 2] = params.kappa_l * params.nbar_l * (1.0 + n[:, 0])
    out[:, 2 * L - 1] = params.kappa_r * params.nbar_r * (1.0 + n[:, -1])
    out[:, 2 * L] = params.kappa_l * (params.nbar_l + 1.0) * n[:, 0]
    out[:, 2 * L + 1] = params.kappa_r * (params.nbar_r + 1.0) * n[:, -1]
    return out


def _event_deltas(L: int) -> np.ndarray:
    """Occupation change for every event column of :func:`_rate_table`."""
    d = np.zeros((2 * L + 2, L), dtype=np.int64)
    for p in range(L - 1):
        d[p, p] += 1
        d[p, p + 1] -= 1
        d[L - 1 + p, p] -= 1
        d[L - 1 + p, p + 1] += 1
    d[2 * L - 2, 0] = 1
    d[2 * L - 1, -1] = 1
    d[2 * L, 0] = -1
    d[2 * L + 1, -1] = -1
    return d


def _flux_weights(L: int) -> np.ndarray:
    """Net leftward transfer across each of the L+1 bonds (reservoir bonds included) per event."""
    w = np.zeros((2 * L + 2, L + 1), dtype=np.int64)
    for p in range(L - 1):
        w[p, p + 1] = 1
        w[L - 1 + p, p + 1] = -1
    w[2 * L - 2, 0] = -1  # injection from the left reservoir moves particles rightward across bond 0
    w[2 * L, 0] = 1
    w[2 * L - 1, L] = 1
    w[2 * L + 1, L] = -1
    return w


def event_rates(config: Configuration, params: LatticeParams) -> EventRates:
    if config.n.size != params.L:
        raise ValueError("configuration size does not match L")
    row = _rate_table(config.n[None, :], params)[0]
    L = params.L
    return EventRates(
        hop_left=row[: L - 1].copy(),
        hop_right=row[L - 1 : 2 * L - 2].copy(),
        inject=(float(row[2 * L - 2]), float(row[2 * L - 1])),
        remove=(float(row[2 * L]), float(row[2 * L + 1])),
    )


def step_gillespie(config: Configuration, params: LatticeParams, rng: np.random.Generator):
    """One direct-method step; returns ``(new_config, dt)``.

    A frozen configuration (total rate zero) returns itself with ``dt = inf``.
    """
    row = _rate_table(config.n[None, :], params)[0]
    total = row.sum()
    if total <= 0:
        return Configuration(config.n.copy(), math.inf), math.inf
    dt = rng.exponential(1.0 / total)
    k = int(np.searchsorted(np.cumsum(row), rng.random() * total, side="right"))
    k = min(k, row.size - 1)
    new = config.n + _event_deltas(params.L)[k]
    return Configuration(new, config.t + dt), dt


@dataclass
class TrajectoryEnsemble:
    """Snapshots of many trajectories plus event-counted bond currents.

    ``samples`` has shape (n_traj, n_times, L); ``flux`` holds the net number
    of leftward transfers per trajectory across each of the L+1 bonds during
    ``[count_from, t_end]``.
    """

    params: LatticeParams
    times: np.ndarray
    samples: np.ndarray = field(repr=False)
    flux: np.ndarray = field(repr=False)
    count_window: float
    seed: int
    n_batches: int = 20

    @property
    def n_traj(self) -> int:
        return self.samples.shape[0]

    def _final(self, time_index):
        return self.samples[:, time_index, :].astype(float)

    def _batched(self, values):
        """Mean and batch standard error of per-trajectory values (axis 0)."""
        mean = values.mean(axis=0)
        nb = min(self.n_batches, values.shape[0])
        if nb < 2:
            return mean, np.full_like(mean, np.nan)
        batches = np.array([b.mean(axis=0) for b in np.array_split(values, nb)])
        return mean, batches.std(axis=0, ddof=1) / math.sqrt(nb)

    def mean(self, time_index: int = -1):
        return self._batched(self._final(time_index))

    def profile(self, time_index: int = -1) -> DensityProfile:
        m, se = self.mean(time_index)
        return DensityProfile(m, float(self.current()[0].mean()) if self.count_window > 0 else math.nan,
                              Provenance.MONTECARLO, se)

    def second_moments(self, time_index: int = -1) -> np.ndarray:
        n = self._final(time_index)
        return n.T @ n / n.shape[0]

    def covariance(self, time_index: int = -1) -> np.ndarray:
        """``C_pq = <n_p n_q> - <n_p><n_q>``."""
        n = self._final(time_index)
        m = n.mean(axis=0)
        return self.second_moments(time_index) - np.outer(m, m)

    def g2(self, time_index: int = -1):
        """``<n(n-1)>/<n>^2`` per site with a jackknife-over-batches standard error."""
        n = self._final(time_index)

        def est(x):
            m = x.mean(axis=0)
            with np.errstate(divide="ignore", invalid="ignore"):
                return (x * (x - 1)).mean(axis=0) / m**2

        value = est(n)
        chunks = np.array_split(n, min(self.n_batches, n.shape[0]))
        if len(chunks) < 2:
            return value, np.full_like(value, np.nan)
        loo = np.array([est(np.concatenate(chunks[:k] + chunks[k + 1 :])) for k in range(len(chunks))])
        nb = len(chunks)
        se = np.sqrt((nb - 1) / nb * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
        return value, se

    def current(self):
        """Event-counted leftward current per bond (L+1 values) with batch errors."""
        if self.count_window <= 0:
            raise ValueError("no counting window")
        return self._batched(self.flux / self.count_window)

    def rate_current(self, time_index: int = -1):
        """Interior currents from the rate formula ``gamma_l<n_{p+1}(1+n_p)> - gamma_r<n_p(1+n_{p+1})>``."""
        n = self._final(time_index)
        p = self.params
        per = p.gamma_l * n[:, 1:] * (1 + n[:, :-1]) - p.gamma_r * n[:, :-1] * (1 + n[:, 1:])
        return self._batched(per)


def _run_block(params, n, t_end, sample_times, count_from, rng, cap, method, dt):
    B, L = n.shape
    deltas = _event_deltas(L)
    weights = _flux_weights(L)
    t = np.zeros(B)
    samples = np.empty((B, sample_times.size, L), dtype=np.int64)
    next_sample = np.zeros(B, dtype=np.int64)
    flux = np.zeros((B, L + 1), dtype=np.int64)
    active = np.arange(B)
    while active.size:
        rates = _rate_table(n[active], params)
        total = rates.sum(axis=1)
        if method == "gillespie":
            with np.errstate(divide="ignore"):
                wait = np.where(total > 0, rng.exponential(size=active.size) / total, np.inf)
            fires = total > 0
        else:
            if np.any(total * dt > 1.0):
                raise ValueError("fixed-step sampler needs total_rate * dt <= 1; reduce dt")
            wait = np.full(active.size, dt)
            fires = rng.random(active.size) < total * dt
        t_next = t[active] + wait
        # record snapshots for every sample time passed before the next event
        while True:
            idx = next_sample[active]
            pending = idx < sample_times.size
            due = pending & (sample_times[np.minimum(idx, sample_times.size - 1)] < t_next)
            if not due.any():
                break
            rows = active[due]
            samples[rows, next_sample[rows]] = n[rows]
            next_sample[rows] += 1
        done = t_next >= t_end
        go = ~done & fires
        if go.any():
            rows = active[go]
            u = rng.random(rows.size) * total[go]
            k = (np.cumsum(rates[go], axis=1) <= u[:, None]).sum(axis=1)
            k = np.minimum(k, rates.shape[1] - 1)
            n[rows] += deltas[k]
            counting = t_next[go] >= count_from
            if counting.any():
                flux[rows[counting]] += weights[k[counting]]
            if n[rows].max(initial=0) > cap:
                raise OccupationCapError(f"occupation exceeded cap {cap}")
        t[active] = np.minimum(t_next, t_end)
        active = active[~done]
    return samples, flux


def _resolve_threads(threads):
    if threads is None:
        threads = int(os.environ.get("ASIP_THREADS", "1") or 1)
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def run_ensemble(params: LatticeParams, n_traj: int, t_end: float, seed: int = 0, *,
                 sample_times=None, count_from: float | None = None, initial=None,
                 method: str = "gillespie", dt: float | None = None, cap: int = DEFAULT_CAP,
                 threads: int | None = None, block_size: int = BLOCK_SIZE,
                 n_batches: int = 20) -> TrajectoryEnsemble:
    """Sample ``n_traj`` independent trajectories up to ``t_end``.

    Trajectories are grouped in blocks of ``block_size``; block ``b`` draws
    from ``SeedSequence(seed).spawn`` child ``b``, so results depend only on
    ``(seed, block_size)`` and not on ``threads``.  ``sample_times`` defaults
    to ``[t_end]``; currents are event-counted from ``count_from`` (default
    ``t_end / 2``).
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    if method not in ("gillespie", "fixed_dt"):
        raise ValueError(f"unknown method {method!r}")
    if method == "fixed_dt" and not (dt and dt > 0):
        raise ValueError("fixed_dt method needs dt > 0")
    threads = _resolve_threads(threads)
    times = np.atleast_1d(np.asarray(t_end if sample_times is None else sample_times, dtype=float))
    if np.any(np.diff(times) < 0) or times[0] < 0 or times[-1] > t_end:
        raise ValueError("sample_times must be sorted within [0, t_end]")
    count_from = 0.5 * t_end if count_from is None else float(count_from)
    init = np.zeros(params.L, dtype=np.int64) if initial is None else Configuration(np.asarray(initial)).n
    if init.size != params.L:
        raise ValueError("initial configuration size does not match L")

    n_blocks = -(-n_traj // block_size)
    children = np.random.SeedSequence(int(seed)).spawn(n_blocks)

    def work(b):
        size = min(block_size, n_traj - b * block_size)
        rng = np.random.Generator(np.random.PCG64(children[b]))
        state = np.tile(init, (size, 1))
        return _run_block(params, state, float(t_end), times, count_from, rng, cap, method, dt)

    if threads == 1:
        parts = [work(b) for b in range(n_blocks)]
    else:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, range(n_blocks)))
    samples = np.concatenate([p[0] for p in parts])
    flux = np.concatenate([p[1] for p in parts])
    return TrajectoryEnsemble(params, times, samples, flux, float(t_end) - count_from, int(seed), n_batches)
