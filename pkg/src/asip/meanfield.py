"""Mean-field dynamics of the chain with reservoir boundaries.

Bond currents follow the factorised form
``J_{p,p+1} = gamma_l n_{p+1} (1 + n_p) - gamma_r n_p (1 + n_{p+1})`` and
the reservoirs contribute ``J_{0,1} = kappa_l (n_1 - nbar_l)`` and
``J_{L,L+1} = kappa_r (nbar_r - n_L)``; then ``dn_p/dt = J_{p,p+1} - J_{p-1,p}``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import root

from .model import DensityProfile, LatticeParams, Provenance

log = logging.getLogger(__name__)


class NotConvergedError(RuntimeError):
    """Raised when a run ends before reaching the steady-state criterion."""

    def __init__(self, message, run=None):
        super().__init__(message)
        self.run = run


class NonStationaryError(ValueError):
    pass


@dataclass(frozen=True)
class MeanFieldState:
    t: float
    n: np.ndarray
    dn_dt_norm: float


@dataclass(frozen=True)
class IntegratorConfig:
    """Adaptive Dormand-Prince settings.

    ``steady_tol`` is relative: a state is stationary once
    ``max|dn/dt| < steady_tol * max(|J|, gamma_l)``.
    """

    dt_max: float = 1.0
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    steady_tol: float = 1e-10
    t_max: float = 1e4
    stop_at_steady: bool = True
    record: bool = True

    def __post_init__(self):
        for name in ("dt_max", "rel_tol", "abs_tol", "steady_tol", "t_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class MeanFieldRun:
    states: list
    converged: bool
    rejected_negative: int = 0
    max_conservation_error: float = 0.0
    steps: int = 0

    @property
    def final(self) -> MeanFieldState:
        return self.states[-1]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def densities(self) -> np.ndarray:
        return np.array([s.n for s in self.states])


def bond_currents(n, params: LatticeParams) -> np.ndarray:
    """All L+1 currents ``[J_{0,1}, J_{1,2}, ..., J_{L,L+1}]`` (positive = leftward)."""
    n = np.asarray(n, dtype=float)
    out = np.empty(n.size + 1)
    out[0] = params.kappa_l * (n[0] - params.nbar_l)
    out[1:-1] = params.gamma_l * n[1:] * (1.0 + n[:-1]) - params.gamma_r * n[:-1] * (1.0 + n[1:])
    out[-1] = params.kappa_r * (params.nbar_r - n[-1])
    return out


def rhs(n, params: LatticeParams) -> np.ndarray:
    j = bond_currents(n, params)
    return j[1:] - j[:-1]


def jacobian(n, params: LatticeParams) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    L = n.size
    gl, gr = params.gamma_l, params.gamma_r
    # d J_{p,p+1} / d n_p and / d n_{p+1}
    d_left = gl * n[1:] - gr * (1.0 + n[1:])
    d_right = gl * (1.0 + n[:-1]) - gr * n[:-1]
    jac = np.zeros((L, L))
    idx = np.arange(L - 1)
    # row p gains +J_{p,p+1}, row p+1 gains -J_{p,p+1}
    jac[idx, idx] += d_left
    jac[idx, idx + 1] += d_right
    jac[idx + 1, idx] -= d_left
    jac[idx + 1, idx + 1] -= d_right
    jac[0, 0] -= params.kappa_l
    jac[-1, -1] -= params.kappa_r
    return jac


# Dormand-Prince 5(4) tableau; row i holds the stage-i weights
_A = np.array([
    [0, 0, 0, 0, 0, 0],
    [1 / 5, 0, 0, 0, 0, 0],
    [3 / 40, 9 / 40, 0, 0, 0, 0],
    [44 / 45, -56 / 15, 32 / 9, 0, 0, 0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
])
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B_LOW = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def _dp_step(n, dt, params, k0):
    ks = np.empty((7, n.size))
    stages = np.empty((7, n.size))
    ks[0], stages[0] = k0, n
    for i in range(1, 7):
        stages[i] = n + dt * (_A[i, :i] @ ks[:i])
        ks[i] = rhs(stages[i], params)
    # the last stage sits on the 5th-order solution (FSAL)
    return stages[6], dt * ((_B - _B_LOW) @ ks), ks, stages


def _stiffness_cap(n, params):
    rate = params.gamma_s * (1.0 + 2.0 * float(np.max(n)))
    rate = max(rate, params.kappa_l, params.kappa_r)
    return np.inf if rate == 0 else 0.1 / rate


def _steady_scale(n, params):
    return max(abs(float(np.mean(bond_currents(n, params)))), params.gamma_l)


def evolve(initial, params: LatticeParams, config: IntegratorConfig | None = None) -> MeanFieldRun:
    """Integrate the mean-field equations from ``initial``.

    ``initial`` is a :class:`MeanFieldState` or an occupation vector (t = 0).
    Steps that would produce a negative occupation are rejected and retried
    with half the step; each such event is logged.  The run stops at
    ``t_max`` or, if ``config.stop_at_steady``, once stationary; a run that
    ends without reaching the criterion has ``converged = False``.
    """
    config = config or IntegratorConfig()
    if isinstance(initial, MeanFieldState):
        t, n = float(initial.t), np.array(initial.n, dtype=float)
    else:
        t, n = 0.0, np.array(initial, dtype=float)
    if n.shape != (params.L,):
        raise ValueError(f"initial state must have {params.L} sites")
    if np.any(n < 0):
        raise ValueError("initial occupations must be non-negative")

    k0 = rhs(n, params)
    norm = float(np.max(np.abs(k0)))
    states = [MeanFieldState(t, n.copy(), norm)]
    run = MeanFieldRun(states, converged=False)
    if norm < config.steady_tol * _steady_scale(n, params):
        run.converged = True
        if config.stop_at_steady:
            return run

    dt = min(config.dt_max, _stiffness_cap(n, params))
    t_end = t + config.t_max
    while t < t_end:
        dt = min(dt, config.dt_max, _stiffness_cap(n, params), t_end - t)
        new, err, ks, stages = _dp_step(n, dt, params, k0)
        if np.any(new < 0):
            run.rejected_negative += 1
            log.info("negative occupation at t=%.6g with dt=%.3g; retrying with dt/2", t, dt)
            dt *= 0.5
            continue
        scale = config.abs_tol + config.rel_tol * np.maximum(np.abs(n), np.abs(new))
        err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
        if err_norm > 1.0:
            dt *= max(0.2, 0.9 * err_norm**-0.2)
            continue
        # particle bookkeeping: sum of n changes only through the reservoirs
        flux = _B @ _boundary_flux(stages, params)
        delta = float(np.sum(new) - np.sum(n))
        run.max_conservation_error = max(
            run.max_conservation_error, abs(delta - dt * flux) / max(1.0, float(np.sum(new)))
        )
        t += dt
        n = new
        k0 = ks[-1]
        run.steps += 1
        norm = float(np.max(np.abs(k0)))
        if config.record:
            states.append(MeanFieldState(t, n.copy(), norm))
        if norm < config.steady_tol * _steady_scale(n, params):
            run.converged = True
            if config.stop_at_steady:
                break
        else:
            run.converged = False
        dt *= min(5.0, 0.9 * max(err_norm, 1e-10) ** -0.2)
    if not config.record:
        states.append(MeanFieldState(t, n.copy(), norm))
    return run


def _boundary_flux(n, params):
    return params.kappa_r * (params.nbar_r - n[..., -1]) - params.kappa_l * (n[..., 0] - params.nbar_l)


def relax(params: LatticeParams, initial=None, config: IntegratorConfig | None = None,
          polish: bool = True, seed_tol: float = 1e-4) -> tuple[DensityProfile, MeanFieldRun]:
    """Run to the stationary state and return its profile.

    With ``polish`` the integration stops once ``max|dn/dt|`` drops below
    ``seed_tol`` (relative) and a Newton solve of ``rhs = 0`` takes over;
    integration resumes to ``config.steady_tol`` if Newton fails.
    """
    config = config or IntegratorConfig(record=False)
    if initial is None:
        initial = np.zeros(params.L)
    if polish:
        coarse = replace(config, steady_tol=max(seed_tol, config.steady_tol), stop_at_steady=True)
        run = evolve(initial, params, coarse)
        n = _newton(run.final.n, params, config.steady_tol)
        if n is None:
            run = evolve(run.final, params, replace(config, t_max=max(config.t_max - run.final.t, 1e-9)))
            n = _newton(run.final.n, params, config.steady_tol) if run.converged else None
            n = run.final.n if n is None else n
        else:
            run.converged = True
    else:
        run = evolve(initial, params, config)
        n = run.final.n
    if not run.converged:
        raise NotConvergedError(f"mean-field run not stationary by t={run.final.t:.4g}", run)
    current = float(np.mean(bond_currents(n, params)))
    return DensityProfile(n, current, Provenance.MEANFIELD), run


def _newton(n0, params, tol):
    sol = root(rhs, n0, args=(params,), jac=jacobian, method="hybr", options={"xtol": 1e-14})
    if not np.all(sol.x >= -1e-12):
        return None
    x = np.clip(sol.x, 0.0, None)
    resid = float(np.max(np.abs(rhs(x, params))))
    return x if resid < tol * _steady_scale(x, params) else None


@dataclass(frozen=True)
class CurrentEstimate:
    mean: float
    max_deviation: float
    bonds: np.ndarray = field(repr=False)


def stationary_current(profile, params: LatticeParams, tol: float = 1e-6) -> CurrentEstimate:
    """Bond-averaged current of a stationary profile.

    Raises :class:`NonStationaryError` if the L+1 currents (reservoir bonds
    included) differ from their mean by more than ``tol * max(|J|, gamma_l)``.
    """
    n = profile.occupations if isinstance(profile, DensityProfile) else np.asarray(profile, float)
    bonds = bond_currents(n, params)
    mean = float(np.mean(bonds))
    dev = float(np.max(np.abs(bonds - mean)))
    if dev > tol * max(abs(mean), params.gamma_l):
        raise NonStationaryError(f"bond currents not uniform (max deviation {dev:.3e})")
    return CurrentEstimate(mean, dev, bonds)


def asep_current(profile, params: LatticeParams) -> np.ndarray:
    """Exclusion-process bond currents ``gamma_l n_{p+1}(1-n_p) - gamma_r n_p(1-n_{p+1})``."""
    n = profile.occupations if isinstance(profile, DensityProfile) else np.asarray(profile, float)
    if np.any((n < 0) | (n > 1)):
        raise ValueError("exclusion-process occupations must lie in [0, 1]")
    return params.gamma_l * n[1:] * (1.0 - n[:-1]) - params.gamma_r * n[:-1] * (1.0 - n[1:])
