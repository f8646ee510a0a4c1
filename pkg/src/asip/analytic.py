"""Closed-form stationary profiles and continuum shock-wave helpers.

For asymmetric hopping the stationary bond relation

    gamma_a n_p n_{p+1} + gamma_l n_{p+1} - gamma_r n_p = J

is a Riccati map whose solution is a ratio of successive terms of a Lucas
sequence ``y_{p+1} = a y_{p-1} + b y_p``.  The constants depend on the
current only; the boundary reservoirs fix ``J`` and the seed ``n_1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .model import DensityProfile, LatticeParams, Provenance, derive_rates

BOND_RTOL = 1e-9


@dataclass(frozen=True)
class LucasCoefficients:
    """Constants of the Lucas-sequence representation of a stationary profile.

    ``mu`` is the boundary constant of the closed form; it is ``inf`` exactly
    at the critical point where ``phi_minus`` vanishes.  For currents below
    ``-gamma_a/4`` (flow against the bias) ``phi_plus``, ``phi_minus`` and
    ``mu`` are ``nan``; the recursion itself stays valid.
    """

    a: float
    b: float
    d: float
    phi_plus: float
    phi_minus: float
    mu: float
    current: float
    n1: float

    @property
    def n_inf(self) -> float:
        # sqrt(b^2 + 4a) = 2 n_inf + 1
        return 0.5 * (self.phi_plus - self.phi_minus) - 0.5

    @property
    def ratio(self) -> float:
        """phi_minus / phi_plus = (gamma_s - c) / (gamma_s + c)."""
        return self.phi_minus / self.phi_plus


def lucas_coefficients(params: LatticeParams, current: float, n1: float) -> LucasCoefficients:
    ga = params.gamma_a
    if ga <= 0:
        raise ValueError("Lucas representation needs gamma_a > 0")
    a = (current * ga - params.gamma_l * params.gamma_r) / ga**2
    b = 2.0 * params.gamma_s / ga
    d = params.gamma_r / ga
    disc = b * b + 4.0 * a
    if disc < 0:
        # flow against the bias: the recursion is still real but has no real fixed point
        return LucasCoefficients(a, b, d, math.nan, math.nan, math.nan, float(current), float(n1))
    root = math.sqrt(disc)
    phi_p, phi_m = 0.5 * (b + root), 0.5 * (b - root)
    n_inf = 0.5 * root - 0.5
    r = phi_m / phi_p
    denom = (n1 - d) * r - (n_inf - d)
    mu = (n_inf - n1) / denom if denom != 0 else math.inf
    return LucasCoefficients(a, b, d, phi_p, phi_m, mu, float(current), float(n1))


def lucas_profile(coeffs: LucasCoefficients, L: int) -> DensityProfile:
    """Iterate the Lucas sequence from the left boundary seed.

    The seed ``(y_0, y_1) = (n_1 - d, a)`` is ``(1, a / (n_1 - d))`` rescaled,
    which avoids dividing by ``n_1 - d``.  Pairs are renormalised every step
    since only ratios enter.
    """
    a, b, d = coeffs.a, coeffs.b, coeffs.d
    n = np.empty(L)
    n[0] = coeffs.n1
    if a == 0:
        n[1:] = d
    else:
        y_prev, y = coeffs.n1 - d, a
        for p in range(1, L):
            y_prev, y = y, a * y_prev + b * y
            if y == 0 or not math.isfinite(y):
                raise ValueError(f"Lucas sequence vanishes at site {p + 1}: unphysical boundary seed")
            n[p] = a * (y_prev / y) + d
            scale = abs(y)
            y_prev, y = y_prev / scale, y / scale
    tiny = 1e-12 * max(1.0, float(np.max(np.abs(n))))
    if np.any(n < -tiny):
        raise ValueError("negative occupation in Lucas profile: unphysical boundary seed")
    return DensityProfile(np.clip(n, 0.0, None), coeffs.current, Provenance.ANALYTIC)


def closed_form_profile(coeffs: LucasCoefficients, L: int) -> np.ndarray:
    """Occupations from the explicit ``mu`` form, not the recursion.

    ``n_p = (n_inf - d) (1 + r^{p-1} mu) / (1 + r^p mu) + d``; at the critical
    point (``r == 0``) the profile is flat beyond the first site.
    """
    if math.isnan(coeffs.phi_plus):
        raise ValueError("current below -gamma_a/4: no real closed form, use lucas_profile")
    r, mu, d, n_inf = coeffs.ratio, coeffs.mu, coeffs.d, coeffs.n_inf
    p = np.arange(1, L + 1)
    if r == 0 or math.isinf(mu):
        out = np.full(L, n_inf)
        out[0] = coeffs.n1
        return out
    return (n_inf - d) * (1 + r ** (p - 1) * mu) / (1 + r**p * mu) + d


def _shoot(params: LatticeParams, current: float) -> np.ndarray | None:
    """Forward-iterate the bond map from the left boundary; None if it turns negative."""
    n = np.empty(params.L)
    n[0] = params.nbar_l + current / params.kappa_l
    if n[0] < 0:
        return None
    gl, gr, ga = params.gamma_l, params.gamma_r, params.gamma_a
    for p in range(params.L - 1):
        nxt = (current + gr * n[p]) / (ga * n[p] + gl)
        if nxt < 0:
            return None
        n[p + 1] = nxt
    return n


def steady_current(params: LatticeParams, closure: str = "finite") -> float:
    """Stationary current of the asymmetric chain.

    ``closure="infinite"`` uses ``n_L = n_inf``; ``"finite"`` matches the right
    reservoir exactly on the L-site lattice by root-finding in ``J``.
    """
    if closure == "infinite":
        return derive_rates(params).current_j
    if closure != "finite":
        raise ValueError(f"unknown closure {closure!r}")
    hi = params.kappa_r * params.nbar_r
    lo = -params.kappa_l * params.nbar_l

    def mismatch(j):
        n = _shoot(params, j)
        if n is None:
            # the seed drove the chain negative: J is too small
            return hi - j + 1.0
        return params.kappa_r * (params.nbar_r - n[-1]) - j

    if hi == lo:
        return hi
    f_lo, f_hi = mismatch(lo), mismatch(hi)
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    if f_lo * f_hi > 0:
        raise ValueError("no stationary current consistent with both reservoirs")
    scale = max(abs(lo), abs(hi))
    return brentq(mismatch, lo, hi, xtol=1e-16 * scale, rtol=4 * np.finfo(float).eps, maxiter=500)


def boundary_coefficients(params: LatticeParams, closure: str = "finite") -> LucasCoefficients:
    _require_reservoirs(params)
    current = steady_current(params, closure)
    n1 = params.nbar_l + current / params.kappa_l
    return lucas_coefficients(params, current, n1)


def steady_profile(params: LatticeParams, closure: str = "finite") -> DensityProfile:
    """Stationary mean-field occupations of the chain.

    Symmetric hopping is routed to :func:`diffusive_profile`.  Otherwise the
    Lucas profile is seeded from the left reservoir, with the current fixed by
    the right one (exactly for ``closure="finite"``, via ``n_L = n_inf`` for
    ``closure="infinite"``).
    """
    if params.gamma_a == 0:
        return diffusive_profile(params)
    coeffs = boundary_coefficients(params, closure)
    profile = lucas_profile(coeffs, params.L)
    res = np.abs(profile.bond_residual(params))
    # gamma_l gamma_r / gamma_a bounds the rounding of the constant terms in the recursion
    scale = max(abs(coeffs.current), params.gamma_l * float(np.max(profile.occupations)),
                params.gamma_l * params.gamma_r / params.gamma_a, 1e-300)
    if res.size and res.max() > BOND_RTOL * scale:
        raise ValueError(f"bond relation violated (max residual {res.max():.3e})")
    return profile


def diffusive_profile(params: LatticeParams) -> DensityProfile:
    """Linear profile and Fourier current for symmetric hopping.

    Solves ``kappa_l (n_1 - nbar_l) = gamma_s (n_{p+1} - n_p) = kappa_r (nbar_r - n_L) = J``.
    """
    if params.gamma_a != 0:
        raise ValueError("diffusive_profile requires gamma_l == gamma_r")
    _require_reservoirs(params, allow_one=True)
    gs, L = params.gamma_s, params.L
    if gs == 0:
        raise ValueError("no dynamics: gamma_l = gamma_r = 0")
    if params.kappa_l == 0 or params.kappa_r == 0:
        level = params.nbar_r if params.kappa_r > 0 else params.nbar_l
        return DensityProfile(np.full(L, level), 0.0, Provenance.ANALYTIC)
    resistance = 1.0 / params.kappa_l + 1.0 / params.kappa_r + (L - 1) / gs
    current = (params.nbar_r - params.nbar_l) / resistance
    n = params.nbar_l + current / params.kappa_l + np.arange(L) * current / gs
    return DensityProfile(n, current, Provenance.ANALYTIC)


def _require_reservoirs(params: LatticeParams, allow_one: bool = False):
    if allow_one:
        if params.kappa_l == 0 and params.kappa_r == 0:
            raise ValueError("at least one reservoir must be coupled")
    elif params.kappa_l <= 0 or params.kappa_r <= 0:
        raise ValueError("stationary profile needs kappa_l > 0 and kappa_r > 0")


@dataclass(frozen=True)
class ShockWave:
    """Travelling tanh front of the continuum equation, centred at ``L - speed * t``."""

    height: float
    speed: float
    width: float
    L: float

    def center(self, t):
        return self.L - self.speed * np.asarray(t)

    def density(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.height * (1.0 + np.tanh((x - self.center(t)) / self.width))

    def sample(self, t=0.0) -> np.ndarray:
        """Front evaluated on lattice sites 1..L."""
        return self.density(np.arange(1, int(self.L) + 1), t)


def shock_wave(n_sw: float, params: LatticeParams) -> ShockWave:
    if n_sw <= 0:
        raise ValueError("shock height must be positive")
    ga = params.gamma_a
    if ga <= 0:
        raise ValueError("shock fronts need gamma_a > 0")
    return ShockWave(
        height=float(n_sw),
        speed=ga * (n_sw + 1.0),
        width=2.0 * params.gamma_s / (n_sw * ga),
        L=float(params.L),
    )


def reynolds(n_ref: float, params: LatticeParams) -> float:
    if params.gamma_s <= 0:
        raise ValueError("Reynolds number undefined for gamma_s = 0")
    return params.gamma_a * n_ref / params.gamma_s

