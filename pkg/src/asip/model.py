"""Model parameters and derived transport quantities.

All rates are stored in raw units (1/time); occupations are dimensionless.
The transport direction is fixed to the left: ``gamma_l >= gamma_r``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

# |c - gamma_s| below this fraction of gamma_s is labelled critical
CRITICAL_WINDOW = 1e-8


class Phase(str, enum.Enum):
    DIFFUSIVE = "diffusive"
    SMOOTH = "smooth"
    CRITICAL = "critical"
    ZIGZAG = "zigzag"


class Provenance(str, enum.Enum):
    ANALYTIC = "analytic"
    MEANFIELD = "meanfield"
    MONTECARLO = "montecarlo"
    TWA = "twa"


@dataclass(frozen=True)
class LatticeParams:
    """Rates and reservoir occupations of a single transport scenario.

    Parameters
    ----------
    L : int
        Number of lattice sites (>= 2).
    gamma_l, gamma_r : float
        Hopping rates to the left and to the right.
    kappa_l, kappa_r : float
        Coupling rates to the left (drain) and right (source) reservoirs.
    nbar_l, nbar_r : float
        Thermal occupations of the reservoirs.
    """

    L: int
    gamma_l: float = 1.0
    gamma_r: float = 0.0
    kappa_l: float = 1.0
    kappa_r: float = 1.0
    nbar_l: float = 0.0
    nbar_r: float = 0.0

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"L must be an integer >= 2, got {self.L!r}")
        object.__setattr__(self, "L", int(self.L))
        for name in ("gamma_l", "gamma_r", "kappa_l", "kappa_r", "nbar_l", "nbar_r"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {value!r}")
            object.__setattr__(self, name, value)
        if self.gamma_r > self.gamma_l:
            raise ValueError(
                "gamma_r > gamma_l is not supported; mirror the lattice so that "
                "transport is directed to the left"
            )

    @property
    def gamma_a(self) -> float:
        return self.gamma_l - self.gamma_r

    @property
    def gamma_s(self) -> float:
        return 0.5 * (self.gamma_l + self.gamma_r)

    def replace(self, **changes) -> "LatticeParams":
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(changes)
        return LatticeParams(**values)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class DerivedRates:
    """Infinite-lattice transport quantities of a scenario.

    For ``gamma_a == 0`` the skin depth is ``inf`` and ``phase`` is
    ``Phase.DIFFUSIVE``; ``current_j`` is then the L -> infinity limit (zero),
    the finite-size Fourier current comes from
    :func:`asip.analytic.diffusive_profile`.
    """

    gamma_a: float
    gamma_s: float
    n_inf: float
    current_j: float
    speed_c: float
    xi: float
    gamma_a_crit: float
    phase: Phase

    @property
    def decay_ratio(self) -> float:
        """(gamma_s - c) / (gamma_s + c), the per-site factor of the boundary deviation."""
        return (self.gamma_s - self.speed_c) / (self.gamma_s + self.speed_c)

    def reynolds(self, n_ref: float) -> float:
        if self.gamma_s <= 0:
            raise ValueError("Reynolds number undefined for gamma_s = 0")
        return self.gamma_a * n_ref / self.gamma_s

    def to_dict(self) -> dict:
        return {
            "gamma_a": self.gamma_a,
            "gamma_s": self.gamma_s,
            "n_inf": self.n_inf,
            "current_j": self.current_j,
            "speed_c": self.speed_c,
            "xi": self.xi,
            "gamma_a_crit": self.gamma_a_crit,
            "phase": self.phase.value,
        }


@dataclass(frozen=True)
class DensityProfile:
    occupations: np.ndarray
    current: float
    provenance: Provenance
    stderr: np.ndarray | None = field(default=None)

    def __post_init__(self):
        occ = np.array(self.occupations, dtype=float)
        if occ.ndim != 1:
            raise ValueError("occupations must be a 1D array")
        if np.any(occ < 0):
            raise ValueError("occupations must be non-negative")
        occ.setflags(write=False)
        object.__setattr__(self, "occupations", occ)
        object.__setattr__(self, "provenance", Provenance(self.provenance))
        if self.stderr is not None:
            se = np.array(self.stderr, dtype=float)
            se.setflags(write=False)
            object.__setattr__(self, "stderr", se)

    @property
    def L(self) -> int:
        return self.occupations.size

    def bond_residual(self, params: LatticeParams) -> np.ndarray:
        """Residual of the stationary bond relation on every interior bond."""
        n = self.occupations
        return (params.gamma_a * n[:-1] * n[1:] + params.gamma_l * n[1:]
                - params.gamma_r * n[:-1] - self.current)


def asymptotic_density(gamma_a: float, kappa_r: float, nbar_r: float) -> float:
    """Bulk density fixed by the right reservoir.

    Positive root of ``gamma_a n^2 + (gamma_a + kappa_r) n = kappa_r nbar_r``,
    written in the cancellation-free form.
    """
    lin = gamma_a + kappa_r
    if lin == 0:
        return 0.0
    return 2.0 * kappa_r * nbar_r / (lin + math.sqrt(lin * lin + 4.0 * gamma_a * kappa_r * nbar_r))


def critical_asymmetry(gamma_l: float, kappa_r: float, nbar_r: float) -> float:
    """Hopping imbalance at which the skin depth vanishes."""
    denom = gamma_l + kappa_r * (1.0 + nbar_r)
    if denom == 0:
        return 0.0
    return gamma_l * (gamma_l + kappa_r) / denom


def classify(speed_c: float, gamma_s: float, gamma_a: float) -> Phase:
    if gamma_a == 0:
        return Phase.DIFFUSIVE
    if abs(speed_c - gamma_s) < CRITICAL_WINDOW * gamma_s:
        return Phase.CRITICAL
    return Phase.SMOOTH if speed_c < gamma_s else Phase.ZIGZAG


def skin_depth(speed_c: float, gamma_s: float, phase: Phase) -> float:
    if phase is Phase.DIFFUSIVE:
        return math.inf
    if phase is Phase.CRITICAL:
        return 0.0
    return 1.0 / math.log(abs((gamma_s + speed_c) / (gamma_s - speed_c)))


def derive_rates(params: LatticeParams) -> DerivedRates:
    if params.gamma_l == 0 and params.gamma_r == 0:
        raise ValueError("no dynamics: gamma_l = gamma_r = 0")
    ga, gs = params.gamma_a, params.gamma_s
    n_inf = asymptotic_density(ga, params.kappa_r, params.nbar_r)
    current = params.kappa_r * (params.nbar_r - n_inf)
    c = ga * (n_inf + 0.5)
    phase = classify(c, gs, ga)
    return DerivedRates(
        gamma_a=ga,
        gamma_s=gs,
        n_inf=n_inf,
        current_j=current,
        speed_c=c,
        xi=skin_depth(c, gs, phase),
        gamma_a_crit=critical_asymmetry(params.gamma_l, params.kappa_r, params.nbar_r),
        phase=phase,
    )


def asymmetry_from_bath(offset_u: float, temperature: float) -> float:
    """Ratio gamma_l / gamma_r for a tilt ``offset_u`` and bath temperature (same energy units)."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    return math.exp(offset_u / temperature)
