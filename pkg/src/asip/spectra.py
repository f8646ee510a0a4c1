"""Non-Hermitian matrices of the linearised transport problem and their spectra.

Conventions: ``hn_*`` is the Hatano-Nelson tunnelling matrix with ``i J_l`` on
the superdiagonal and ``-i J_r`` on the subdiagonal (periodic corners
``(1, L) = -i J_r`` and ``(L, 1) = i J_l``).  The density-fluctuation matrix
``neumann_h`` is built as ``h = i grad V`` with ``V`` the current map
``j = V eps`` and ``grad`` the forward difference, using
``J_l = c + gamma_s`` and ``J_r = c - gamma_s``.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .model import LatticeParams, derive_rates

log = logging.getLogger(__name__)

MAX_DIM = 512
RELIABILITY_COND = 1e10


class MatrixKind(str, enum.Enum):
    HN_PERIODIC = "hn_periodic"
    HN_OPEN = "hn_open"
    NEUMANN_H = "neumann_h"
    BOND_MATRIX_V = "bond_matrix_V"
    GRADIENT_NABLA = "gradient_nabla"


class EigenSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class HoppingPair:
    """Tunnelling amplitudes, optionally tagged with the fluctuation parameters they came from."""

    j_l: float
    j_r: float
    gamma_s: float | None = None
    speed_c: float | None = None

    @classmethod
    def from_fluctuations(cls, gamma_s: float, speed_c: float) -> "HoppingPair":
        return cls(speed_c + gamma_s, speed_c - gamma_s, gamma_s, speed_c)

    @classmethod
    def from_params(cls, params: LatticeParams) -> "HoppingPair":
        rates = derive_rates(params)
        return cls.from_fluctuations(rates.gamma_s, rates.speed_c)


@dataclass(frozen=True)
class LatticeMatrix:
    kind: MatrixKind
    entries: np.ndarray = field(repr=False)
    hopping: HoppingPair

    def __post_init__(self):
        a = np.array(self.entries, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("matrix must be square")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)
        object.__setattr__(self, "kind", MatrixKind(self.kind))

    @property
    def L(self) -> int:
        return self.entries.shape[0]

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.entries, 2))


def _coerce_hopping(spec) -> HoppingPair:
    if isinstance(spec, HoppingPair):
        return spec
    if isinstance(spec, LatticeParams):
        return HoppingPair.from_params(spec)
    j_l, j_r = spec
    return HoppingPair(float(j_l), float(j_r))


def _hatano_nelson(j_l, j_r, L, periodic):
    a = np.zeros((L, L), dtype=complex)
    idx = np.arange(L - 1)
    a[idx, idx + 1] = 1j * j_l
    a[idx + 1, idx] = -1j * j_r
    if periodic:
        a[0, L - 1] += -1j * j_r
        a[L - 1, 0] += 1j * j_l
    return a


def bond_matrix(gamma_s: float, speed_c: float, L: int) -> np.ndarray:
    """Current map ``V``: zero first row, ``V[p, p-1] = c - gamma_s``, ``V[p, p] = gamma_s + c``."""
    v = np.zeros((L, L))
    idx = np.arange(1, L)
    v[idx, idx - 1] = speed_c - gamma_s
    v[idx, idx] = gamma_s + speed_c
    return v


def gradient(L: int) -> np.ndarray:
    return -np.eye(L) + np.eye(L, k=1)


def build_matrix(kind, hopping, L: int) -> LatticeMatrix:
    """Build one of the lattice matrices.

    ``hopping`` is a :class:`HoppingPair`, a ``(J_l, J_r)`` tuple or a
    :class:`LatticeParams`.  The fluctuation matrices (``neumann_h``,
    ``bond_matrix_V``) need ``gamma_s`` and ``c``; a bare pair is mapped back
    with ``gamma_s = (J_l - J_r) / 2`` and ``c = (J_l + J_r) / 2``.
    """
    try:
        kind = MatrixKind(kind)
    except ValueError:
        raise ValueError(f"unknown matrix kind {kind!r}") from None
    if int(L) != L or L < 2:
        raise ValueError("L must be an integer >= 2")
    if L > MAX_DIM:
        raise ValueError(f"L > {MAX_DIM} not supported")
    hop = _coerce_hopping(hopping)
    gs = hop.gamma_s if hop.gamma_s is not None else 0.5 * (hop.j_l - hop.j_r)
    c = hop.speed_c if hop.speed_c is not None else 0.5 * (hop.j_l + hop.j_r)
    if kind is MatrixKind.HN_OPEN:
        a = _hatano_nelson(hop.j_l, hop.j_r, L, periodic=False)
    elif kind is MatrixKind.HN_PERIODIC:
        a = _hatano_nelson(hop.j_l, hop.j_r, L, periodic=True)
    elif kind is MatrixKind.BOND_MATRIX_V:
        a = bond_matrix(gs, c, L)
    elif kind is MatrixKind.GRADIENT_NABLA:
        a = gradient(L)
    else:
        a = 1j * gradient(L) @ bond_matrix(gs, c, L)
    return LatticeMatrix(kind, a, hop)


@dataclass(frozen=True)
class ComplexSpectrum:
    """Eigen-decomposition of a lattice matrix.

    Eigenvalues are sorted by (Re, Im); column ``k`` of ``eigenvectors``
    belongs to ``eigenvalues[k]`` and has unit max-magnitude entry.
    ``localization`` holds ``1 / |slope|`` of a linear fit to ``log|psi(p)|``
    (``inf`` for flat envelopes).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)
    localization: np.ndarray = field(repr=False)
    condition_number: float
    min_gap: float
    ep_flag: bool
    reliable: bool


def _localization_length(psi, floor=1e-12):
    mag = np.abs(psi)
    mask = mag > floor * mag.max()
    if mask.sum() < 2:
        return 0.0
    p = np.arange(psi.size)[mask]
    slope = np.polyfit(p, np.log(mag[mask]), 1)[0]
    return np.inf if slope == 0 else 1.0 / abs(slope)


def _min_gap(values):
    if values.size < 2:
        return np.inf
    diff = np.abs(values[:, None] - values[None, :])
    diff[np.diag_indices_from(diff)] = np.inf
    return float(diff.min())


def spectrum(matrix: LatticeMatrix, gap_rtol: float = 1e-6, cond_min: float = 1e8) -> ComplexSpectrum:
    a = matrix.entries
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    try:
        w, v = scipy.linalg.eig(a)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(str(exc)) from exc
    if not np.all(np.isfinite(w)):
        raise EigenSolverError("eigensolver returned non-finite eigenvalues")
    order = np.lexsort((w.imag, w.real))
    w, v = w[order], v[:, order]
    v = v / v[np.argmax(np.abs(v), axis=0), np.arange(v.shape[1])]
    with np.errstate(all="ignore"):
        cond = float(np.linalg.cond(v))
    if not np.isfinite(cond):
        cond = np.inf
    gap = _min_gap(w)
    flag = gap < gap_rtol * max(matrix.norm, 1e-300) and cond > cond_min
    reliable = cond <= RELIABILITY_COND
    if not reliable:
        warnings.warn(f"eigenvector condition number {cond:.3g}: eigenvectors unreliable near an EP",
                      RuntimeWarning, stacklevel=2)
    loc = np.array([_localization_length(v[:, k]) for k in range(v.shape[1])])
    return ComplexSpectrum(w, v, loc, cond, gap, bool(flag), reliable)


def match_multisets(a, b, tol: float) -> tuple[bool, float, list]:
    """Greedy nearest-neighbour pairing of two eigenvalue lists.

    Returns ``(ok, max_distance, pairs)``; ``ok`` requires equal sizes and all
    pair distances within ``tol``.
    """
    a = np.asarray(a, complex)
    remaining = list(np.asarray(b, complex))
    if a.size != len(remaining):
        return False, np.inf, []
    pairs = []
    worst = 0.0
    for x in a:
        k = int(np.argmin([abs(x - y) for y in remaining]))
        y = remaining.pop(k)
        pairs.append((x, y))
        worst = max(worst, abs(x - y))
    return worst <= tol, worst, pairs


def steady_mode(gamma_s: float, speed_c: float, L: int) -> np.ndarray:
    """Null vector ``psi_ss(p) = ((gamma_s - c)/(gamma_s + c))^(p-1)``."""
    r = (gamma_s - speed_c) / (gamma_s + speed_c)
    return r ** np.arange(L)


@dataclass
class CompositionReport:
    ok: bool
    max_pair_distance: float
    tolerance: float
    steady_residual: float
    steady_eigenvalue: complex
    factorization_error: float
    current_block_error: float
    gradient_map_error: float
    null_vector_error: float
    mismatches: list = field(default_factory=list)

    def __str__(self):
        lines = [f"composition {'ok' if self.ok else 'FAILED'}: max pair distance "
                 f"{self.max_pair_distance:.3e} (tol {self.tolerance:.1e}), "
                 f"|h psi_ss| = {self.steady_residual:.3e}"]
        lines += [f"  unmatched {x:.12g} vs {y:.12g}" for x, y in self.mismatches]
        return "\n".join(lines)


def verify_spectral_composition(gamma_s: float, speed_c: float, L: int, rtol: float = 1e-8) -> CompositionReport:
    """Check that the spectrum of ``h`` is the shifted open-chain spectrum plus zero.

    Also checks ``h = i grad V``, the block form of ``i V grad``, the null
    vector of ``V`` and the gradient map ``grad Phi_k`` of open-chain modes.
    """
    if gamma_s <= 0:
        raise ValueError("gamma_s must be positive")
    if speed_c < 0:
        raise ValueError("gamma_a >= 0 requires c >= 0")
    hop = HoppingPair.from_fluctuations(gamma_s, speed_c)
    h = build_matrix(MatrixKind.NEUMANN_H, hop, L)
    hn = build_matrix(MatrixKind.HN_OPEN, hop, L - 1)
    shifted = hn.entries - 2j * gamma_s * np.eye(L - 1)
    v = bond_matrix(gamma_s, speed_c, L)
    grad = gradient(L)

    eig_h = scipy.linalg.eigvals(h.entries)
    eig_hn = scipy.linalg.eigvals(shifted)
    k0 = int(np.argmin(np.abs(eig_h)))
    tol = rtol * h.norm
    ok, worst, pairs = match_multisets(np.delete(eig_h, k0), eig_hn, tol)
    mismatches = [(x, y) for x, y in pairs if abs(x - y) > tol]

    psi = steady_mode(gamma_s, speed_c, L)
    steady_res = float(np.linalg.norm(h.entries @ psi))
    fact = float(np.max(np.abs(h.entries - 1j * grad @ v)))
    current = 1j * v @ grad
    block = float(max(np.max(np.abs(current[0])), np.max(np.abs(current[1:, 1:] - shifted))))
    null_err = float(np.linalg.norm(v @ psi))

    # each open-chain mode psi_k lifts to the h-eigenvector grad (0, psi_k)
    w_hn, vec_hn = scipy.linalg.eig(shifted)
    grad_err = 0.0
    for e, vec in zip(w_hn, vec_hn.T):
        phi = grad @ np.concatenate(([0.0], vec))
        scale = max(np.linalg.norm(phi), 1e-300)
        grad_err = max(grad_err, float(np.linalg.norm(h.entries @ phi - e * phi) / scale))

    return CompositionReport(
        ok=bool(ok and steady_res < 1e-10),
        max_pair_distance=float(worst),
        tolerance=tol,
        steady_residual=steady_res,
        steady_eigenvalue=complex(eig_h[k0]),
        factorization_error=fact,
        current_block_error=block,
        gradient_map_error=grad_err,
        null_vector_error=null_err,
        mismatches=mismatches,
    )


@dataclass(frozen=True)
class EpDiagnostics:
    min_gap: float
    condition_number: float
    near_ep: bool
    eigenvalue: complex
    order: int


def ep_order(a: np.ndarray, eigenvalue: complex, rtol: float = 1e-8) -> int:
    """Size of the largest Jordan block at ``eigenvalue``.

    Smallest ``m`` with ``rank((A - E)^m) == rank((A - E)^(m+1))``; ranks use
    the threshold ``rtol * ||A||^m``.
    """
    a = np.asarray(a, complex)
    n = a.shape[0]
    shifted = a - eigenvalue * np.eye(n)
    norm = max(float(np.linalg.norm(a, 2)), 1e-300)
    power = np.eye(n, dtype=complex)
    ranks = [n]
    for m in range(1, n + 1):
        power = power @ shifted
        sv = np.linalg.svd(power, compute_uv=False)
        ranks.append(int(np.sum(sv > rtol * norm**m)))
        if ranks[-1] == ranks[-2]:
            return m - 1
    return n


def detect_ep(matrix: LatticeMatrix, gap_rtol: float = 1e-6, cond_min: float = 1e8,
              rank_rtol: float = 1e-8) -> EpDiagnostics:
    """Exceptional-point proximity and the order of the most degenerate cluster.

    The cluster is the eigenvalue with the most neighbours within
    ``gap_rtol * ||A||``; its mean is used as the coalesced value for
    :func:`ep_order`.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        spec = spectrum(matrix, gap_rtol, cond_min)
    w = spec.eigenvalues
    radius = gap_rtol * max(matrix.norm, 1e-300)
    counts = (np.abs(w[:, None] - w[None, :]) <= radius).sum(axis=1)
    k = int(np.argmax(counts))
    centre = complex(np.mean(w[np.abs(w - w[k]) <= radius]))
    order = ep_order(matrix.entries, centre, rank_rtol)
    return EpDiagnostics(spec.min_gap, spec.condition_number, spec.ep_flag, centre, order)


def hn_open_eigenvalues(j_l: float, j_r: float, L: int) -> np.ndarray:
    m = np.arange(1, L + 1)
    return 2.0 * np.sqrt(complex(j_r * j_l)) * np.cos(np.pi * m / (L + 1))


def hn_periodic_eigenvalues(j_l: float, j_r: float, L: int) -> np.ndarray:
    k = 2.0 * np.pi * np.arange(L) / L
    return (j_l + j_r) * np.sin(k) + 1j * (j_l - j_r) * np.cos(k)


def linearized_rhs(eps, gamma_s: float, speed_c: float, kappa: float, m_bar: float) -> np.ndarray:
    """Right-hand side ``-i h eps + kappa r(eps)`` of the linearised fluctuation dynamics."""
    eps = np.asarray(eps, dtype=float)
    h = build_matrix(MatrixKind.NEUMANN_H, HoppingPair.from_fluctuations(gamma_s, speed_c), eps.size)
    out = (-1j * h.entries @ eps).real
    out[0] += kappa * (m_bar - eps[0])
    out[-1] -= kappa * eps[-1]
    return out


def linearized_generator(params: LatticeParams) -> tuple[np.ndarray, np.ndarray]:
    """Generator ``G`` and source ``s`` with ``d eps/dt = G eps + s`` about the flat ``n_inf`` state.

    Requires ``kappa_l == kappa_r``.
    """
    if params.kappa_l != params.kappa_r:
        raise ValueError("linearisation is defined for kappa_l == kappa_r")
    rates = derive_rates(params)
    kappa, L = params.kappa_l, params.L
    h = build_matrix(MatrixKind.NEUMANN_H, HoppingPair.from_params(params), L).entries
    gen = (-1j * h).real
    gen[0, 0] -= kappa
    gen[-1, -1] -= kappa
    src = np.zeros(L)
    src[0] = kappa * (params.nbar_l + params.nbar_r - 2.0 * rates.n_inf)
    return gen, src
