"""Spectra of the linearised fluctuation matrix: the stationary mode stays at
zero while the remaining modes coalesce into an exceptional point at c = gamma_s
without closing the dissipative gap."""

import warnings

import numpy as np

from asip.spectra import HoppingPair, build_matrix, detect_ep, spectrum, verify_spectral_composition

np.set_printoptions(precision=3, suppress=True, linewidth=120)
gs, L = 0.5, 8

for c in (0.3, 0.5, 0.7):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        m = build_matrix("neumann_h", HoppingPair.from_fluctuations(gs, c), L)
        s = spectrum(m)
        ep = detect_ep(m)
    rep = verify_spectral_composition(gs, c, L)
    print(f"c = {c}: cond = {s.condition_number:.2e}, EP order {ep.order}, composition {rep.ok}")
    print("   eigenvalues:", s.eigenvalues)

print("\nperiodic Hatano-Nelson chain, eigenvalues on an ellipse:")
w = spectrum(build_matrix("hn_periodic", (1.0, 0.4), 12)).eigenvalues
print("   (Re/1.4)^2 + (Im/0.6)^2 =", (w.real / 1.4) ** 2 + (w.imag / 0.6) ** 2)
