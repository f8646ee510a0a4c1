"""Stationary occupations of a 15-site chain as the hopping asymmetry grows.

A symmetric chain carries a linear gradient.  Weak asymmetry confines the
gradient to a boundary layer of width xi; past the critical asymmetry the layer
turns into an alternating (zigzag) pattern.
"""

import numpy as np

from asip.analytic import steady_profile, diffusive_profile
from asip.model import LatticeParams, derive_rates

np.set_printoptions(precision=2, suppress=True, linewidth=120)

base = LatticeParams(L=15, gamma_l=1.0, kappa_l=1.0, kappa_r=1.0, nbar_r=10.0)
print(f"critical asymmetry gamma_a_crit = {derive_rates(base).gamma_a_crit:.4f}\n")

for ga in (0.0, 0.05, 0.17, 1.0):
    p = base.replace(gamma_r=1.0 - ga)
    prof = diffusive_profile(p) if ga == 0 else steady_profile(p)
    r = derive_rates(p)
    print(f"gamma_a = {ga:4}: phase {r.phase.value:9s} xi = {r.xi:6.3g}  J = {prof.current:7.4f}")
    print("   n_p =", prof.occupations)

print("\nballistic current: J barely moves with L once L >> xi")
for L in (20, 40, 80):
    p = base.replace(L=L, gamma_r=0.5)
    print(f"   L = {L:3d}: J = {steady_profile(p).current:.10f}")
