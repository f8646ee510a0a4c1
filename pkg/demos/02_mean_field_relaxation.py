"""Integrate the mean-field equations from an empty lattice and watch the
zigzag boundary form, then launch a shock front into an empty region."""

import numpy as np

from asip.analytic import shock_wave, steady_profile
from asip.meanfield import IntegratorConfig, evolve, relax
from asip.model import LatticeParams

np.set_printoptions(precision=3, suppress=True, linewidth=120)

p = LatticeParams(L=15, gamma_l=1.0, gamma_r=0.0, nbar_r=10.0)
prof, run = relax(p)
print(f"relaxed in {run.steps} steps to t = {run.final.t:.1f}")
print("mean-field :", prof.occupations)
print("analytic   :", steady_profile(p).occupations)
print(f"max conservation error per step {run.max_conservation_error:.1e}\n")

# shock front: the right reservoir sustains a bulk density of n_sw = 2
n_sw = 2.0
p = LatticeParams(L=200, gamma_l=1.0, gamma_r=0.8, nbar_r=n_sw + 0.2 * n_sw * (1 + n_sw))
n0 = np.where(np.arange(1, 201) >= 190, n_sw, 0.0)
run = evolve(n0, p, IntegratorConfig(t_max=200.0, stop_at_steady=False, record=True))
print(f"shock front, predicted speed {shock_wave(n_sw, p).speed:.3f} sites per unit time")
for s in run.states[:: max(1, len(run.states) // 8)]:
    front = int(np.nonzero(s.n >= 0.5 * n_sw)[0][0]) + 1
    print(f"   t = {s.t:6.1f}: front near site {front}")
