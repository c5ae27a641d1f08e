"""Adiabatic switching: how fast the time-domain response converges.

On a 4x3 interacting model the switched-on response sigma(eta, T) is
compared with its eta -> 0, T -> infinity limit, and with the analytic
bound on the difference.  The limit with a saturating window equals the
Kubo sum exactly.
"""

import numpy as np

from latticehall import hall
from latticehall.hall import TwistedFamily
from latticehall.models import hofstadter_hubbard
from latticehall.spectra import detect_multiplet, eigensolve

family = TwistedFamily(hofstadter_hubbard(4, 3, (1, 4), V_nn=2.0, N=2))
phi = (0.4, 1.1)
eig = eigensolve(family.hamiltonian(phi))
mult = detect_multiplet(eig, 3)
J1, J2 = family.currents(phi)
print(f"q={mult.q} gap={mult.DeltaE:.3f} Kubo={hall.kubo_sum(J1, J2, mult, eig):+.8f}")
print(f"{'eta':>6} {'T':>6} {'sigma':>12} {'|diff|':>10} {'bound':>10}")
for eta in (0.4, 0.2, 0.1, 0.05):
    for T in (25.0, 50.0, 100.0):
        prm = hall.TimeDomainParams(eta, T, 10, None, (0, 0))
        td = hall.time_domain(*hall.windowed_and_region(family, phi, prm), prm, mult, eig)
        print(f"{eta:6.2f} {T:6.0f} {td.value:+12.8f} {abs(td.value - td.limit):10.2e} {td.switching_bound:10.2e}")
