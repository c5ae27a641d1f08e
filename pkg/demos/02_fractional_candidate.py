"""Threefold ground multiplet with strong repulsion: p/q = 1/3.

Two fermions at flux 1/6 on a 6x6 torus with nearest-neighbour repulsion
V=5 have an exactly degenerate, gapped triplet at every twist.  The
invariant of the rank-3 multiplet bundle is p = 1, so the averaged Hall
conductance is 1/(2 pi * 3).  This takes about a minute.
"""

import numpy as np

from latticehall import hall
from latticehall.hall import TwistedFamily
from latticehall.models import hofstadter_hubbard
from latticehall.spectra import detect_multiplet, eigensolve

model = hofstadter_hubbard(6, 6, (1, 6), V_nn=5.0, N=2)
family = TwistedFamily(model)
state = hall.average_over_flux(family, grid=12, q_hint=3)
print(f"q = {state.q}, min gap {state.min_gap:.4f}, max splitting {state.max_spread:.1e}")
print(f"p = {state.p}, 2 pi sigma_bar = p/q = {state.p / state.q:.6f}")
print(f"grid-averaged Kubo x 2 pi = {2 * np.pi * state.kubo_grid.mean():.6f}")

# the candidate point from the literature does not produce a threefold multiplet here
preset = hofstadter_hubbard(4, 6, (1, 4), V_nn=2.0, N=3)
m = detect_multiplet(eigensolve(TwistedFamily(preset).hamiltonian((0.0, 0.0)), 12))
print(f"flux 1/4, 4x6, N=3, V=2: detector reports q={m.q}, gap {m.DeltaE:.4f}")
