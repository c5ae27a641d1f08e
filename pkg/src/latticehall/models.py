"""Model presets: Hofstadter, Hofstadter-Hubbard, atomic insulator, chains."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .lattice import LatticeSpec
from .manybody import (FockBasis, HoppingSet, InteractionSet, TwistConfig,
                       apply_twist, build_basis, build_hamiltonian)


@dataclass(frozen=True)
class HamiltonianSpec:
    """Complete problem statement: lattice, hoppings, interactions, filling."""

    lattice: LatticeSpec
    hoppings: HoppingSet
    interactions: InteractionSet
    N: int | None
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def basis(self) -> FockBasis:
        return build_basis(self.lattice, self.N)

    def hamiltonian(self, twist: TwistConfig | None = None, basis: FockBasis | None = None):
        hops = self.hoppings if twist is None else apply_twist(self.hoppings, twist)
        return build_hamiltonian(hops, self.interactions, basis or self.basis())

    def twisted_hoppings(self, twist: TwistConfig | None) -> HoppingSet:
        return self.hoppings if twist is None else apply_twist(self.hoppings, twist)


def _flux(flux) -> Fraction:
    if isinstance(flux, (tuple, list)):
        return Fraction(int(flux[0]), int(flux[1]))
    return Fraction(flux).limit_denominator(1000)


def _nn_bonds(spec: LatticeSpec):
    """Nearest-neighbour bonds ``(x, y, d)`` with ``d`` the positive unit step."""
    for x1 in range(spec.L1):
        for x2 in range(spec.L2):
            y = spec.index((x1, x2))
            if spec.L1 > 1:
                yield spec.index((x1 + 1, x2)), y, (1, 0), x1
            if spec.L2 > 1:
                yield spec.index((x1, x2 + 1)), y, (0, 1), x1


def hofstadter_hoppings(spec: LatticeSpec, flux, t: float = 1.0) -> HoppingSet:
    """Landau-gauge Peierls hoppings with flux ``n/m`` per plaquette.

    The matrix element ``t_xy`` with ``y = x + e2`` is ``-t exp(2 pi i (n/m) x1)``;
    bonds along ``e1`` carry ``-t``.  The product of matrix elements
    ``t_{x0 x1} t_{x1 x2} t_{x2 x3} t_{x3 x0}`` around a counter-clockwise
    plaquette is ``exp(2 pi i n/m)``.  With this orientation the lowest
    band of flux ``1/m`` has Chern number ``+1``.
    """
    alpha = _flux(flux)
    if (spec.L1 * alpha).denominator != 1:
        raise ValueError(
            f"flux {alpha} is incommensurate with L1={spec.L1}: need m | L1")
    bonds = {}
    for x, y, d, x1 in _nn_bonds(spec):
        amp = -t
        if d == (0, 1):
            amp = -t * np.exp(-2j * np.pi * float(alpha) * x1)
        bonds[(x, y, d)] = bonds.get((x, y, d), 0) + amp
        rev = (y, x, (-d[0], -d[1]))
        bonds[rev] = bonds.get(rev, 0) + np.conj(amp)
    return HoppingSet(spec, bonds, R_hop=1)


def hofstadter(L1: int, L2: int, flux=(0, 1), t: float = 1.0, N: int | None = None) -> HamiltonianSpec:
    spec = LatticeSpec(L1, L2)
    alpha = _flux(flux)
    return HamiltonianSpec(spec, hofstadter_hoppings(spec, alpha, t), InteractionSet(), N,
                           "hofstadter", {"L1": L1, "L2": L2, "flux": [alpha.numerator, alpha.denominator],
                                          "t": t, "N": N})


def nn_pairs(spec: LatticeSpec):
    """Unordered nearest-neighbour site pairs, one per bond."""
    for x, y, _, _ in _nn_bonds(spec):
        yield (y, x)


def hofstadter_hubbard(L1: int, L2: int, flux=(1, 4), t: float = 1.0, V_nn: float = 2.0,
                       N: int = 3) -> HamiltonianSpec:
    """Hofstadter hopping plus nearest-neighbour repulsion ``V n_x n_y``."""
    if V_nn < 0:
        raise ValueError("V_nn must be nonnegative")
    base = hofstadter(L1, L2, flux, t, N)
    terms = tuple((pair, V_nn) for pair in nn_pairs(base.lattice)) if V_nn else ()
    params = dict(base.params, V_nn=V_nn)
    return HamiltonianSpec(base.lattice, base.hoppings, InteractionSet(terms), N,
                           "hofstadter_hubbard", params)


def atomic_insulator(L1: int, L2: int, potentials, N: int, unique: bool = True) -> HamiltonianSpec:
    """No hopping, onsite potentials only."""
    spec = LatticeSpec(L1, L2)
    pots = np.asarray(potentials, dtype=float).reshape(-1)
    if pots.size != spec.n_sites:
        raise ValueError(f"need {spec.n_sites} potentials, got {pots.size}")
    srt = np.sort(pots)
    if unique and 0 < N < spec.n_sites and srt[N - 1] == srt[N]:
        raise ValueError("degenerate potential minima: ground state is not unique")
    terms = tuple(((i,), float(u)) for i, u in enumerate(pots) if u != 0)
    return HamiltonianSpec(spec, HoppingSet(spec, {}), InteractionSet(terms), N,
                           "atomic_insulator", {"L1": L1, "L2": L2, "potentials": pots.tolist(), "N": N})


def staggered_insulator(L1: int, L2: int, t: float = 1.0, W: float = 4.0, V_nn: float = 0.0,
                        N: int = 2) -> HamiltonianSpec:
    """Square-lattice hopping on a checkerboard potential ``+-W/2``."""
    spec = LatticeSpec(L1, L2)
    bonds = {}
    for x, y, d, _ in _nn_bonds(spec):
        bonds[(x, y, d)] = bonds.get((x, y, d), 0) - t
        rev = (y, x, (-d[0], -d[1]))
        bonds[rev] = bonds.get(rev, 0) - t
    pots = [0.5 * W * (-1) ** (x1 + x2) for x1, x2 in spec.sites()]
    terms = [((i,), p) for i, p in enumerate(pots)]
    if V_nn:
        terms += [(pair, V_nn) for pair in nn_pairs(spec)]
    return HamiltonianSpec(spec, HoppingSet(spec, bonds, R_hop=1), InteractionSet(tuple(terms)), N,
                           "staggered_insulator", {"L1": L1, "L2": L2, "t": t, "W": W, "V_nn": V_nn, "N": N})


def chain(L: int, t: float = 1.0, V_nn: float = 0.0, N: int | None = None,
          periodic: bool = False) -> HamiltonianSpec:
    """One-dimensional chain on an ``L x 1`` lattice."""
    spec = LatticeSpec(L, 1)
    bonds = {}
    last = L if periodic else L - 1
    for i in range(last):
        j = (i + 1) % L
        bonds[(j, i, (1, 0))] = -t
        bonds[(i, j, (-1, 0))] = -t
    terms = tuple(((i, (i + 1) % L), V_nn) for i in range(last)) if V_nn else ()
    return HamiltonianSpec(spec, HoppingSet(spec, bonds, R_hop=1), InteractionSet(terms), N,
                           "chain", {"L": L, "t": t, "V_nn": V_nn, "N": N, "periodic": periodic})


PRESETS = {
    "hofstadter": hofstadter,
    "hofstadter_hubbard": hofstadter_hubbard,
    "atomic_insulator": atomic_insulator,
    "staggered_insulator": staggered_insulator,
    "chain": chain,
}


def plaquette_phases(hoppings: HoppingSet) -> np.ndarray:
    """Phase of ``t_{x0 x1} t_{x1 x2} t_{x2 x3} t_{x3 x0}`` for every plaquette.

    ``x0 .. x3`` run counter-clockwise from the lower-left corner.
    """
    spec = hoppings.spec
    out = np.zeros((spec.L1, spec.L2), dtype=complex)

    def amp(a, b, d):
        return hoppings.bonds.get((spec.index(b), spec.index(a), d), 0)

    for x1 in range(spec.L1):
        for x2 in range(spec.L2):
            p0 = (x1, x2)
            p1 = (x1 + 1, x2)
            p2 = (x1 + 1, x2 + 1)
            p3 = (x1, x2 + 1)
            prod = (amp(p0, p1, (1, 0)) * amp(p1, p2, (0, 1))
                    * amp(p2, p3, (-1, 0)) * amp(p3, p0, (0, -1)))
            out[x1, x2] = np.conj(prod) / abs(prod) if abs(prod) else 0
    return out


def well_insulator(L1: int, L2: int, wells=((0, 0),), W: float = 4.0, t: float = 1.0,
                   V_nn: float = 0.0, N: int | None = None) -> HamiltonianSpec:
    """Nearest-neighbour hopping with attractive wells ``-W`` that bind one particle each.

    ``N`` defaults to the number of wells; for ``W`` well above the band
    edge the ground state is unique and gapped.
    """
    spec = LatticeSpec(L1, L2)
    base = hofstadter_hoppings(spec, 0, t)
    terms = [((spec.index(w),), -float(W)) for w in wells]
    if V_nn:
        terms += [(pair, V_nn) for pair in nn_pairs(spec)]
    N = len(wells) if N is None else N
    return HamiltonianSpec(spec, base, InteractionSet(tuple(terms)), N, "well_insulator",
                           {"L1": L1, "L2": L2, "wells": [list(w) for w in wells], "W": W, "t": t,
                            "V_nn": V_nn, "N": N})


PRESETS["well_insulator"] = well_insulator
