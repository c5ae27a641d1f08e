"""Fixed-N fermionic Fock space and second-quantized operators.

Basis states are bitmasks: bit ``i`` set means site ``i`` (linear index) is
occupied.  Creation operators are ordered by linear index, so
``c_x^dagger c_y`` picks up the sign ``(-1)**(number of occupied sites strictly
between x and y)``.

Hopping terms are stored per bond rather than per site pair.  A bond
``(x, y, d)`` stands for ``t * c_x^dagger c_y`` where the particle moves from
``y`` to ``x`` by the lattice displacement ``d``.  On a torus two different
bonds can join the same pair of sites (e.g. when ``L = 2``), and the
displacement is what tells us which of them crosses a cut line.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .lattice import (CutFunction, LatticeSpec, Site, cut_weights,
                      relative_coordinate, wrap)

HERMITIAN_TOL = 1e-12
ZERO_TOL = 1e-15
MAX_BODY = 4

Bond = tuple[int, int, tuple[int, int]]


class HermiticityError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Basis


@dataclass(frozen=True, eq=False)
class FockBasis:
    """Canonically ordered occupation basis.

    ``N=None`` spans the whole Fock space (all particle numbers); that is only
    used for the small locality diagnostics.
    """

    n_sites: int
    N: int | None
    masks: np.ndarray

    def __post_init__(self):
        self.masks.setflags(write=False)

    @property
    def dim(self) -> int:
        return len(self.masks)

    def index(self, masks) -> np.ndarray:
        """Ordinal positions of ``masks``; raises if any mask is absent."""
        masks = np.asarray(masks, dtype=np.int64)
        pos = np.searchsorted(self.masks, masks)
        pos = np.minimum(pos, self.dim - 1)
        if not np.all(self.masks[pos] == masks):
            raise KeyError("mask not in basis")
        return pos

    def occupations(self) -> np.ndarray:
        """``(dim, n_sites)`` 0/1 array of site occupations."""
        shifts = np.arange(self.n_sites, dtype=np.int64)
        return ((self.masks[:, None] >> shifts) & 1).astype(np.int8)


def build_basis(spec: LatticeSpec | int, N: int | None) -> FockBasis:
    """All occupation masks with ``N`` particles, sorted as integers."""
    n = spec if isinstance(spec, int) else spec.n_sites
    if n > 62:
        raise ValueError("at most 62 sites fit the 64-bit mask representation")
    if N is None:
        if n > 20:
            raise ValueError("full Fock space only supported up to 20 sites")
        return FockBasis(n, None, np.arange(1 << n, dtype=np.int64))
    if not 0 <= N <= n:
        raise ValueError(f"particle number N={N} outside [0, {n}]")
    masks = np.fromiter(
        (sum(1 << i for i in combo) for combo in itertools.combinations(range(n), N)),
        dtype=np.int64, count=math.comb(n, N))
    masks.sort()
    return FockBasis(n, N, masks)


def matrix_element_hop(mask: int, x: int, y: int):
    """Action of ``c_x^dagger c_y`` on a single basis mask.

    Returns ``(new_mask, sign)`` or ``None`` when the result vanishes.
    """
    if not (mask >> y) & 1:
        return None
    if x == y:
        return mask, 1
    if (mask >> x) & 1:
        return None
    lo, hi = min(x, y), max(x, y)
    between = ((1 << hi) - 1) & ~((1 << (lo + 1)) - 1)
    sign = -1 if bin(mask & between).count("1") % 2 else 1
    return mask ^ (1 << x) ^ (1 << y), sign


def _hop_columns(basis: FockBasis, x: int, y: int):
    """Vectorized ``c_x^dagger c_y``: (source rows, target rows, signs)."""
    masks = basis.masks
    occ_y = (masks >> y) & 1
    if x == y:
        src = np.nonzero(occ_y)[0]
        return src, src, np.ones(len(src))
    occ_x = (masks >> x) & 1
    src = np.nonzero((occ_y == 1) & (occ_x == 0))[0]
    m = masks[src]
    lo, hi = min(x, y), max(x, y)
    between = np.int64(((1 << hi) - 1) & ~((1 << (lo + 1)) - 1))
    parity = np.bitwise_count(m & between) & 1
    new = m ^ np.int64((1 << x) | (1 << y))
    return src, basis.index(new), 1.0 - 2.0 * parity


def hop_operator(terms: Iterable[tuple[int, int, complex]], basis: FockBasis) -> sp.csr_array:
    """Sparse matrix of ``sum coeff * c_x^dagger c_y`` over ``(x, y, coeff)``."""
    rows, cols, vals = [], [], []
    for x, y, coeff in terms:
        if coeff == 0:
            continue
        src, dst, sign = _hop_columns(basis, x, y)
        rows.append(dst)
        cols.append(src)
        vals.append(coeff * sign)
    return _assemble(rows, cols, vals, basis.dim)


def _assemble(rows, cols, vals, dim) -> sp.csr_array:
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals).astype(complex)
    else:
        r = c = np.zeros(0, dtype=np.int64)
        v = np.zeros(0, dtype=complex)
    A = sp.coo_array((v, (r, c)), shape=(dim, dim)).tocsr()
    A.sum_duplicates()
    A.data[np.abs(A.data) < ZERO_TOL] = 0
    A.eliminate_zeros()
    return A


def diagonal_operator(values: np.ndarray) -> sp.csr_array:
    return sp.diags_array(np.asarray(values, dtype=complex), format="csr")


def number_diagonal(weights: np.ndarray, basis: FockBasis) -> np.ndarray:
    """Diagonal of ``sum_x w(x) n_x`` in the basis."""
    return basis.occupations() @ np.asarray(weights, dtype=float)


def diagonal_from_cut(f: CutFunction, basis: FockBasis, spec: LatticeSpec) -> sp.csr_array:
    """``sum_x f(x) n_x`` as a diagonal sparse operator."""
    return diagonal_operator(number_diagonal(cut_weights(f, spec), basis))


def number_operator(site: int, basis: FockBasis) -> sp.csr_array:
    return diagonal_operator((basis.masks >> site) & 1)


def total_number(basis: FockBasis) -> sp.csr_array:
    return diagonal_operator(np.bitwise_count(basis.masks))


def hermiticity_defect(A) -> float:
    diff = A - A.conj().T
    if sp.issparse(diff):
        return float(np.abs(diff.data).max()) if diff.nnz else 0.0
    return float(np.abs(diff).max()) if diff.size else 0.0


# ---------------------------------------------------------------------------
# Hamiltonian data


def _minimal_image(x: Site, y: Site, spec: LatticeSpec) -> tuple[int, int]:
    """Displacement from ``y`` to ``x`` taking the shortest way round."""
    out = []
    for a, b, L in zip(x, y, spec.dims):
        d = (a - b) % L
        if d > L // 2:
            d -= L
        out.append(d)
    return tuple(out)


@dataclass(frozen=True)
class HoppingSet:
    """Hermitian set of hopping bonds ``t * c_x^dagger c_y``.

    ``bonds`` maps ``(x, y, d)`` (linear indices plus displacement from ``y``
    to ``x``) to the complex amplitude.  Every bond must come with its
    reverse ``(y, x, -d)`` carrying the conjugate amplitude.
    """

    spec: LatticeSpec
    bonds: Mapping[Bond, complex] = field(default_factory=dict)
    R_hop: int | None = None

    def __post_init__(self):
        bonds = {}
        for (x, y, d), t in self.bonds.items():
            d = (int(d[0]), int(d[1]))
            key = (int(x), int(y), d)
            if abs(t) < ZERO_TOL:
                continue
            bonds[key] = complex(t)
        for (x, y, d), t in bonds.items():
            xc, yc = self.spec.coords(x), self.spec.coords(y)
            if wrap((yc[0] + d[0], yc[1] + d[1]), self.spec) != xc:
                raise ValueError(f"bond {(x, y, d)} displacement does not join its sites")
            rev = bonds.get((y, x, (-d[0], -d[1])))
            if rev is None or abs(rev - np.conj(t)) > HERMITIAN_TOL:
                raise HermiticityError(f"bond {(x, y, d)} lacks a conjugate partner")
        rng = max((abs(d[0]) + abs(d[1]) for (_, _, d) in bonds), default=0)
        if self.R_hop is not None and rng > self.R_hop:
            raise ValueError(f"bond range {rng} exceeds declared range {self.R_hop}")
        object.__setattr__(self, "bonds", MappingProxyType(bonds))
        if self.R_hop is None:
            object.__setattr__(self, "R_hop", rng)

    @classmethod
    def from_pairs(cls, spec: LatticeSpec, pairs: Mapping[tuple[Site, Site], complex],
                   R_hop: int | None = None) -> "HoppingSet":
        """Build from ``{(x_site, y_site): t_xy}`` using minimal-image bonds.

        Only pairs given in one orientation are completed by Hermitian
        conjugation; pairs given in both orientations are checked.
        """
        given = {(wrap(xs, spec), wrap(ys, spec)): complex(t) for (xs, ys), t in pairs.items()}
        bonds: dict[Bond, complex] = {}
        for (xs, ys), t in given.items():
            d = _minimal_image(xs, ys, spec)
            key = (spec.index(xs), spec.index(ys), d)
            rev = (spec.index(ys), spec.index(xs), (-d[0], -d[1]))
            bonds[key] = t
            if rev != key and (ys, xs) not in given:
                bonds[rev] = np.conj(t)
        return cls(spec, bonds, R_hop)

    def __len__(self) -> int:
        return len(self.bonds)

    def items(self):
        return self.bonds.items()

    def dense_single_particle(self) -> np.ndarray:
        """One-body matrix ``h[x, y] = sum over bonds of t``."""
        n = self.spec.n_sites
        h = np.zeros((n, n), dtype=complex)
        for (x, y, _), t in self.bonds.items():
            h[x, y] += t
        return h


@dataclass(frozen=True)
class InteractionSet:
    """Real density-density couplings ``U * n_{x1} ... n_{xI}``."""

    terms: tuple[tuple[tuple[int, ...], float], ...] = ()

    def __post_init__(self):
        clean = []
        for sites, U in self.terms:
            sites = tuple(int(s) for s in sites)
            if not 1 <= len(sites) <= MAX_BODY:
                raise ValueError(f"interaction body count {len(sites)} outside [1, {MAX_BODY}]")
            if np.iscomplexobj(U) and np.imag(U) != 0:
                raise ValueError("interaction couplings must be real")
            clean.append((sites, float(np.real(U))))
        object.__setattr__(self, "terms", tuple(clean))

    def diagonal(self, basis: FockBasis) -> np.ndarray:
        out = np.zeros(basis.dim)
        for sites, U in self.terms:
            m = np.int64(sum(1 << s for s in set(sites)))
            out += U * ((basis.masks & m) == m)
        return out


def build_hamiltonian(hoppings: HoppingSet, interactions: InteractionSet,
                      basis: FockBasis) -> sp.csr_array:
    """Hamiltonian restricted to the particle-number sector of ``basis``."""
    if hoppings.spec.n_sites != basis.n_sites:
        raise ValueError("basis and lattice have different site counts")
    for sites, _ in interactions.terms:
        if max(sites) >= basis.n_sites:
            raise ValueError("interaction refers to a site outside the lattice")
    H = hop_operator(((x, y, t) for (x, y, _), t in hoppings.items()), basis)
    H = H + diagonal_operator(interactions.diagonal(basis))
    H = sp.csr_array(H)
    defect = hermiticity_defect(H)
    if defect > HERMITIAN_TOL:
        raise HermiticityError(f"Hamiltonian not Hermitian (defect {defect:.2e})")
    return H


# ---------------------------------------------------------------------------
# Twists and gauge moves


@dataclass(frozen=True)
class Twist:
    direction: int
    k: int
    phi: float


@dataclass(frozen=True)
class TwistConfig:
    """At most one twisted cut per lattice direction."""

    twists: tuple[Twist, ...] = ()

    def __post_init__(self):
        twists = tuple(t if isinstance(t, Twist) else Twist(*t) for t in self.twists)
        dirs = [t.direction for t in twists]
        if any(d not in (1, 2) for d in dirs):
            raise ValueError("twist direction must be 1 or 2")
        if len(set(dirs)) != len(dirs):
            raise ValueError("duplicate twist direction")
        object.__setattr__(self, "twists", twists)

    @classmethod
    def boundary(cls, phi1: float, phi2: float, k1: int = 0, k2: int = 0) -> "TwistConfig":
        return cls((Twist(1, k1, phi1), Twist(2, k2, phi2)))


def crossing(bond: Bond, direction: int, k: int, spec: LatticeSpec) -> int:
    """How the hop of ``bond`` crosses the cut line at ``k``.

    Returns +1 when the particle moves from below to above the cut, -1 for
    above to below, and 0 when the cut line is not crossed (including
    crossings of the seam).
    """
    _, y, d = bond
    L = spec.size(direction)
    ry = relative_coordinate(spec.coords(y)[direction - 1], k, L)
    rx = ry + d[direction - 1]
    if ry < 0 <= rx:
        return 1
    if rx < 0 <= ry:
        return -1
    return 0


def apply_twist(hoppings: HoppingSet, twist: TwistConfig) -> HoppingSet:
    """Multiply bonds crossing each cut by ``exp(+-i phi)``.

    Hops from above the cut to below it get ``exp(i phi)``; the reverse hops
    get ``exp(-i phi)``.  This equals conjugation by ``exp(-i phi theta)``
    with the seam bonds left alone.
    """
    spec = hoppings.spec
    bonds = dict(hoppings.bonds)
    for tw in twist.twists:
        if tw.phi == 0:
            continue
        for bond in bonds:
            c = crossing(bond, tw.direction, tw.k, spec)
            if c:
                bonds[bond] *= np.exp(-1j * c * tw.phi)
    return HoppingSet(spec, bonds, hoppings.R_hop)


def line_weights(direction: int, line: int, spec: LatticeSpec) -> np.ndarray:
    coords = spec.coordinate_array()[:, direction - 1]
    return (coords == line % spec.size(direction)).astype(float)


def gauge_phases(direction: int, k: int, phi: float, basis: FockBasis,
                 spec: LatticeSpec) -> np.ndarray:
    """Diagonal of ``exp(-i phi sum_{x_j = k-1} n_x)``."""
    count = number_diagonal(line_weights(direction, k - 1, spec), basis)
    return np.exp(-1j * phi * count)


def gauge_move(operand, direction: int, k: int, phi: float, basis: FockBasis,
               spec: LatticeSpec):
    """Move a twisted cut from ``k`` to ``k - 1``.

    States transform as ``exp(-i phi D) psi`` and operators as
    ``exp(-i phi D) A exp(i phi D)`` with ``D`` the number of particles on the
    line ``x_j = k - 1``.
    """
    u = gauge_phases(direction, k, phi, basis, spec)
    if sp.issparse(operand):
        return sp.csr_array(sp.diags_array(u) @ operand @ sp.diags_array(u.conj()))
    operand = np.asarray(operand)
    if operand.ndim == 2 and operand.shape == (basis.dim, basis.dim):
        return u[:, None] * operand * u.conj()[None, :]
    # a state vector or a (dim, q) frame of states
    return u.reshape((-1,) + (1,) * (operand.ndim - 1)) * operand


def restrict_hoppings(hoppings: HoppingSet, sites: Iterable[int]) -> HoppingSet:
    """Keep only bonds with both ends in ``sites``."""
    keep = set(int(s) for s in sites)
    bonds = {b: t for b, t in hoppings.items() if b[0] in keep and b[1] in keep}
    return HoppingSet(hoppings.spec, bonds, hoppings.R_hop)


def restrict_interactions(interactions: InteractionSet, sites: Iterable[int]) -> InteractionSet:
    keep = set(int(s) for s in sites)
    return InteractionSet(tuple((s, U) for s, U in interactions.terms if set(s) <= keep))


def sites_of(indices: Sequence[int]) -> int:
    return sum(1 << int(i) for i in indices)
