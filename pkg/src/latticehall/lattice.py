"""Periodic two-dimensional lattice geometry.

Sites carry integer coordinates ``(x1, x2)`` stored in the fundamental domain
``[0, L1) x [0, L2)``.  The linear (Jordan-Wigner) index of a site is the
row-major index ``x1 * L2 + x2``.

A step function along direction ``j`` with cut position ``k`` lives on a torus
only together with a seam.  We measure coordinates relative to the cut inside
the strip ``[k - L//2, k + L - L//2)``: sites with relative coordinate ``>= 0``
are "above" the cut, the others are "below", and the strip edge is the seam.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

Site = tuple[int, int]


@dataclass(frozen=True)
class LatticeSpec:
    """Rectangular periodic lattice with ``L1 x L2`` sites."""

    L1: int
    L2: int

    def __post_init__(self):
        for name in ("L1", "L2"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @property
    def n_sites(self) -> int:
        return self.L1 * self.L2

    @property
    def dims(self) -> tuple[int, int]:
        return (self.L1, self.L2)

    def size(self, direction: int) -> int:
        if direction not in (1, 2):
            raise ValueError(f"direction must be 1 or 2, got {direction!r}")
        return self.L1 if direction == 1 else self.L2

    def index(self, x: Site) -> int:
        x1, x2 = wrap(x, self)
        return x1 * self.L2 + x2

    def coords(self, i: int) -> Site:
        if not 0 <= i < self.n_sites:
            raise IndexError(f"site index {i} outside [0, {self.n_sites})")
        return (i // self.L2, i % self.L2)

    def sites(self) -> list[Site]:
        return [self.coords(i) for i in range(self.n_sites)]

    def coordinate_array(self) -> np.ndarray:
        """``(n_sites, 2)`` integer array of site coordinates in index order."""
        idx = np.arange(self.n_sites)
        return np.stack([idx // self.L2, idx % self.L2], axis=1)


def wrap(x, spec: LatticeSpec) -> Site:
    """Reduce integer coordinates into the fundamental domain."""
    return (int(x[0]) % spec.L1, int(x[1]) % spec.L2)


def _axis_distance(a: int, b: int, L: int) -> int:
    d = (a - b) % L
    return min(d, L - d)


def periodic_distance(x: Site, y: Site, spec: LatticeSpec) -> int:
    """Graph (l1) distance between two sites on the torus."""
    return (_axis_distance(x[0], y[0], spec.L1)
            + _axis_distance(x[1], y[1], spec.L2))


def relative_coordinate(value: int, k: int, L: int) -> int:
    """Coordinate of ``value`` measured from the cut at ``k``.

    The result lies in ``[-(L // 2), L - L // 2)``; negative means below the
    cut.
    """
    half = L // 2
    return (value - k + half) % L - half


@dataclass(frozen=True)
class CutFunction:
    """Step-like weight function used to build charge and twist generators.

    ``kind="step"`` is the plain step ``1 if x_j >= k else 0`` (seam
    convention above).  ``kind="deformed"`` takes the stored values for sites
    closer than ``R0`` to ``anchor`` and falls back to the step value
    everywhere else.
    """

    direction: int
    k: int
    kind: str = "step"
    values: Mapping[Site, float] = field(default_factory=dict)
    anchor: Site | None = None
    R0: float = 3.0

    def __post_init__(self):
        if self.direction not in (1, 2):
            raise ValueError(f"direction must be 1 or 2, got {self.direction!r}")
        if self.kind not in ("step", "deformed"):
            raise ValueError(f"unknown cut kind {self.kind!r}")
        if self.kind == "deformed":
            if self.anchor is None:
                raise ValueError("a deformed cut needs an anchor site")
            if self.R0 <= 0:
                raise ValueError("R0 must be positive")
        object.__setattr__(self, "values", MappingProxyType(dict(self.values)))


def step_value(direction: int, k: int, x: Site, spec: LatticeSpec) -> int:
    L = spec.size(direction)
    return 1 if relative_coordinate(x[direction - 1], k, L) >= 0 else 0


def eval_cut(f: CutFunction, x: Site, spec: LatticeSpec) -> float:
    """Value of the cut function at site ``x``."""
    x = wrap(x, spec)
    base = step_value(f.direction, f.k, x, spec)
    if f.kind == "step":
        return base
    anchor = wrap(f.anchor, spec)
    if periodic_distance(x, anchor, spec) >= f.R0:
        return base
    return float(f.values.get(x, base))


def cut_weights(f: CutFunction, spec: LatticeSpec) -> np.ndarray:
    """Cut function evaluated on every site, in linear index order."""
    return np.array([eval_cut(f, x, spec) for x in spec.sites()], dtype=float)


def deformed_cut(direction: int, k: int, anchor: Site, values: Mapping[Site, float],
                 spec: LatticeSpec, R0: float = 3.0) -> CutFunction:
    """Build a deformed cut, dropping values outside the agreement radius."""
    anchor = wrap(anchor, spec)
    inside = {wrap(x, spec): float(v) for x, v in values.items()
              if periodic_distance(wrap(x, spec), anchor, spec) < R0}
    return CutFunction(direction, k, "deformed", inside, anchor, R0)


@dataclass(frozen=True)
class Region:
    """Square box ``k-M <= x1 <= k+M``, ``l <= x2 <= l+2M`` on the torus."""

    anchor: Site
    M: int
    spec: LatticeSpec

    def __post_init__(self):
        if self.M < 0:
            raise ValueError("region half-width must be nonnegative")
        side = 2 * self.M + 1
        if side > min(self.spec.L1, self.spec.L2):
            raise ValueError(
                f"region side 2M+1={side} exceeds the lattice "
                f"{self.spec.L1}x{self.spec.L2}")

    @property
    def members(self) -> frozenset[Site]:
        k, l = self.anchor
        return frozenset(
            wrap((x1, x2), self.spec)
            for x1 in range(k - self.M, k + self.M + 1)
            for x2 in range(l, l + 2 * self.M + 1))

    def __contains__(self, x) -> bool:
        return wrap(x, self.spec) in self.members

    def __len__(self) -> int:
        return len(self.members)

    def indicator(self) -> np.ndarray:
        out = np.zeros(self.spec.n_sites)
        for x in self.members:
            out[self.spec.index(x)] = 1.0
        return out
