"""Current operators, time evolution, correlations, energy filters and
Lieb-Robinson diagnostics.

Every time evolution goes through an exact eigendecomposition; nothing here
integrates an equation of motion step by step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import least_squares
from scipy.sparse.linalg import LinearOperator, eigsh

from .lattice import LatticeSpec, Region, step_value
from .manybody import (FockBasis, HoppingSet, crossing, diagonal_operator,
                       hop_operator, number_diagonal, number_operator)
from .spectra import EigenDecomposition, GroundMultiplet

NORM_TOL = 1e-8
DENOMINATOR_FLOOR = 1e-14
QUADRATURE_POINTS = 400
QUADRATURE_TOL = 1e-6
MAX_EXPONENT = 700.0


def _dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A)


# ---------------------------------------------------------------------------
# Currents


@dataclass(frozen=True)
class CurrentSpec:
    """Which current to build.

    ``window=(l, N)`` keeps bonds in rows ``l-N .. l+N`` and is only
    allowed for ``direction=1``.  ``deformation=(alpha, x)`` adds
    ``i alpha [H, n_x]``.
    """

    direction: int
    k: int
    window: tuple[int, int] | None = None
    deformation: tuple[float, int] | None = None

    def __post_init__(self):
        if self.direction not in (1, 2):
            raise ValueError("direction must be 1 or 2")
        if self.window is not None:
            if self.direction != 1:
                raise ValueError("a window is only defined for direction 1")
            if self.window[1] < 0:
                raise ValueError("window half-width must be nonnegative")
        if self.deformation is not None and self.direction != 1:
            raise ValueError("deformed currents are only defined for direction 1")


def _current_from_bonds(hoppings: HoppingSet, weights, basis: FockBasis) -> sp.csr_array:
    """``sum_b -i w_b t_b c_x^dagger c_y`` over bonds with nonzero weight."""
    terms = [(x, y, -1j * w * t) for ((x, y, _), t), w in zip(hoppings.items(), weights) if w]
    return hop_operator(terms, basis)


def crossing_weights(hoppings: HoppingSet, direction: int, k: int) -> list[int]:
    return [crossing(b, direction, k, hoppings.spec) for b in hoppings.bonds]


def local_current(spec: CurrentSpec, hoppings: HoppingSet, basis: FockBasis) -> sp.csr_array:
    """Current through the cut line ``x_j = k`` (seam bonds excluded).

    Equal to the derivative of the Hamiltonian with respect to a twist
    angle placed on the same cut.
    """
    if spec.window is not None or spec.deformation is not None:
        raise ValueError("use windowed_current or deformed_current")
    return _current_from_bonds(hoppings, crossing_weights(hoppings, spec.direction, spec.k), basis)


def seam_current(spec: CurrentSpec, hoppings: HoppingSet, basis: FockBasis) -> sp.csr_array:
    """Current through the seam that pairs with the cut ``k``.

    ``local_current + seam_current`` is ``i[H, theta]`` for the step
    function ``theta`` of the cut.
    """
    lat = hoppings.spec
    weights = []
    for bond in hoppings.bonds:
        x, y, _ = bond
        jump = (step_value(spec.direction, spec.k, lat.coords(x), lat)
                - step_value(spec.direction, spec.k, lat.coords(y), lat))
        weights.append(jump - crossing(bond, spec.direction, spec.k, lat))
    return _current_from_bonds(hoppings, weights, basis)


def window_rows(l: int, half_width: int, L2: int) -> set[int]:
    if 2 * half_width + 1 >= L2:
        return set(range(L2))
    return {(l + d) % L2 for d in range(-half_width, half_width + 1)}


def windowed_current(spec: CurrentSpec, hoppings: HoppingSet, basis: FockBasis) -> sp.csr_array:
    """Cut current keeping only bonds with both ends in the row window.

    A window at least as tall as the lattice keeps every row.
    """
    if spec.window is None:
        raise ValueError("CurrentSpec has no window")
    lat = hoppings.spec
    rows = window_rows(spec.window[0], spec.window[1], lat.L2)
    weights = []
    for bond in hoppings.bonds:
        x, y, _ = bond
        inside = lat.coords(x)[1] in rows and lat.coords(y)[1] in rows
        weights.append(crossing(bond, 1, spec.k, lat) if inside else 0)
    return _current_from_bonds(hoppings, weights, basis)


def commutator(A, B):
    return A @ B - B @ A


def deformed_current(spec: CurrentSpec, hoppings: HoppingSet, H, basis: FockBasis) -> sp.csr_array:
    """``J(k) + i alpha [H, n_x]``."""
    if spec.deformation is None:
        raise ValueError("CurrentSpec has no deformation")
    alpha, x = spec.deformation
    base = CurrentSpec(spec.direction, spec.k, spec.window)
    J = (windowed_current(base, hoppings, basis) if spec.window is not None
         else local_current(base, hoppings, basis))
    if alpha == 0:
        return J
    n_x = number_operator(int(x), basis)
    return sp.csr_array(J + 1j * alpha * commutator(sp.csr_array(H), n_x))


def build_current(spec: CurrentSpec, hoppings: HoppingSet, basis: FockBasis, H=None):
    if spec.deformation is not None:
        if H is None:
            raise ValueError("a deformed current needs the Hamiltonian")
        return deformed_current(spec, hoppings, H, basis)
    if spec.window is not None:
        return windowed_current(spec, hoppings, basis)
    return local_current(spec, hoppings, basis)


def region_charge(region: Region, basis: FockBasis) -> sp.csr_array:
    return diagonal_operator(number_diagonal(region.indicator(), basis))


def region_current(region: Region, hoppings: HoppingSet, basis: FockBasis) -> sp.csr_array:
    """``i[H, chi(region)]``: current leaving the region, all edges included."""
    ind = region.indicator()
    weights = [ind[x] - ind[y] for (x, y, _) in hoppings.bonds]
    return _current_from_bonds(hoppings, weights, basis)


def saturated_region_current(l: int, hoppings: HoppingSet, basis: FockBasis) -> sp.csr_array:
    """Region current for a box grown to the half plane ``x2 >= l``.

    Only the bottom edge survives, which is the direction-2 cut current
    at ``l``.
    """
    return local_current(CurrentSpec(2, l), hoppings, basis)


def half_plane_charge(l: int, basis: FockBasis, spec: LatticeSpec) -> sp.csr_array:
    """Charge operator of the half plane ``x2 >= l`` (seam convention)."""
    w = np.array([step_value(2, l, x, spec) for x in spec.sites()], dtype=float)
    return diagonal_operator(number_diagonal(w, basis))


# ---------------------------------------------------------------------------
# Norms and time evolution


def operator_norm(A, tol: float = NORM_TOL, seed: int = 7) -> float:
    """Largest singular value.

    Small operators use a dense SVD; larger ones use Lanczos on ``A^dagger A``,
    converged to the relative tolerance ``tol``.
    """
    n = A.shape[0]
    if n == 0:
        return 0.0
    if n <= 512:
        return float(np.linalg.norm(_dense(A), 2))
    AH = A.conj().T

    def mv(v):
        return AH @ (A @ v)

    op = LinearOperator((n, n), matvec=mv, dtype=complex)
    v0 = np.random.default_rng(seed).standard_normal(n).astype(complex)
    w = eigsh(op, k=1, which="LA", v0=v0, tol=tol, return_eigenvectors=False)
    return float(np.sqrt(max(w[0], 0.0)))


def to_eigenbasis(A, eig: EigenDecomposition) -> np.ndarray:
    V = eig.vectors
    return V.conj().T @ (A @ V)


def from_eigenbasis(A_e: np.ndarray, eig: EigenDecomposition) -> np.ndarray:
    V = eig.vectors
    return V @ A_e @ V.conj().T


def _require_full(eig: EigenDecomposition):
    if not eig.complete:
        raise ValueError("a complete eigendecomposition is required")


def heisenberg(A, eig: EigenDecomposition, t: complex) -> np.ndarray:
    """``exp(iHt) A exp(-iHt)``; ``t`` may be complex.

    Raises
    ------
    OverflowError
        If an imaginary part of ``t`` makes some weight exceed ``exp(700)``.
    """
    _require_full(eig)
    if t == 0:
        return _dense(A).astype(complex)
    E = eig.values
    dE = E[:, None] - E[None, :]
    expo = 1j * dE * t
    worst = float(np.max(expo.real)) if expo.size else 0.0
    if worst > MAX_EXPONENT:
        raise OverflowError(f"imaginary-time weight exp({worst:.1f}) overflows")
    return from_eigenbasis(to_eigenbasis(A, eig) * np.exp(expo), eig)


def evolution(eig: EigenDecomposition, t: float) -> np.ndarray:
    """``exp(-iHt)`` as a dense matrix."""
    _require_full(eig)
    V = eig.vectors
    return (V * np.exp(-1j * eig.values * t)) @ V.conj().T


# ---------------------------------------------------------------------------
# Correlations


def _split(eig: EigenDecomposition, m: GroundMultiplet):
    _require_full(eig)
    q = m.q
    return eig.vectors[:, :q], eig.values[:q], eig.vectors[:, q:], eig.values[q:]


def corr(A, B, m: GroundMultiplet, eig: EigenDecomposition) -> complex:
    """``<<A;B>>``: excitation sum weighted by the inverse squared gap."""
    V0, E0, Vx, Ex = _split(eig, m)
    A0n = V0.conj().T @ (A @ Vx)
    Bn0 = Vx.conj().T @ (B @ V0)
    w = 1.0 / (E0[:, None] - Ex[None, :]) ** 2
    return complex(np.sum(A0n * Bn0.T * w) / m.q)


# ---------------------------------------------------------------------------
# Energy filter


@dataclass(frozen=True, eq=False)
class FilterSpec:
    a0: object
    support: frozenset
    n_sites: int
    K: float
    center: float
    T1: float | None = None
    omega: frozenset | None = None

    def __post_init__(self):
        if self.K <= 0:
            raise ValueError("K must be positive")
        if len(self.support) >= self.n_sites:
            raise ValueError("a0 must be supported on a strict subset of the lattice")
        if self.T1 is not None and self.T1 <= 0:
            raise ValueError("T1 must be positive")
        if self.omega is not None and not set(self.support) <= set(self.omega):
            raise ValueError("filter region must contain the support of a0")


@dataclass(frozen=True, eq=False)
class FilterResult:
    filtered: np.ndarray
    truncated: np.ndarray | None
    deviation: float | None
    bound: float | None
    quadrature_error: float | None


def gaussian_weights(dE: np.ndarray, K: float, center: float) -> np.ndarray:
    return np.exp(-0.5 * K * (dE - center) ** 2)


def truncated_weights(dE: np.ndarray, K: float, center: float, T1: float,
                      points: int = QUADRATURE_POINTS) -> tuple[np.ndarray, float]:
    """Trapezoid quadrature of ``(2 pi K)^-1/2 int_{-T1}^{T1} e^{i(dE-c)t - t^2/2K} dt``.

    Returns the weights and a Richardson error estimate from halving the
    step.
    """
    nu = (np.asarray(dE) - center).reshape(-1)

    def trap(n):
        t = np.linspace(-T1, T1, n)
        f = np.exp(1j * np.outer(nu, t) - t ** 2 / (2 * K))
        return np.trapezoid(f, t, axis=1) / np.sqrt(2 * np.pi * K)

    coarse = trap(points)
    fine = trap(2 * points - 1)
    err = float(np.max(np.abs(fine - coarse)) / 3) if nu.size else 0.0
    return (fine + (fine - coarse) / 3).reshape(np.shape(dE)), err


def energy_filter(fs: FilterSpec, eig: EigenDecomposition,
                  eig_omega: EigenDecomposition | None = None,
                  quad_tol: float = QUADRATURE_TOL, points: int = QUADRATURE_POINTS) -> FilterResult:
    """Gaussian energy filter in spectral form, plus the truncated version.

    ``eig_omega`` is the decomposition of the Hamiltonian restricted to
    ``fs.omega``; it drives the truncated filter when given.
    """
    _require_full(eig)
    E = eig.values
    a_e = to_eigenbasis(fs.a0, eig)
    filtered_e = a_e * gaussian_weights(E[:, None] - E[None, :], fs.K, fs.center)
    filtered = from_eigenbasis(filtered_e, eig)
    if fs.T1 is None:
        return FilterResult(filtered, None, None, None, None)
    ev = eig if eig_omega is None else eig_omega
    _require_full(ev)
    Ew = ev.values
    b_e = to_eigenbasis(fs.a0, ev)
    w, err = truncated_weights(Ew[:, None] - Ew[None, :], fs.K, fs.center, fs.T1, points)
    if err > quad_tol:
        raise ValueError(f"quadrature error estimate {err:.2e} above tolerance {quad_tol:.0e}; "
                         "increase the number of points")
    truncated = from_eigenbasis(b_e * w, ev)
    dev = operator_norm(filtered - truncated)
    bound = operator_norm(fs.a0) * np.exp(-fs.T1 ** 2 / (2 * fs.K))
    return FilterResult(filtered, truncated, dev, float(bound), err)


def excitation_ratio(a, H, m: GroundMultiplet) -> float:
    """``w0(a^dagger (1-P0) [H, a]) / w0(a^dagger (1-P0) a)``."""
    V = m.frame
    aV = a @ V
    perp = aV - V @ (V.conj().T @ aV)
    HaV = H @ aV - aV * m.energies[None, :]
    den = np.vdot(perp, aV).real / m.q
    if den <= DENOMINATOR_FLOOR:
        raise ValueError("perturbation creates no excitation (vanishing denominator)")
    num = np.vdot(perp, HaV) / m.q
    return float(num.real / den)


# ---------------------------------------------------------------------------
# Locality


@dataclass(frozen=True)
class EvolutionGapCheck:
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    tolerance: float

    @property
    def holds(self) -> bool:
        return bool(np.all(self.lhs <= self.rhs * (1 + self.tolerance) + 1e-12))


def restricted_evolution_gap(A, support: Iterable[int], omega: Iterable[int],
                             eig_full: EigenDecomposition, eig_omega: EigenDecomposition,
                             H_full, H_omega, t_grid: Sequence[float],
                             sub_points: int = 101, tol: float = 1e-3) -> EvolutionGapCheck:
    """Compare evolution under the full and the restricted Hamiltonian.

    ``lhs(t) = |A(t) - A_Omega(t)|`` and
    ``rhs(t) = int_0^t |[H - H_Omega, A_Omega(t-s)]| ds`` by the trapezoid rule
    on ``sub_points`` nodes.
    """
    if not set(support) <= set(omega):
        raise ValueError("support of A is not contained in the region")
    dH = _dense(H_full) - _dense(H_omega)
    A_o = to_eigenbasis(A, eig_omega)
    A_f = to_eigenbasis(A, eig_full)
    Eo, Ef = eig_omega.values, eig_full.values

    def a_omega(t):
        return from_eigenbasis(A_o * np.exp(1j * (Eo[:, None] - Eo[None, :]) * t), eig_omega)

    lhs, rhs = [], []
    for t in t_grid:
        if t == 0:
            lhs.append(0.0)
            rhs.append(0.0)
            continue
        At = from_eigenbasis(A_f * np.exp(1j * (Ef[:, None] - Ef[None, :]) * t), eig_full)
        lhs.append(operator_norm(At - a_omega(t)))
        s = np.linspace(0.0, t, sub_points)
        vals = [operator_norm(commutator(dH, a_omega(t - si))) for si in s]
        rhs.append(float(np.trapezoid(vals, s)))
    return EvolutionGapCheck(np.asarray(t_grid, float), np.array(lhs), np.array(rhs), tol)


@dataclass(frozen=True, eq=False)
class LREnvelope:
    C: float
    mu: float
    v: float
    r2: float
    samples: np.ndarray

    def __call__(self, dist, t):
        return self.C * np.exp(-self.mu * np.asarray(dist)) * np.expm1(self.v * np.abs(np.asarray(t)))


def commutator_samples(A, probes: dict[int, object], eig: EigenDecomposition,
                       t_grid: Sequence[float]) -> np.ndarray:
    """Rows ``(distance, t, |[A(t), B_d]|)`` for every probe ``B_d``."""
    A_e = to_eigenbasis(A, eig)
    E = eig.values
    rows = []
    for t in t_grid:
        At = _dense(A) if t == 0 else from_eigenbasis(A_e * np.exp(1j * (E[:, None] - E[None, :]) * t), eig)
        for d, B in sorted(probes.items()):
            rows.append((d, t, operator_norm(commutator(At, _dense(B)))))
    return np.array(rows, dtype=float)


def commutator_growth(A, probes: dict[int, object], eig: EigenDecomposition,
                      t_grid: Sequence[float], saturation: float = 0.5) -> LREnvelope:
    """Fit ``C e^{-mu d} (e^{v t} - 1)`` to commutator norms.

    Only samples below ``saturation * 2|A||B|`` and above round-off enter
    the least-squares fit; ``C`` is then raised so the envelope dominates
    every fitted sample.
    """
    samples = commutator_samples(A, probes, eig, t_grid)
    nA = operator_norm(_dense(A))
    cap = {d: 2 * nA * operator_norm(_dense(B)) for d, B in probes.items()}
    use = np.array([t > 0 and 1e-12 < val < saturation * cap[int(d)] for d, t, val in samples])
    pts = samples[use]
    if len(pts) < 3:
        raise ValueError("fewer than 3 usable samples for the envelope fit")
    d, t, y = pts[:, 0], pts[:, 1], np.log(pts[:, 2])

    def model(p):
        logC, logmu, logv = p
        return logC - np.exp(logmu) * d + np.log(np.expm1(np.exp(logv) * t))

    fit = least_squares(lambda p: model(p) - y, x0=np.array([0.0, 0.0, 0.0]))
    logC, logmu, logv = fit.x
    resid = y - model(fit.x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    logC += max(0.0, float(resid.max()))
    return LREnvelope(float(np.exp(logC)), float(np.exp(logmu)), float(np.exp(logv)), r2, samples)


def write_sweep_csv(path: str | Path, rows: Iterable[Sequence[float]],
                    header: Sequence[str] = ("distance", "time", "value", "bound")) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
    return path
