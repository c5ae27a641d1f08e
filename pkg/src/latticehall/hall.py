"""Hall conductance: Kubo sum, projector trace, adiabatic time-domain
response, and the integer invariant from a discretized flux torus."""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg
from scipy.stats import unitary_group

from .lattice import CutFunction, cut_weights
from .manybody import (FockBasis, TwistConfig, Twist, number_diagonal)
from .models import HamiltonianSpec
from .observables import (CurrentSpec, local_current, operator_norm, windowed_current)
from .spectra import (DENSE_THRESHOLD, ConvergenceError, EigenDecomposition, GroundMultiplet,
                      NoGappedMultiplet, detect_multiplet, eigensolve)

GAP_FLOOR = 1e-10
IMAG_TOL = 1e-10
SINGULAR_FLOOR = 1e-8
INTEGRALITY_TOL = 1e-9
FD_STEP = 1e-4
DEFAULT_GRID = 12
REFINED_GRID = 24
SCHEMA_VERSION = 1
TWO_PI = 2 * np.pi


class GapClosure(NoGappedMultiplet):
    """The multiplet size changes or the gap closes inside a sweep."""


class SingularLink(RuntimeError):
    pass


class IntegralityError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Twisted families


@dataclass(frozen=True, eq=False)
class TwistedFamily:
    """Hamiltonians ``H(phi1, phi2)`` with twists on cuts ``k1`` and ``k2``.

    ``deformation`` holds site weights ``w``; the family is then conjugated
    by ``exp(-i phi1 sum_x w_x n_x)``, which keeps the spectrum and moves
    the frames.  Going once around the ``phi1`` cycle multiplies the
    frames by ``exp(-2 pi i sum_x w_x n_x)``.
    """

    model: HamiltonianSpec
    k1: int = 0
    k2: int = 0
    deformation: np.ndarray | None = None
    basis: FockBasis | None = None

    def __post_init__(self):
        if self.basis is None:
            object.__setattr__(self, "basis", self.model.basis())
        if self.deformation is not None:
            d = number_diagonal(np.asarray(self.deformation, float), self.basis)
            object.__setattr__(self, "_dgen", d)
        else:
            object.__setattr__(self, "_dgen", None)

    @property
    def dim(self) -> int:
        return self.basis.dim

    def twist(self, phi) -> TwistConfig:
        return TwistConfig((Twist(1, self.k1, float(phi[0])), Twist(2, self.k2, float(phi[1]))))

    def hoppings(self, phi):
        return self.model.twisted_hoppings(self.twist(phi))

    def _u(self, phi1: float) -> np.ndarray | None:
        return None if self._dgen is None else np.exp(-1j * phi1 * self._dgen)

    def hamiltonian(self, phi) -> sp.csr_array:
        H = self.model.hamiltonian(self.twist(phi), self.basis)
        u = self._u(phi[0])
        if u is not None:
            H = sp.csr_array(sp.diags_array(u) @ H @ sp.diags_array(u.conj()))
        return H

    def currents(self, phi) -> tuple[sp.csr_array, sp.csr_array]:
        """``dH/dphi_1`` and ``dH/dphi_2`` for the undeformed family."""
        if self._dgen is not None:
            raise ValueError("currents are only provided for undeformed families")
        hops = self.hoppings(phi)
        return (local_current(CurrentSpec(1, self.k1), hops, self.basis),
                local_current(CurrentSpec(2, self.k2), hops, self.basis))

    def cycle_phase(self, direction: int) -> np.ndarray | None:
        """Diagonal relating frames at ``phi + 2 pi e_j`` to frames at ``phi``."""
        if direction == 1 and self._dgen is not None:
            return np.exp(-1j * TWO_PI * self._dgen)
        return None


def alpha_weights(n_sites: int, site: int, alpha: float) -> np.ndarray:
    w = np.zeros(n_sites)
    w[site] = alpha
    return w


def cut_deformation(cut: CutFunction, model: HamiltonianSpec) -> np.ndarray:
    """Weights ``vartheta - theta`` of a deformed cut against its step cut."""
    step = CutFunction(cut.direction, cut.k)
    return cut_weights(cut, model.lattice) - cut_weights(step, model.lattice)


# ---------------------------------------------------------------------------
# Single-point routes


def _check_gap(eig: EigenDecomposition, m: GroundMultiplet, floor: float):
    if not eig.complete:
        raise ValueError("the Kubo sum needs the complete spectrum")
    if m.DeltaE < floor:
        raise GapClosure(f"gap {m.DeltaE:.2e} below floor {floor:.0e}")


def kubo_sum(J1, J2, m: GroundMultiplet, eig: EigenDecomposition,
             gap_floor: float = GAP_FLOOR) -> float:
    """``(i/q) sum_m sum_n [<0m|J1|n><n|J2|0m> - (1<->2)] / (E_0m - E_n)^2``."""
    _check_gap(eig, m, gap_floor)
    q = m.q
    V0, Vx = eig.vectors[:, :q], eig.vectors[:, q:]
    w = 1.0 / (eig.values[:q, None] - eig.values[None, q:]) ** 2
    J1x, J2x = J1 @ Vx, J2 @ Vx
    a1 = V0.conj().T @ J1x
    a2 = V0.conj().T @ J2x
    b1 = Vx.conj().T @ (J1 @ V0)
    b2 = Vx.conj().T @ (J2 @ V0)
    total = 1j / q * np.sum(w * (a1 * b2.T - a2 * b1.T))
    scale = max(1.0, float(np.sum(w * (np.abs(a1 * b2.T) + np.abs(a2 * b1.T)))) / q)
    if abs(total.imag) > IMAG_TOL * scale:
        raise ValueError(f"Kubo sum has imaginary residue {total.imag:.2e}")
    return float(total.real)


def kubo_resolvent(J1, J2, H, m: GroundMultiplet, rtol: float = 1e-14,
                   maxiter: int = 5000) -> float:
    """Kubo sum from linear solves instead of the full spectrum.

    For every multiplet vector ``|0m>`` solve ``(H - E_0m) x_j = (1-P) J_j |0m>``
    on the complement of the multiplet; then ``sigma = (i/q) sum_m
    (<x1|x2> - <x2|x1>)``.
    """
    V, E = m.frame, m.energies
    dim = V.shape[0]
    P = lambda v: V @ (V.conj().T @ v)
    total = 0j
    for i in range(m.q):
        v = V[:, i]
        shift = E[i]
        # on the multiplet the operator is the identity; elsewhere H - E_0m >= gap
        op = LinearOperator((dim, dim), dtype=complex,
                            matvec=lambda x, s=shift: (H @ x - s * x) - (P(H @ P(x)) - s * P(x)) + P(x))
        xs = []
        for J in (J1, J2):
            b = J @ v
            b = b - P(b)
            x, info = cg(op, b, rtol=rtol, atol=0.0, maxiter=maxiter)
            if info > 0:
                resid = np.linalg.norm(op @ x - b) / max(np.linalg.norm(b), 1e-300)
                if resid > 1e-11:
                    raise ConvergenceError(f"conjugate gradients stalled at relative residual {resid:.1e}")
            xs.append(x - P(x))
        total += np.vdot(xs[0], xs[1]) - np.vdot(xs[1], xs[0])
    return float((1j * total / m.q).real)


def _solve_node(family: TwistedFamily, phi, q: int | None, full: bool,
                dense_threshold: int = DENSE_THRESHOLD):
    H = family.hamiltonian(phi)
    if full:
        eig = eigensolve(H, None, dense_threshold)
    else:
        eig = eigensolve(H, (q or 8) + 4, dense_threshold)
    return eig, detect_multiplet(eig, q)


def projector_trace(family: TwistedFamily, phi, h: float = FD_STEP, q_hint: int | None = None,
                    solver: Callable | None = None) -> float:
    """``(i/q) Tr P [dP/dphi_1, dP/dphi_2]`` by central differences.

    Only multiplet frames are needed: every trace reduces to products of
    ``q x q`` overlap matrices.
    """
    solve = solver or (lambda p: _solve_node(family, p, q_hint, family.dim <= 200)[1])
    phi = np.asarray(phi, float)
    m0 = solve(phi)
    q = m0.q
    frames = {}
    for j in (0, 1):
        for s in (1, -1):
            step = np.zeros(2)
            step[j] = s * h
            mj = solve(phi + step)
            if mj.q != q:
                raise GapClosure(f"multiplet size changes from {q} to {mj.q} across the stencil")
            frames[j, s] = mj.frame
    V = m0.frame

    def ordered(a, b):
        # Tr(P dP_a dP_b) from frames, each dP a signed sum of two projectors
        total = 0j
        for sa in (1, -1):
            for sb in (1, -1):
                Va, Vb = frames[a, sa], frames[b, sb]
                total += sa * sb * np.trace((V.conj().T @ Va) @ (Va.conj().T @ Vb) @ (Vb.conj().T @ V))
        return total / (2 * h) ** 2

    val = 1j / q * (ordered(0, 1) - ordered(1, 0))
    return float(val.real)


# ---------------------------------------------------------------------------
# Time-domain route


@dataclass(frozen=True)
class TimeDomainParams:
    eta: float
    T: float
    N_window: int
    M_region: int | None
    anchor: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.eta < 0 or self.T <= 0:
            raise ValueError("eta must be nonnegative and T positive")
        if self.N_window < 0:
            raise ValueError("window half-width must be nonnegative")
        if self.M_region is not None and self.M_region < 0:
            raise ValueError("region half-width must be nonnegative")
        if math.isfinite(self.T) and self.eta * self.T < 3:
            warnings.warn(f"eta*T = {self.eta * self.T:.2f} < 3: the switching limit is poorly approximated",
                          stacklevel=2)


def switching_integral(omega: np.ndarray, eta: float, T: float) -> np.ndarray:
    """``int_{-T}^0 s e^{eta s} e^{-i omega s} ds`` in closed form.

    ``T = inf`` requires ``eta > 0`` or ``omega != 0`` and gives
    ``1 / (omega + i eta)^2``.
    """
    z = np.asarray(omega, dtype=complex) + 1j * eta
    base = 1.0 / z ** 2
    if not math.isfinite(T):
        return base
    decay = np.exp(-eta * T) * np.exp(1j * np.asarray(omega) * T)
    return 1j * T * decay / z + base - decay / z ** 2


@dataclass
class TimeDomainResult:
    value: float
    limit: float
    persistent_current: float
    correction: float
    correction_bound: float
    switching_bound: float
    norm_J_window: float
    norm_J_region: float
    norm_charge: float
    gap: float

    @property
    def switching_ok(self) -> bool:
        return abs(self.value - self.limit) <= self.switching_bound

    @property
    def correction_ok(self) -> bool:
        return abs(self.correction) <= self.correction_bound


def time_domain(J_window, J_region, charge, params: TimeDomainParams, m: GroundMultiplet,
                eig: EigenDecomposition, norms: dict | None = None) -> TimeDomainResult:
    """Adiabatically switched Hall response with its bound ledger.

    Parameters
    ----------
    J_window
        Windowed cut current that measures the response.
    J_region
        Current leaving the perturbed region, ``i[H, charge]`` or its
        saturated form.
    charge
        Charge operator of the region, used by the switching correction.
    """
    _check_gap(eig, m, GAP_FLOOR)
    q = m.q
    E = eig.values
    V0, Vx = eig.vectors[:, :q], eig.vectors[:, q:]
    omega = E[None, q:] - E[:q, None]
    jn_0x = V0.conj().T @ (J_window @ Vx)
    jr_0x = V0.conj().T @ (J_region @ Vx)
    jn_x0 = Vx.conj().T @ (J_window @ V0)
    jr_x0 = Vx.conj().T @ (J_region @ V0)
    A = jn_0x * jr_x0.T
    B = jr_0x * jn_x0.T

    def sigma(eta, T):
        F = switching_integral(omega, eta, T)
        return 1j / q * np.sum(A * np.conj(F) - B * F)

    value = sigma(params.eta, params.T)
    limit = 1j / q * np.sum((A - B) / omega ** 2)
    ch_0x = V0.conj().T @ (charge @ Vx)
    C = ch_0x * jn_x0.T
    Fcor = switching_integral(omega, params.eta, math.inf) if params.eta > 0 else 1.0 / omega ** 2
    correction = params.eta / q * np.sum(C * Fcor - np.conj(C * Fcor))
    norms = norms or {}
    nJ = norms.get("J_window") or operator_norm(J_window)
    nR = norms.get("J_region") or operator_norm(J_region)
    nC = norms.get("charge") or operator_norm(charge)
    gap = m.DeltaE
    eta, T = params.eta, params.T
    tail = (1 + T * gap) / gap ** 2 * math.exp(-eta * T) if math.isfinite(T) else 0.0
    sw_bound = 2 * ((2 * gap + eta) / gap ** 4 * eta + tail) * nJ * nR
    persistent = np.trace(V0.conj().T @ (J_window @ V0)).real / q
    return TimeDomainResult(float(value.real), float(limit.real), float(persistent),
                            float(abs(correction)), float(2 * eta / gap ** 2 * nC * nJ),
                            float(sw_bound), float(nJ), float(nR), float(nC), float(gap))


def windowed_and_region(family: TwistedFamily, phi, params: TimeDomainParams):
    """Window current, region current and region charge at twist ``phi``.

    ``params.M_region=None`` grows the box to the half plane above
    ``x2 = l``; its current is then the direction-2 cut current.
    """
    from .lattice import Region
    from .observables import half_plane_charge, region_charge, region_current, saturated_region_current

    hops = family.hoppings(phi)
    k, l = params.anchor
    Jw = windowed_current(CurrentSpec(1, k, (l, params.N_window)), hops, family.basis)
    if params.M_region is None:
        return (Jw, saturated_region_current(l, hops, family.basis),
                half_plane_charge(l, family.basis, family.model.lattice))
    reg = Region((k, l), params.M_region, family.model.lattice)
    return Jw, region_current(reg, hops, family.basis), region_charge(reg, family.basis)


# ---------------------------------------------------------------------------
# Flux torus


@dataclass(eq=False)
class FluxGridState:
    size: int
    multiplets: list
    link_dets: np.ndarray
    curvature: np.ndarray
    p: int
    residual: float
    refined: bool = False
    kubo_grid: np.ndarray | None = None

    @property
    def q(self) -> int:
        return self.multiplets[0].q

    @property
    def min_gap(self) -> float:
        return min(m.DeltaE for m in self.multiplets)

    @property
    def max_spread(self) -> float:
        return max(m.deltaE for m in self.multiplets)

    def curvature_rows(self):
        n = self.size
        for a in range(n):
            for b in range(n):
                yield (TWO_PI * a / n, TWO_PI * b / n, float(self.curvature[a, b]))


def _unit_det(A: np.ndarray) -> complex:
    d = np.linalg.det(A)
    return d / abs(d) if abs(d) > 0 else 0j


def solve_grid(family: TwistedFamily, n: int, q_hint: int | None, workers: int = 1,
               full: bool = False, solver: Callable | None = None):
    """Eigensolve every node of an ``n x n`` grid; results in row-major order."""
    nodes = [(TWO_PI * a / n, TWO_PI * b / n) for a in range(n) for b in range(n)]
    solve = solver or (lambda phi: _solve_node(family, phi, q_hint, full))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(solve, nodes))
    else:
        out = [solve(p) for p in nodes]
    return nodes, out


def chern_from_frames(frames: Sequence[np.ndarray], n: int, family: TwistedFamily | None = None,
                      singular_floor: float = SINGULAR_FLOOR):
    """Overlap-determinant plaquette sum over a periodic ``n x n`` grid.

    The plaquette field is minus the phase of the counter-clockwise link
    product, which makes ``p`` equal to ``2 pi`` times the grid average of
    the Kubo conductance.

    Returns
    -------
    p, residual, link determinant magnitudes (2, n, n), curvature (n, n)
    """
    W = [None, None]
    if family is not None:
        W = [family.cycle_phase(1), family.cycle_phase(2)]
    F = [frames[a * n + b] for a in range(n) for b in range(n)]

    def frame(a, b):
        V = F[(a % n) * n + (b % n)]
        if a == n and W[0] is not None:
            V = W[0][:, None] * V
        if b == n and W[1] is not None:
            V = W[1][:, None] * V
        return V

    mags = np.zeros((2, n, n))
    U = np.zeros((2, n, n), dtype=complex)
    for a in range(n):
        for b in range(n):
            V = frame(a, b)
            for j, (da, db) in enumerate(((1, 0), (0, 1))):
                d = np.linalg.det(V.conj().T @ frame(a + da, b + db))
                mags[j, a, b] = abs(d)
                U[j, a, b] = d / abs(d) if abs(d) > 0 else 0
    if mags.min() < singular_floor:
        raise SingularLink(f"link determinant {mags.min():.2e} below floor {singular_floor:.0e}")
    loop = U[0] * np.roll(U[1], -1, axis=0) * np.conj(np.roll(U[0], -1, axis=1)) * np.conj(U[1])
    curv = -np.angle(loop)
    total = curv.sum() / TWO_PI
    p = int(round(total))
    return p, abs(total - p), mags, curv


def average_over_flux(family: TwistedFamily, grid: int = DEFAULT_GRID, q_hint: int | None = None,
                      refine: bool = True, workers: int = 1, mix_seed: int | None = None,
                      with_kubo: bool | None = None, solver: Callable | None = None,
                      tol: float = INTEGRALITY_TOL) -> FluxGridState:
    """Integer invariant ``p`` of the multiplet family over the flux torus.

    With ``mix_seed`` every node frame is right-multiplied by a seeded
    random ``q x q`` unitary.  ``with_kubo`` (default: undeformed families
    up to the dense threshold) also evaluates the Kubo sum at every node,
    from the full spectrum when the solver returns one and by linear solves
    otherwise.  Only the multiplet frames are kept once a node is done.
    """
    if with_kubo is None:
        with_kubo = family.deformation is None and family.dim <= DENSE_THRESHOLD
    solve = solver or (lambda phi: _solve_node(family, phi, q_hint, family.dim <= 200))

    def node(phi):
        eig, m = solve(phi)
        if not with_kubo:
            return None, m
        J1, J2 = family.currents(phi)
        if eig.complete:
            return kubo_sum(J1, J2, m, eig), m
        return kubo_resolvent(J1, J2, family.hamiltonian(phi), m), m

    n = grid
    while True:
        nodes, out = solve_grid(family, n, q_hint, workers, solver=node)
        multiplets = [m for _, m in out]
        qs = {m.q for m in multiplets}
        if len(qs) != 1:
            raise GapClosure(f"multiplet size varies over the grid: {sorted(qs)}")
        frames = [m.frame for m in multiplets]
        if mix_seed is not None:
            rng = np.random.default_rng(mix_seed)
            q = multiplets[0].q
            frames = [V @ unitary_group.rvs(q, random_state=rng) if q > 1 else V * np.exp(1j * rng.uniform(0, TWO_PI))
                      for V in frames]
        try:
            p, res, mags, curv = chern_from_frames(frames, n, family)
            if res > tol:
                raise IntegralityError(f"plaquette sum off integer by {res:.2e}")
            break
        except (SingularLink, IntegralityError):
            if not refine or n >= REFINED_GRID:
                raise
            n = REFINED_GRID
    kubo = np.array([k for k, _ in out]).reshape(n, n) if with_kubo else None
    return FluxGridState(n, multiplets, mags, curv, p, res, n != grid, kubo)


def deformation_invariance(model: HamiltonianSpec, alphas: Sequence[float], site: int,
                           grid: int = 8, q_hint: int | None = None,
                           cuts: Sequence[CutFunction] = (), workers: int = 1) -> dict:
    """Recompute ``p`` for deformed projector families.

    Returns a mapping label -> p, including the undeformed reference
    under ``"reference"``.
    """
    basis = model.basis()
    ref = average_over_flux(TwistedFamily(model, basis=basis), grid, q_hint, workers=workers,
                            with_kubo=False).p
    out = {"reference": ref}
    for a in alphas:
        fam = TwistedFamily(model, deformation=alpha_weights(model.lattice.n_sites, site, a), basis=basis)
        out[f"alpha={a:g}"] = average_over_flux(fam, grid, q_hint, workers=workers).p
    for i, cut in enumerate(cuts):
        fam = TwistedFamily(model, k1=cut.k, deformation=cut_deformation(cut, model), basis=basis)
        out[f"cut{i}"] = average_over_flux(fam, grid, q_hint, workers=workers).p
    return out


# ---------------------------------------------------------------------------
# Report


@dataclass
class BoundCheck:
    name: str
    lhs: float
    rhs: float
    passed: bool


@dataclass
class ConductanceReport:
    p: int
    q: int
    sigma_kubo: float | None = None
    sigma_trace: float | None = None
    sigma_time: float | None = None
    sigma_time_params: dict | None = None
    bound_checks: list = field(default_factory=list)
    grid: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def sigma_averaged(self) -> float:
        return self.p / (TWO_PI * self.q)

    def add_check(self, name: str, lhs: float, rhs: float) -> BoundCheck:
        chk = BoundCheck(name, float(lhs), float(rhs), bool(lhs <= rhs))
        self.bound_checks.append(chk)
        return chk

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma_averaged"] = self.sigma_averaged
        d["schema_version"] = SCHEMA_VERSION
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
