"""Eigensolvers, ground-multiplet detection and multiplet projectors."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .manybody import HERMITIAN_TOL, hermiticity_defect

DENSE_THRESHOLD = 4096
SMALL_DIM = 200
SOLVER_SEED = 20240517
RESIDUAL_TOL = 1e-10
DEGENERACY_FLOOR = 1e-8
RATIO_THRESHOLD = 10.0
Q_MAX = 8
# bumped whenever eigensolve can return different pairs for the same input
SOLVER_REVISION = 2


class FeasibilityError(RuntimeError):
    """A full spectrum was requested for a basis beyond the dense threshold."""


class ConvergenceError(RuntimeError):
    pass


class NoGappedMultiplet(RuntimeError):
    """No low-lying multiplet is separated from the rest by a clear gap."""


@dataclass(frozen=True, eq=False)
class EigenDecomposition:
    values: np.ndarray
    vectors: np.ndarray
    complete: bool

    @property
    def count(self) -> int:
        return len(self.values)


def _norm_bound(H) -> float:
    if sp.issparse(H):
        return float(abs(H).sum(axis=0).max()) if H.nnz else 0.0
    return float(np.abs(H).sum(axis=0).max()) if H.size else 0.0


def _check_pairs(H, values, vectors, tol=RESIDUAL_TOL):
    scale = max(_norm_bound(H), 1.0)
    resid = H @ vectors - vectors * values[None, :]
    worst = float(np.linalg.norm(resid, axis=0).max()) if len(values) else 0.0
    if worst > tol * scale:
        raise ConvergenceError(f"eigenpair residual {worst:.2e} above {tol:.0e} * |H|")
    gram = vectors.conj().T @ vectors
    if np.abs(gram - np.eye(len(values))).max() > tol * 100:
        raise ConvergenceError("returned eigenvectors are not orthonormal")


def eigensolve(H, m: int | None = None, dense_threshold: int = DENSE_THRESHOLD,
               seed: int = SOLVER_SEED, maxiter: int | None = None) -> EigenDecomposition:
    """Eigenpairs of a Hermitian operator.

    ``m=None`` asks for the full spectrum and is refused above
    ``dense_threshold``.  Otherwise the ``m`` lowest pairs are returned,
    computed by Lanczos (ARPACK) from a start vector drawn with ``seed``.
    """
    dim = H.shape[0]
    defect = hermiticity_defect(H)
    if defect > HERMITIAN_TOL * max(1.0, _norm_bound(H)):
        raise ValueError(f"operator is not Hermitian (defect {defect:.2e})")
    if m is None:
        if dim > dense_threshold:
            raise FeasibilityError(
                f"full spectrum needs dim <= dense_threshold={dense_threshold}, got {dim}")
        dense = H.toarray() if sp.issparse(H) else np.asarray(H)
        w, v = np.linalg.eigh(dense)
        _check_pairs(dense, w, v)
        return EigenDecomposition(w, v, True)
    m = min(m, dim)
    if dim <= SMALL_DIM or m >= dim - 1:
        dense = H.toarray() if sp.issparse(H) else np.asarray(H)
        w, v = np.linalg.eigh(dense)
        return EigenDecomposition(w[:m], v[:, :m], m == dim)
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    try:
        w, v = eigsh(sp.csr_array(H, dtype=complex), k=m, which="SA", v0=v0,
                     maxiter=maxiter, ncv=min(dim, max(2 * m + 1, 20)))
    except ArpackNoConvergence as err:
        raise ConvergenceError(f"Lanczos did not converge: {err}") from err
    order = np.argsort(w)
    v = v[:, order]
    # ARPACK returns vectors orthonormal only to its own tolerance
    v, _ = np.linalg.qr(v)
    w, v = _deflate_missed(H, v, m, rng, maxiter)
    _check_pairs(H, w, v)
    return EigenDecomposition(w, v, False)


def _ritz(H, V):
    w, c = np.linalg.eigh(V.conj().T @ (H @ V))
    return w, V @ c


def _deflate_missed(H, V, m, rng, maxiter):
    """Recover eigenvectors a single Lanczos run skipped.

    Lanczos from one start vector can return too few copies of a
    degenerate level.  The lowest state of ``H`` on the orthogonal
    complement of the found vectors is computed; while it lies below the
    highest returned level it is added and the block is re-diagonalized.
    """
    dim = H.shape[0]
    w, V = _ritz(H, V)
    shift = 2.0 * _norm_bound(H) + 1.0
    tol = RESIDUAL_TOL * max(1.0, _norm_bound(H))
    for _ in range(m):
        if V.shape[1] >= dim - 1:
            break

        def mv(x, V=V):
            x = np.asarray(x).reshape(-1)
            px = V @ (V.conj().T @ x)
            y = H @ (x - px)
            return y - V @ (V.conj().T @ y) + shift * px

        op = LinearOperator((dim, dim), matvec=mv, dtype=complex)
        v0 = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        try:
            lam, u = eigsh(op, k=1, which="SA", v0=v0, maxiter=maxiter)
        except ArpackNoConvergence as err:
            raise ConvergenceError(f"deflation check did not converge: {err}") from err
        if lam[0] >= w[m - 1] - tol:
            break
        u = u[:, 0] - V @ (V.conj().T @ u[:, 0])
        u /= np.linalg.norm(u)
        w, V = _ritz(H, np.column_stack([V, u]))
    return w[:m], V[:, :m]


@dataclass(frozen=True, eq=False)
class GroundMultiplet:
    q: int
    energies: np.ndarray
    frame: np.ndarray
    deltaE: float
    DeltaE: float

    @property
    def dim(self) -> int:
        return self.frame.shape[0]


def detect_multiplet(eig: EigenDecomposition, q_hint: int | None = None,
                     ratio_threshold: float = RATIO_THRESHOLD, q_max: int = Q_MAX,
                     floor: float = DEGENERACY_FLOOR) -> GroundMultiplet:
    """Find the gapped low-lying multiplet.

    The figure of merit for a multiplet of size ``q`` is the gap above it
    divided by its internal spread; spreads below ``floor * max(1, |E_0|)``
    count as that floor so that exact degeneracies do not divide by zero.
    Without a hint the search also divides by the next level spacing
    ``E_{q+1} - E_q``, so an isolated ground state inside an evenly spaced
    spectrum does not count as gapped.
    """
    E = np.asarray(eig.values)
    tiny = floor * max(1.0, abs(E[0]))

    def ratio(q, search=False):
        spread = E[q - 1] - E[0]
        if search and len(E) > q + 1:
            spread = max(spread, E[q + 1] - E[q])
        return (E[q] - E[q - 1]) / max(spread, tiny)

    if q_hint is not None:
        if len(E) < q_hint + 1:
            raise ValueError(f"need at least {q_hint + 1} eigenvalues, have {len(E)}")
        q = q_hint
        if ratio(q) < ratio_threshold:
            raise NoGappedMultiplet(
                f"q={q}: gap {E[q] - E[q - 1]:.3e} over spread {E[q - 1] - E[0]:.3e} "
                f"below ratio {ratio_threshold}")
    else:
        candidates = range(1, min(q_max, len(E) - 2) + 1)
        scores = [ratio(q, True) for q in candidates]
        if not scores or max(scores) < ratio_threshold:
            raise NoGappedMultiplet(
                f"no multiplet with q <= {q_max} reaches gap/spread ratio {ratio_threshold}")
        q = list(candidates)[int(np.argmax(scores))]
    energies = E[:q].copy()
    return GroundMultiplet(q, energies, eig.vectors[:, :q], float(energies.max() - energies.min()),
                           float(E[q] - energies.max()))


class Projector:
    """Rank-q spectral projector stored through its orthonormal frame."""

    def __init__(self, frame: np.ndarray):
        self.frame = np.asarray(frame)
        self.shape = (self.frame.shape[0],) * 2

    @property
    def rank(self) -> int:
        return self.frame.shape[1]

    def trace(self) -> float:
        return float(np.real(np.vdot(self.frame, self.frame)))

    def __matmul__(self, other):
        return self.frame @ (self.frame.conj().T @ other)

    def to_dense(self) -> np.ndarray:
        return self.frame @ self.frame.conj().T


def projector(m: GroundMultiplet) -> Projector:
    return Projector(m.frame)


def multiplet_expectation(A, m: GroundMultiplet) -> complex:
    """``(1/q) Tr A P_0`` over the multiplet frame."""
    V = m.frame
    return complex(np.trace(V.conj().T @ (A @ V)) / m.q)


# ---------------------------------------------------------------------------
# On-disk cache format

_MAGIC = b"LHEIG\x01"
_HEADER = struct.Struct("<6s32sQQ")


def write_eig(path: str | Path, key: bytes, eig: EigenDecomposition) -> None:
    """Header (magic, 32-byte key, dim, count) + LE float64 values + LE complex vectors.

    Vectors are written column by column, real and imaginary parts
    interleaved.
    """
    if len(key) != 32:
        raise ValueError("cache key must be a 32-byte digest")
    dim, count = eig.vectors.shape
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, key, dim, count))
        fh.write(np.asarray(eig.values, dtype="<f8").tobytes())
        fh.write(np.asarray(eig.vectors.T, dtype="<c16").tobytes())
        fh.write(b"\x01" if eig.complete else b"\x00")
    tmp.replace(path)


def read_eig(path: str | Path, key: bytes | None = None) -> EigenDecomposition:
    data = Path(path).read_bytes()
    magic, stored, dim, count = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError(f"{path} is not an eigendecomposition cache file")
    if key is not None and stored != key:
        raise ValueError(f"{path} holds a different key")
    off = _HEADER.size
    values = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(float)
    off += 8 * count
    vectors = np.frombuffer(data, dtype="<c16", count=dim * count, offset=off)
    vectors = vectors.reshape(count, dim).T.astype(complex)
    complete = data[off + 16 * dim * count:off + 16 * dim * count + 1] == b"\x01"
    return EigenDecomposition(values, vectors, complete)
