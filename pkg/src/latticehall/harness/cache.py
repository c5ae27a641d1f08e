"""Content-addressed on-disk cache of eigendecompositions."""

from __future__ import annotations

import hashlib
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..spectra import SOLVER_REVISION, EigenDecomposition, eigensolve, read_eig, write_eig

CACHE_ENV = "LATTICEHALL_CACHE"
SPOT_CHECK_EVERY = 16
SPOT_CHECK_TOL = 1e-12


def default_root() -> Path:
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else Path.home() / ".cache" / "latticehall"


def hamiltonian_key(H, mode) -> bytes:
    """sha256 over the sparse structure, values, solve mode and solver revision."""
    H = H.tocsr()
    h = hashlib.sha256()
    h.update(repr((H.shape, mode, SOLVER_REVISION)).encode())
    for arr in (H.indptr, H.indices):
        h.update(np.ascontiguousarray(arr, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(H.data, dtype="<c16").tobytes())
    return h.digest()


class CacheMismatch(RuntimeError):
    pass


@dataclass
class EigenCache:
    """Eigendecompositions stored as ``<root>/<hex key>.eig``.

    On a hit, one key in ``SPOT_CHECK_EVERY`` (chosen by its first byte) is
    re-solved and compared against the stored copy.
    """

    root: Path
    enabled: bool = True
    hits: int = 0
    misses: int = 0
    spot_checks: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        self.root = Path(self.root)
        if self.enabled:
            self.root.mkdir(parents=True, exist_ok=True)

    def path(self, key: bytes) -> Path:
        return self.root / f"{key.hex()}.eig"

    def solve(self, H, m: int | None = None) -> EigenDecomposition:
        if not self.enabled:
            return eigensolve(H, m)
        key = hamiltonian_key(H, m)
        p = self.path(key)
        if p.exists():
            cached = read_eig(p, key)
            with self._lock:
                self.hits += 1
            if key[0] % SPOT_CHECK_EVERY == 0:
                self._spot_check(H, m, cached)
            return cached
        eig = eigensolve(H, m)
        write_eig(p, key, eig)
        with self._lock:
            self.misses += 1
        return eig

    def _spot_check(self, H, m, cached: EigenDecomposition):
        fresh = eigensolve(H, m)
        with self._lock:
            self.spot_checks += 1
        scale = max(1.0, float(np.max(np.abs(fresh.values))))
        if np.max(np.abs(fresh.values - cached.values)) > SPOT_CHECK_TOL * scale:
            raise CacheMismatch("cached eigenvalues disagree with a fresh solve")
        resid = H @ cached.vectors - cached.vectors * cached.values[None, :]
        if np.linalg.norm(resid, axis=0).max() > 1e-10 * scale:
            raise CacheMismatch("cached eigenvectors are not eigenvectors of the current operator")

    def ledger(self) -> dict:
        total = self.hits + self.misses
        return {"hits": self.hits, "misses": self.misses, "spot_checks": self.spot_checks,
                "hit_rate": (self.hits / total) if total else None}

    def entries(self) -> list[Path]:
        return sorted(self.root.glob("*.eig")) if self.root.exists() else []

    def clear(self) -> int:
        n = 0
        for p in self.entries():
            p.unlink()
            n += 1
        return n
