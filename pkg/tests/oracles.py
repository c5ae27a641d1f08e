"""Independent reference computations shared by the tests."""

import math

import numpy as np


def harper_chern(m: int, n: int = 64) -> int:
    """Lowest-band Chern number of flux 1/m from Bloch Hamiltonians on an n x n mesh.

    Bloch phases follow the twist convention: a hop moving +x picks up
    exp(-i theta_1) once per magnetic cell.  The plaquette field is minus
    the phase of the counter-clockwise link product.
    """
    alpha = 1.0 / m

    def h(t1, t2):
        H = np.zeros((m, m), dtype=complex)
        for j in range(m):
            H[j, j] = -2 * math.cos(2 * math.pi * alpha * j + t2 / 1.0)
        for j in range(m - 1):
            H[j + 1, j] = -1.0
            H[j, j + 1] = -1.0
        H[0, m - 1] += -np.exp(-1j * t1)
        H[m - 1, 0] += -np.exp(1j * t1)
        return H

    grid = 2 * np.pi * np.arange(n) / n
    u = np.empty((n, n, m), dtype=complex)
    for a, t1 in enumerate(grid):
        for b, t2 in enumerate(grid):
            u[a, b] = np.linalg.eigh(h(t1, t2))[1][:, 0]

    def link(v, w):
        z = np.vdot(v, w)
        return z / abs(z)

    total = 0.0
    for a in range(n):
        for b in range(n):
            loop = (link(u[a, b], u[(a + 1) % n, b]) * link(u[(a + 1) % n, b], u[(a + 1) % n, (b + 1) % n])
                    * link(u[(a + 1) % n, (b + 1) % n], u[a, (b + 1) % n]) * link(u[a, (b + 1) % n], u[a, b]))
            total -= np.angle(loop)
    c = total / (2 * np.pi)
    assert abs(c - round(c)) < 1e-9
    return int(round(c))
