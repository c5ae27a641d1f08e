import numpy as np
import pytest
import scipy.sparse as sp

from latticehall.models import chain
from latticehall.spectra import (ConvergenceError, EigenDecomposition, NoGappedMultiplet, detect_multiplet,
                                 eigensolve, multiplet_expectation, projector, read_eig, write_eig)


def _eig(values):
    values = np.asarray(values, float)
    return EigenDecomposition(values, np.eye(len(values), dtype=complex), True)


def test_two_by_two():
    eig = eigensolve(sp.csr_array(np.array([[0.0, 1.0], [1.0, 0.0]])))
    assert np.allclose(eig.values, [-1, 1])


def test_diagonal_sorted():
    d = np.array([3.0, -1.0, 2.0, 0.5])
    assert np.array_equal(eigensolve(sp.diags_array(d).tocsr()).values, np.sort(d))


def test_ring_ground_energy():
    m = chain(4, periodic=True, N=2)
    assert eigensolve(m.hamiltonian()).values[0] == pytest.approx(-2.0, abs=1e-13)


def test_non_hermitian_rejected():
    with pytest.raises(ValueError):
        eigensolve(sp.csr_array(np.array([[0.0, 1.0], [0.0, 0.0]])))


def test_detect_with_hint():
    m = detect_multiplet(_eig([0, 1e-9, 1e-9, 0.8, 0.9]), q_hint=3)
    assert m.q == 3 and m.DeltaE == pytest.approx(0.8)
    with pytest.raises(NoGappedMultiplet):
        detect_multiplet(_eig([0, 0.5, 0.6, 0.8]), q_hint=2)


def test_detect_unique_ground_state():
    m = detect_multiplet(_eig([0, 1, 1.01, 1.02, 1.05]))
    assert m.q == 1 and m.DeltaE == pytest.approx(1.0)


def test_detect_dense_random_spectrum_fails():
    r = np.random.default_rng(17)
    A = r.normal(size=(80, 80))
    with pytest.raises(NoGappedMultiplet, match="no multiplet"):
        detect_multiplet(_eig(np.linalg.eigvalsh(A + A.T)))


def test_projector_properties(small_hh):
    H = small_hh.hamiltonian()
    eig = eigensolve(H)
    m = detect_multiplet(eig, q_hint=1)
    P = projector(m).to_dense()
    assert np.trace(P).real == pytest.approx(m.q, abs=1e-12)
    assert np.abs(P @ P - P).max() <= 1e-12
    Hd = H.toarray()
    assert np.linalg.norm(Hd @ P - P @ Hd, 2) <= m.deltaE + 1e-12
    assert multiplet_expectation(sp.identity(H.shape[0], format="csr"), m) == pytest.approx(1)
    assert multiplet_expectation(H, m).real == pytest.approx(m.energies.mean())


def test_eig_file_roundtrip(tmp_path):
    r = np.random.default_rng(2)
    V = np.linalg.qr(r.normal(size=(6, 3)) + 1j * r.normal(size=(6, 3)))[0]
    eig = EigenDecomposition(np.array([0.0, 0.5, 1.0]), V, False)
    key = bytes(range(32))
    write_eig(tmp_path / "a.eig", key, eig)
    back = read_eig(tmp_path / "a.eig", key)
    assert np.array_equal(back.values, eig.values) and np.array_equal(back.vectors, V)
    assert back.complete is False
    with pytest.raises(ValueError):
        read_eig(tmp_path / "a.eig", bytes(32))


def test_lanczos_recovers_degenerate_copies():
    # a single Lanczos run returns only three of the four degenerate ground states here
    from latticehall.hall import TwistedFamily
    from latticehall.models import hofstadter_hubbard

    fam = TwistedFamily(hofstadter_hubbard(4, 6, (1, 4), V_nn=2.0, N=3))
    H = fam.hamiltonian((2 * np.pi * 4 / 12, 2 * np.pi * 9 / 12))
    ref = eigensolve(H).values[:8]
    got = eigensolve(H, 8)
    assert np.allclose(got.values, ref, atol=1e-10)
    assert detect_multiplet(got).q == 4
