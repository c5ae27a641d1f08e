import math

import numpy as np
import pytest
from scipy.special import erf

from latticehall import observables as ob
from latticehall.hall import TwistedFamily
from latticehall.lattice import CutFunction, LatticeSpec, Region
from latticehall.manybody import (TwistConfig, build_basis, build_hamiltonian, diagonal_from_cut,
                                  hop_operator, number_operator, restrict_hoppings, restrict_interactions)
from latticehall.models import chain, hofstadter_hubbard
from latticehall.spectra import detect_multiplet, eigensolve

from conftest import random_model


@pytest.fixture(scope="module")
def hh43():
    m = hofstadter_hubbard(4, 3, (1, 4), V_nn=2.0, N=2)
    fam = TwistedFamily(m)
    phi = (0.4, 1.1)
    H = fam.hamiltonian(phi)
    eig = eigensolve(H)
    return m, fam, phi, H, eig, detect_multiplet(eig, q_hint=3)


def test_local_current_is_twist_derivative(hh43):
    m, fam, phi, H, _, _ = hh43
    h = 1e-6
    for j in (0, 1):
        step = np.zeros(2)
        step[j] = h
        fd = (fam.hamiltonian(np.add(phi, step)) - fam.hamiltonian(np.subtract(phi, step))) / (2 * h)
        J = fam.currents(phi)[j]
        assert abs(fd - J).max() <= 1e-8


def test_cut_current_plus_seam_is_commutator():
    m = random_model(LatticeSpec(4, 2), 2, seed=11)
    basis = m.basis()
    H = m.hamiltonian(basis=basis)
    for direction, k in ((1, 1), (1, 3), (2, 1)):
        theta = diagonal_from_cut(CutFunction(direction, k), basis, m.lattice)
        spec = ob.CurrentSpec(direction, k)
        lhs = 1j * ob.commutator(H, theta)
        rhs = ob.local_current(spec, m.hoppings, basis) + ob.seam_current(spec, m.hoppings, basis)
        assert abs(lhs - rhs).max() <= 1e-13


def test_window_saturates_to_cut_current(hh43):
    m, fam, phi, *_ = hh43
    hops = fam.hoppings(phi)
    full = ob.local_current(ob.CurrentSpec(1, 0), hops, fam.basis)
    win = ob.windowed_current(ob.CurrentSpec(1, 0, (1, 1)), hops, fam.basis)
    assert abs(full - win).max() == 0
    narrow = ob.windowed_current(ob.CurrentSpec(1, 0, (1, 0)), hops, fam.basis)
    assert abs(full - narrow).max() > 0
    with pytest.raises(ValueError):
        ob.CurrentSpec(2, 0, (0, 1))


def test_region_current_is_commutator(hh43):
    m, fam, phi, H, *_ = hh43
    reg = Region((1, 1), 1, m.lattice)
    hops = fam.hoppings(phi)
    chi = ob.region_charge(reg, fam.basis)
    assert abs(1j * ob.commutator(H, chi) - ob.region_current(reg, hops, fam.basis)).max() <= 1e-13


def test_deformed_current(hh43):
    m, fam, phi, H, eig, mult = hh43
    hops = fam.hoppings(phi)
    x = 5
    spec = ob.CurrentSpec(1, 0, deformation=(0.3, x))
    Jd = ob.deformed_current(spec, hops, H, fam.basis)
    J = ob.local_current(ob.CurrentSpec(1, 0), hops, fam.basis)
    n = number_operator(x, fam.basis)
    assert abs(Jd - J - 0.3j * ob.commutator(H, n)).max() <= 1e-13
    from latticehall.spectra import multiplet_expectation
    diff = abs(multiplet_expectation(Jd, mult) - multiplet_expectation(J, mult))
    assert diff <= 0.3 * mult.deltaE * 1.0 + 1e-10


def test_operator_norm_paths():
    r = np.random.default_rng(3)
    A = r.normal(size=(600, 600)) + 1j * r.normal(size=(600, 600))
    ref = np.linalg.norm(A, 2)
    assert ob.operator_norm(A) == pytest.approx(ref, rel=1e-8)
    assert ob.operator_norm(A[:50, :50]) == pytest.approx(np.linalg.norm(A[:50, :50], 2), rel=1e-12)


def test_heisenberg_homomorphism_and_norm(hh43):
    *_, H, eig, _ = hh43
    n = H.shape[0]
    r = np.random.default_rng(5)
    A = r.normal(size=(n, n)) + 1j * r.normal(size=(n, n))
    B = r.normal(size=(n, n))
    t = 0.7
    At, Bt = ob.heisenberg(A, eig, t), ob.heisenberg(B, eig, t)
    assert np.abs(ob.heisenberg(A @ B, eig, t) - At @ Bt).max() <= 1e-10
    assert ob.operator_norm(At) == pytest.approx(ob.operator_norm(A), rel=1e-10)
    assert np.array_equal(ob.heisenberg(A, eig, 0), A)
    U = ob.evolution(eig, t)
    assert np.abs(U.conj().T @ A @ U - At).max() <= 1e-10
    with pytest.raises(OverflowError):
        ob.heisenberg(A, eig, -1000j)


def test_corr_properties(hh43):
    m, fam, phi, H, eig, mult = hh43
    A = number_operator(0, fam.basis)
    B = number_operator(7, fam.basis)
    ab, ba = ob.corr(A, B, mult, eig), ob.corr(B, A, mult, eig)
    assert ab == pytest.approx(np.conj(ba), abs=1e-14)
    assert ob.corr(A, A, mult, eig).real > 0
    assert abs(ob.corr(A, A, mult, eig).imag) < 1e-14


def test_gaussian_filter_closed_form():
    # the untruncated integral equals the Gaussian weight
    dE = np.linspace(-3, 3, 13)
    K, c = 4.0, 0.5
    w, err = ob.truncated_weights(dE, K, c, 40.0, points=4000)
    assert np.abs(w - ob.gaussian_weights(dE, K, c)).max() <= 1e-10
    # at dE = c the truncated weight is erf(T1 / sqrt(2K))
    T1 = 3.0
    w0, _ = ob.truncated_weights(np.array([c]), K, c, T1, points=2000)
    assert w0[0].real == pytest.approx(erf(T1 / math.sqrt(2 * K)), abs=1e-12)


def test_energy_filter_spectral_suppression(hh43):
    m, fam, phi, H, eig, mult = hh43
    a0 = hop_operator([(0, 1, 1.0)], fam.basis)
    fs = ob.FilterSpec(a0, frozenset({0, 1}), m.lattice.n_sites, K=4.0, center=1.0)
    res = ob.energy_filter(fs, eig)
    a_e = ob.to_eigenbasis(a0, eig)
    f_e = ob.to_eigenbasis(res.filtered, eig)
    assert np.all(np.abs(f_e) <= np.abs(a_e) + 1e-12)
    with pytest.raises(ValueError):
        ob.FilterSpec(a0, frozenset(range(12)), 12, 4.0, 0.0)
    with pytest.raises(ValueError):
        ob.FilterSpec(a0, frozenset({0}), 12, -1.0, 0.0)


def test_excitation_ratio_lower_bound(hh43):
    m, fam, phi, H, eig, mult = hh43
    a = number_operator(3, fam.basis)
    assert ob.excitation_ratio(a, H, mult) >= mult.DeltaE - 1e-12
    with pytest.raises(ValueError):
        ob.excitation_ratio(ob.to_eigenbasis(0 * a, eig), H, mult)


@pytest.fixture(scope="module")
def chain6():
    model = chain(6, V_nn=1.0)
    basis = build_basis(6, None)
    H = build_hamiltonian(model.hoppings, model.interactions, basis)
    om = [0, 1, 2, 3]
    Ho = build_hamiltonian(restrict_hoppings(model.hoppings, om), restrict_interactions(model.interactions, om), basis)
    return basis, H, Ho, eigensolve(H), eigensolve(Ho)


def test_restricted_evolution_gap(chain6):
    basis, H, Ho, ef, eo = chain6
    A = number_operator(2, basis)
    chk = ob.restricted_evolution_gap(A, [2], [0, 1, 2, 3], ef, eo, H, Ho, np.linspace(0, 1, 5), sub_points=41)
    assert chk.holds and chk.lhs[0] == 0
    with pytest.raises(ValueError):
        ob.restricted_evolution_gap(A, [5], [0, 1, 2, 3], ef, eo, H, Ho, [0.0])


def test_commutator_samples(chain6):
    basis, H, _, ef, _ = chain6
    A = number_operator(0, basis)
    probes = {d: number_operator(d, basis) for d in (1, 3, 5)}
    s = ob.commutator_samples(A, probes, ef, [0.0, 0.5, 1.0])
    assert np.all(s[s[:, 1] == 0, 2] == 0)
    assert np.all(s[:, 2] <= 2 + 1e-12)
    # nearer probes feel the perturbation first
    at = {int(d): v for d, t, v in s if t == 0.5}
    assert at[1] > at[3] > at[5]


def test_sweep_csv(tmp_path):
    p = tmp_path / "s.csv"
    ob.write_sweep_csv(p, [(1, 0.5, 0.1, 0.2)])
    assert p.read_text().splitlines()[0] == "distance,time,value,bound"
