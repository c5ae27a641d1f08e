import math

import numpy as np
import pytest
from scipy.integrate import quad

from latticehall import hall
from latticehall.hall import TwistedFamily
from latticehall.lattice import deformed_cut
from latticehall.models import atomic_insulator, hofstadter, hofstadter_hubbard
from latticehall.spectra import detect_multiplet, eigensolve

from oracles import harper_chern


def test_bloch_oracle_flux_third():
    assert harper_chern(3) == 1


def test_bloch_oracle_matches_many_body_small():
    fam = TwistedFamily(hofstadter(3, 3, (1, 3), N=3))
    st = hall.average_over_flux(fam, grid=6)
    assert st.p == harper_chern(3) == 1
    assert st.residual <= 1e-9
    # p equals 2 pi q times the grid average of the Kubo sum
    assert 2 * np.pi * st.q * st.kubo_grid.mean() == pytest.approx(st.p, abs=0.15)


def test_frame_mixing_and_cut_move():
    m = hofstadter(3, 3, (1, 3), N=3)
    base = hall.average_over_flux(TwistedFamily(m), grid=6).p
    assert hall.average_over_flux(TwistedFamily(m), grid=6, mix_seed=4).p == base
    assert hall.average_over_flux(TwistedFamily(m, k1=2, k2=1), grid=6).p == base


def test_atomic_insulator_is_trivial():
    m = atomic_insulator(2, 2, [0.0, 1.0, 2.0, 3.0], N=2)
    fam = TwistedFamily(m)
    st = hall.average_over_flux(fam, grid=4, q_hint=1)
    assert st.p == 0
    J1, J2 = fam.currents((0.3, 0.7))
    eig = eigensolve(fam.hamiltonian((0.3, 0.7)))
    mult = detect_multiplet(eig, 1)
    assert hall.kubo_sum(J1, J2, mult, eig) == 0


def test_kubo_resolvent_matches_sum():
    m = hofstadter_hubbard(4, 3, (1, 4), V_nn=2.0, N=2)
    fam = TwistedFamily(m)
    phi = (0.9, 2.3)
    H = fam.hamiltonian(phi)
    eig = eigensolve(H)
    mult = detect_multiplet(eig, 3)
    J1, J2 = fam.currents(phi)
    ref = hall.kubo_sum(J1, J2, mult, eig)
    assert hall.kubo_resolvent(J1, J2, H, mult) == pytest.approx(ref, abs=1e-12)
    assert hall.projector_trace(fam, phi, 1e-4, 3) == pytest.approx(ref, abs=1e-6)


def test_kubo_equals_projector_commutator_trace():
    m = hofstadter_hubbard(4, 2, (1, 4), V_nn=2.0, N=2)
    fam = TwistedFamily(m)
    phi = (0.5, 1.0)
    eig = eigensolve(fam.hamiltonian(phi))
    mult = detect_multiplet(eig, 1)
    J1, J2 = fam.currents(phi)
    # (i/q) Tr P [dP1, dP2] with dP_j = R J_j P + h.c., R the reduced resolvent
    q, E, V = mult.q, eig.values, eig.vectors
    R = sum(np.outer(V[:, n], V[:, n].conj()) / (E[0] - E[n]) for n in range(q, len(E)))
    P = V[:, :q] @ V[:, :q].conj().T
    dP = [R @ J.toarray() @ P + P @ J.toarray() @ R for J in (J1, J2)]
    tr = (1j / q * np.trace(P @ (dP[0] @ dP[1] - dP[1] @ dP[0]))).real
    assert hall.kubo_sum(J1, J2, mult, eig) == pytest.approx(tr, abs=1e-12)


def test_switching_integral_matches_quadrature():
    for omega, eta, T in ((1.3, 0.1, 20.0), (0.4, 0.05, 30.0)):
        re = quad(lambda s: s * math.exp(eta * s) * math.cos(omega * s), -T, 0, limit=400)[0]
        im = quad(lambda s: -s * math.exp(eta * s) * math.sin(omega * s), -T, 0, limit=400)[0]
        assert complex(hall.switching_integral(np.array(omega), eta, T)) == pytest.approx(re + 1j * im, abs=1e-9)
    assert complex(hall.switching_integral(np.array(2.0), 0.0, math.inf)) == pytest.approx(0.25)


def test_time_domain_limit_is_kubo():
    m = hofstadter_hubbard(4, 3, (1, 4), V_nn=2.0, N=2)
    fam = TwistedFamily(m)
    phi = (0.2, 0.6)
    eig = eigensolve(fam.hamiltonian(phi))
    mult = detect_multiplet(eig, 3)
    prm = hall.TimeDomainParams(0.1, 100.0, 10, None, (0, 0))
    Jw, Jr, ch = hall.windowed_and_region(fam, phi, prm)
    td = hall.time_domain(Jw, Jr, ch, prm, mult, eig)
    J1, J2 = fam.currents(phi)
    assert td.limit == pytest.approx(hall.kubo_sum(J1, J2, mult, eig), abs=1e-12)
    assert td.switching_ok and td.correction_ok
    with pytest.warns(UserWarning):
        hall.TimeDomainParams(0.01, 10.0, 1, None)


def test_deformation_invariance_small():
    m = hofstadter(3, 3, (1, 3), N=3)
    cut = deformed_cut(1, 1, (1, 1), {(1, 1): 0.4, (0, 1): 0.5}, m.lattice, 3.0)
    out = hall.deformation_invariance(m, [0.3, 1.0], 4, grid=6, cuts=[cut])
    assert set(out.values()) == {1}


def test_gap_closure_detected():
    # free model with half filling of a two-band structure at zero flux: gapless
    m = hofstadter(2, 2, (0, 1), N=2)
    with pytest.raises(hall.NoGappedMultiplet):
        hall.average_over_flux(TwistedFamily(m), grid=4)


def test_report_json_schema():
    rep = hall.ConductanceReport(1, 3, 0.05, 0.05)
    rep.add_check("x", 0.1, 0.2)
    d = rep.to_dict()
    assert d["schema_version"] == hall.SCHEMA_VERSION
    assert d["sigma_averaged"] == pytest.approx(1 / (6 * np.pi))
    assert d["bound_checks"][0]["passed"] is True
