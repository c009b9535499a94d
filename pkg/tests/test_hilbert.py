import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavsme import CavityParams
from cavsme.hilbert import (FockSpace, SymmetricSpinSpace, annihilation, coherent_state,
                            collective_ladder, expect, fock_state, hamiltonian, identity,
                            joint_operators, number, partial_trace, tensor)
from cavsme.params import ParameterError


def test_annihilation_on_fock_states():
    a = annihilation(FockSpace(5))
    assert np.allclose(a @ fock_state(0, 6), 0.0)
    assert np.allclose(a @ fock_state(1, 6), fock_state(0, 6))
    assert a[3, 4] == pytest.approx(2.0)


@pytest.mark.parametrize("cutoff", [0, 1, 3, 7])
def test_truncated_commutator(cutoff):
    a = annihilation(FockSpace(cutoff))
    d = cutoff + 1
    expected = np.eye(d)
    expected[-1, -1] -= d
    assert np.allclose(a @ a.conj().T - a.conj().T @ a, expected, rtol=0, atol=1e-13)


def test_collective_ladder_values():
    up = collective_ladder(SymmetricSpinSpace(4), "raise")
    out = up @ fock_state(1, 5)
    assert out[2] == pytest.approx(math.sqrt(6))
    assert np.count_nonzero(out) == 1
    assert np.allclose(up @ fock_state(4, 5), 0.0)
    down = collective_ladder(SymmetricSpinSpace(1), "lower")
    assert np.allclose(down @ fock_state(1, 2), fock_state(0, 2))


@pytest.mark.parametrize("n_atoms", [0, 1, 2, 5])
def test_collective_ladder_adjoint(n_atoms):
    s = SymmetricSpinSpace(n_atoms)
    assert np.array_equal(collective_ladder(s, "raise").conj().T, collective_ladder(s, "lower"))


def test_collective_ladder_bad_direction():
    with pytest.raises(ValueError):
        collective_ladder(SymmetricSpinSpace(2), "sideways")


def test_hamiltonian_zero_without_couplings():
    p = CavityParams(g=0.0, g_s=0.0, n_photons=2)
    for v in ("dicke", "shifted", "zeno"):
        assert np.allclose(hamiltonian(p, v), 0.0)


def test_hamiltonian_dicke_matrix_element():
    p = CavityParams(g=0.3, n_atoms=1, n_photons=1)
    H = hamiltonian(p, "dicke")
    j = 1 * 2 + 1  # |n=1>|m=1>
    assert H[j, j] == pytest.approx(0.3)


def test_shifted_hamiltonian_eigenvalues():
    p = CavityParams(g=1.0, n_atoms=2, n_photons=1)
    H = hamiltonian(p, "shifted")
    # one photon: diagonal equals g (n - N/2)
    assert H[0 * 2 + 1, 0 * 2 + 1] == pytest.approx(-1.0)
    assert H[2 * 2 + 1, 2 * 2 + 1] == pytest.approx(1.0)
    assert H[1 * 2 + 1, 1 * 2 + 1] == pytest.approx(0.0)


@settings(max_examples=30, deadline=None)
@given(g=st.floats(-2, 2), g_s=st.floats(-2, 2), n_atoms=st.integers(0, 4),
       n_photons=st.integers(0, 5), variant=st.sampled_from(["dicke", "shifted", "zeno"]))
def test_hamiltonian_hermitian(g, g_s, n_atoms, n_photons, variant):
    p = CavityParams(g=g, g_s=g_s, n_atoms=n_atoms, n_photons=n_photons)
    H = hamiltonian(p, variant)
    assert np.max(np.abs(H - H.conj().T)) < 1e-12


def test_coherent_state_basics():
    assert np.array_equal(coherent_state(0.0, FockSpace(4)), fock_state(0, 5))
    with pytest.warns(RuntimeWarning):  # 1.6e-6 of the norm lies above three photons
        psi = coherent_state(0.2828, FockSpace(3))
    a = annihilation(FockSpace(3))
    assert abs(expect(a, psi) - 0.2828) < 1e-4
    assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-15)


def test_coherent_state_warns_when_truncated():
    with pytest.warns(RuntimeWarning):
        coherent_state(2.0, FockSpace(3))


@settings(max_examples=30, deadline=None)
@given(re=st.floats(-1.2, 1.2), im=st.floats(-1.2, 1.2))
def test_coherent_number_expectation(re, im):
    xi = complex(re, im)
    space = FockSpace(30)
    psi = coherent_state(xi, space)
    assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-12)
    assert expect(number(space), psi).real == pytest.approx(abs(xi) ** 2, abs=1e-9)


def test_tensor_identity():
    assert np.array_equal(tensor(identity(3), identity(4)), identity(12))


def test_partial_trace_product_round_trip():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    A = A @ A.conj().T
    A /= np.trace(A)
    B = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    B = B @ B.conj().T
    B /= np.trace(B)
    rho = tensor(A, B)
    assert np.max(np.abs(partial_trace(rho, (3, 4), "system") - A)) < 1e-12
    assert np.max(np.abs(partial_trace(rho, (3, 4), "cavity") - B)) < 1e-12
    with pytest.raises(ValueError):
        partial_trace(rho, (3, 4), "both")
    with pytest.raises(ValueError):
        partial_trace(rho, (2, 4))


def test_joint_basis_order():
    p = CavityParams(n_atoms=2, n_photons=3)
    ops = joint_operators(p, "dicke")
    # atom index is slowest: j = n (Np + 1) + m
    j = 2 * 4 + 1
    assert ops.n_atom[j, j] == 2
    assert ops.n_phot[j, j] == 1


def test_bad_spaces():
    with pytest.raises(ParameterError):
        FockSpace(-1)
    with pytest.raises(ParameterError):
        SymmetricSpinSpace(-2)
    with pytest.raises(ValueError):
        expect(np.eye(2), np.ones(3))
