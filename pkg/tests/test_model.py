import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridcz.errors import SingularParameterError
from hybridcz.model import (
    BASIS,
    DEFAULT_PARAMS,
    LOGICAL_INDICES,
    GHz_to_ueV,
    SystemParams,
    block_ids,
    build_hamiltonian,
    effective_zz_coupling,
    hamiltonian_from_json,
    hamiltonian_to_json,
    real_hamiltonian,
    single_qubit_hamiltonian,
    ueV_to_GHz,
)
from hybridcz.propagate import zz_from_spectrum

from oracles import logical_energies_by_overlap

taus = st.floats(0.0, 10.0)
energies = st.floats(-100.0, 100.0)
positive = st.floats(0.5, 30.0)


@st.composite
def params(draw):
    return SystemParams(
        eps_L=draw(energies),
        Est_L=draw(positive),
        D1_L=draw(positive),
        D2_L=draw(positive),
        eps_R=draw(energies),
        Est_R=draw(positive),
        D1_R=draw(positive),
        D2_R=draw(positive),
        eps_LR=draw(energies),
        G=draw(st.floats(0.0, 40.0)),
    )


def test_basis_catalog():
    assert len(BASIS) == 28
    assert [s.index for s in BASIS] == list(range(1, 29))
    assert [BASIS[i].charge for i in LOGICAL_INDICES] == [(1, 2, 1, 2)] * 4
    assert sum(s.is_logical for s in BASIS) == 4
    assert np.bincount(block_ids())[1:].tolist() == [9, 3, 3, 3, 3, 3, 4]


def test_unit_conversion():
    assert ueV_to_GHz(4.14) == pytest.approx(1.001047, rel=1e-6)
    assert GHz_to_ueV(ueV_to_GHz(2.5)) == pytest.approx(2.5)


@settings(max_examples=60, deadline=None)
@given(params(), taus, taus)
def test_hermitian_and_real(p, g, x):
    h = build_hamiltonian(p, g, x)
    assert h.shape == (28, 28)
    np.testing.assert_array_equal(h, h.conj().T)
    assert np.all(h.imag == 0)


@settings(max_examples=40, deadline=None)
@given(params())
def test_uncoupled_block_structure(p):
    h = real_hamiltonian(p)
    ids = block_ids()
    off = ids[:, None] != ids[None, :]
    assert np.all(h[off] == 0)


@settings(max_examples=40, deadline=None)
@given(params(), taus, taus)
def test_couplings_only_link_to_doubly_occupied_block(p, g, x):
    d = real_hamiltonian(p, g, x) - real_hamiltonian(p)
    ids = block_ids()
    assert np.all(d[np.ix_(ids != 7, ids != 7)] == 0)
    assert np.all(d[np.ix_(ids == 7, ids == 7)] == 0)


@settings(max_examples=40, deadline=None)
@given(params(), st.floats(0.1, 5.0))
def test_coupling_is_linear(p, lam):
    a = real_hamiltonian(p, 1.3, 0.0) - real_hamiltonian(p)
    b = real_hamiltonian(p, 0.0, 0.7) - real_hamiltonian(p)
    h = real_hamiltonian(p, 1.3 * lam, 0.7 * lam)
    np.testing.assert_allclose(h, real_hamiltonian(p) + lam * (a + b), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(params())
def test_first_block_is_sum_of_qubits_without_coulomb(p):
    p = p.replace(G=0.0)
    el = np.linalg.eigvalsh(single_qubit_hamiltonian(p.eps_L, p.Est_L, p.D1_L, p.D2_L))
    er = np.linalg.eigvalsh(single_qubit_hamiltonian(p.eps_R, p.Est_R, p.D1_R, p.D2_R))
    expect = np.sort((el[:, None] + er[None, :]).ravel())
    got = np.linalg.eigvalsh(real_hamiltonian(p)[:9, :9])
    np.testing.assert_allclose(got, expect, atol=1e-9)


def test_doubly_occupied_diagonal():
    p = DEFAULT_PARAMS
    h = real_hamiltonian(p)
    base = -p.eps_L / 2 - p.eps_R / 2 - p.eps_LR
    np.testing.assert_allclose(np.diag(h)[24:], [base, base + p.Est_R, base + p.Est_R, base + p.Est_R])


def test_shifted_detunings():
    p = DEFAULT_PARAMS.shifted(0.1, -0.2, 0.3)
    assert (p.eps_L, p.eps_R, p.eps_LR) == pytest.approx((90.1, 69.8, -79.7))


def test_params_dict_roundtrip():
    p = DEFAULT_PARAMS.replace(G=17.0)
    assert SystemParams.from_dict(p.as_dict()) == p
    with pytest.raises(ValueError):
        SystemParams.from_dict({"bogus": 1.0})
    with pytest.raises(ValueError):
        SystemParams(Est_L=0.0)


def test_json_roundtrip():
    h = build_hamiltonian(DEFAULT_PARAMS, 4.2, 4.4)
    np.testing.assert_array_equal(hamiltonian_from_json(hamiltonian_to_json(h)), h)


def test_zz_rate_formula():
    p = DEFAULT_PARAMS
    assert effective_zz_coupling(p, 1.0) == pytest.approx(16 / (9 * (4 * -80 + 48 + 20)))
    with pytest.raises(SingularParameterError):
        effective_zz_coupling(p.replace(eps_LR=-17.0), 1.0)


@pytest.mark.parametrize("tau", [0.1, 0.25, 0.5, 1.0])
def test_zz_formula_matches_exact_spectrum(tau):
    p = DEFAULT_PARAMS

    def combo(h):
        e = logical_energies_by_overlap(h)
        return e[0] + e[3] - e[1] - e[2]

    exact = combo(real_hamiltonian(p, 0.0, tau)) - combo(real_hamiltonian(p))
    assert exact == pytest.approx(effective_zz_coupling(p, tau), rel=0.2)
    assert zz_from_spectrum(p, 0.0, tau) == pytest.approx(exact, rel=1e-9, abs=1e-13)
