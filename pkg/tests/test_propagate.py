import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridcz.errors import LabelingAmbiguousError, NoiseTraceError
from hybridcz.model import DEFAULT_PARAMS, LOGICAL_INDICES, build_hamiltonian, real_hamiltonian
from hybridcz.noise import NOISE_FREE, NoiseRealization
from hybridcz.propagate import (
    HamiltonianTerms,
    evolve_states,
    evolve_with_record,
    idle_labeling,
    label_adiabatic,
    logical_columns,
    match_eigenbasis,
    propagate,
    qubit_frequencies,
    record_to_csv,
    rotating_frame,
    step_grid,
)
from hybridcz.pulse import AcDrive, ControlSchedule, TunnelRamp

from frozen import BROWN
from oracles import propagator_constant

P = DEFAULT_PARAMS


def constant_schedule(g, x, t):
    return ControlSchedule.single_ramp(TunnelRamp(g, x, 0.0, t))


def brown_schedule():
    return ControlSchedule.single_ramp(TunnelRamp(*BROWN["tau"], BROWN["t_ramp"], BROWN["t_wait"]))


def drive_schedule():
    f_l, _ = qubit_frequencies(P)
    return ControlSchedule.single_drive(AcDrive(27.0, 3.1, 2 * math.pi * f_l, -math.pi / 2, 0.72, 1 / 12))


def test_terms_reproduce_builder():
    t = HamiltonianTerms.from_params(P)
    c = np.array([4.2, 4.4, 0.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(t.matrix(c), real_hamiltonian(P, 4.2, 4.4), atol=1e-12)
    shifted = t.matrix(c, np.array([0.1, -0.2, 0.3]))
    np.testing.assert_allclose(shifted, real_hamiltonian(P.shifted(0.1, -0.2, 0.3), 4.2, 4.4), atol=1e-12)
    drive = t.matrix(np.array([0, 0, 1.5, 0.2, 0, 0]))
    ref = real_hamiltonian(P.replace(eps_L=91.5, D1_L=8.6, D2_L=8.6))
    np.testing.assert_allclose(drive, ref, atol=1e-12)


@pytest.mark.parametrize("method", ["rk", "expm", "midpoint"])
@pytest.mark.parametrize("tau", [(0.0, 0.0), (1.5, 1.5), (4.2, 4.4)])
def test_constant_hamiltonian_matches_matrix_exponential(method, tau):
    t = 1.3
    u = propagate(P, constant_schedule(*tau, t), method=method).U_full
    ref = propagator_constant(build_hamiltonian(P, *tau), t)
    tol = 1e-7 if method == "rk" else 1e-10
    np.testing.assert_allclose(u, ref, atol=tol)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0), st.floats(0.05, 2.0))
def test_constant_hamiltonian_property(g, x, t):
    u = propagate(P, constant_schedule(g, x, t), method="expm").U_full
    np.testing.assert_allclose(u, propagator_constant(build_hamiltonian(P, g, x), t), atol=1e-10)


@pytest.mark.parametrize("sched", [brown_schedule, drive_schedule])
@pytest.mark.parametrize("method", ["rk", "expm"])
def test_unitarity(sched, method):
    r = propagate(P, sched(), method=method)
    assert r.unitarity_defect < 1e-8


def test_integrators_agree_on_ramp():
    s = brown_schedule()
    a = propagate(P, s, method="rk", tol=1e-11).U_full
    b = propagate(P, s, method="expm").U_full
    assert np.abs(a - b).max() < 1e-5
    c = propagate(P, s, method="expm", max_step=0.0025).U_full
    assert np.abs(a - c).max() < np.abs(a - b).max()


def test_midpoint_converges_at_second_order():
    s = brown_schedule()
    ref = propagate(P, s, method="expm", max_step=0.00125).U_full
    e1 = np.abs(propagate(P, s, method="midpoint", max_step=0.0025).U_full - ref).max()
    e2 = np.abs(propagate(P, s, method="midpoint", max_step=0.00125).U_full - ref).max()
    assert 3.0 < e1 / e2 < 5.0


def test_symmetric_ramp_time_reversal():
    ramp = TunnelRamp(4.2, 4.4, 2.25)
    u_up = propagate(P, ControlSchedule.single_ramp(TunnelRamp(4.2, 4.4, 0.0, 0.0)), method="expm").U_full
    assert np.allclose(u_up, np.eye(28))
    full = propagate(P, ControlSchedule.single_ramp(ramp), method="expm").U_full
    # U(T) of a time-symmetric real Hamiltonian is symmetric
    np.testing.assert_allclose(full, full.T, atol=1e-9)


def test_time_series_noise_matches_constant():
    s = brown_schedule()
    const = NoiseRealization.constant(0.3, -0.2, 0.1)
    n = int(math.ceil(s.duration / 0.01)) + 1
    series = NoiseRealization(np.repeat(const.values[:, None], n, 1), dt=0.01)
    a = logical_columns(P, s, [const])
    b = logical_columns(P, s, [series])
    # the sampled trace adds grid points, so agreement is at the step-error level
    np.testing.assert_allclose(a, b, atol=1e-6)
    with pytest.raises(NoiseTraceError):
        propagate(P, s, NoiseRealization(np.zeros((3, 3)), dt=0.01))


def test_batch_equals_individual_runs():
    s = brown_schedule()
    ns = [NOISE_FREE, NoiseRealization.constant(0.5, 0.0, 0.0), NoiseRealization.constant(0.0, -0.4, 0.2)]
    batch = logical_columns(P, s, ns)
    for k, n in enumerate(ns):
        np.testing.assert_allclose(batch[k], logical_columns(P, s, [n])[0], atol=1e-12)


def test_step_grid_respects_breakpoints_and_drive():
    s = brown_schedule()
    grid = step_grid(s)
    assert grid[0] == 0 and grid[-1] == pytest.approx(s.duration)
    for b in s.breakpoints():
        assert np.min(np.abs(grid - b)) < 1e-12
    assert np.diff(grid).max() <= 0.005 + 1e-12
    d = drive_schedule()
    f = d.max_carrier_frequency(0, d.duration)
    assert np.diff(step_grid(d)).max() <= 1 / (20 * f) + 1e-12


def test_evolve_states_rejects_bad_input():
    with pytest.raises(ValueError):
        evolve_states(P, brown_schedule(), np.zeros((2, 28, 4)), [NOISE_FREE])
    with pytest.raises(ValueError):
        evolve_states(P, brown_schedule(), np.eye(28)[:, :4], method="euler")


# ---------------------------------------------------------------------------
# labeling
# ---------------------------------------------------------------------------
def test_idle_labeling_is_identity_without_tunnelling():
    p = P.replace(D1_L=0.0, D2_L=0.0, D1_R=0.0, D2_R=0.0)
    lab = label_adiabatic(p)
    np.testing.assert_allclose(np.abs(lab.vectors), np.eye(28), atol=1e-12)
    assert lab.min_overlap == pytest.approx(1.0)


def test_logical_labels_on_table_states():
    lab = idle_labeling(P)
    for i in LOGICAL_INDICES:
        assert np.argmax(np.abs(lab.vectors[:, i])) == i
        assert abs(lab.vectors[i, i]) ** 2 > 0.9
    assert np.all(np.diff(lab.logical_energies) > 0)


def test_labels_track_continuously_to_pink_tuning():
    lab0 = idle_labeling(P)
    lab = label_adiabatic(P, 1.5, 1.5)
    assert lab.min_overlap > 0.9
    for i in LOGICAL_INDICES:
        assert abs(lab0.vectors[:, i].conj() @ lab.vectors[:, i]) ** 2 > 0.9


def test_labeling_is_eigenbasis():
    lab = label_adiabatic(P, 4.2, 4.4)
    h = real_hamiltonian(P, 4.2, 4.4)
    np.testing.assert_allclose(h @ lab.vectors, lab.vectors * lab.energies, atol=1e-9)


def test_ambiguity_is_reported():
    with pytest.raises(LabelingAmbiguousError) as exc:
        label_adiabatic(P, 4.2, 4.4, threshold=1.01)
    assert exc.value.step is not None and exc.value.overlap is not None


@settings(max_examples=30, deadline=None)
@given(st.permutations(range(6)), st.floats(0.1, 1.0))
def test_match_recovers_permuted_basis(order, scale):
    rng = np.random.default_rng(len(order))
    e = np.arange(6) * 1.0
    q, _ = np.linalg.qr(rng.standard_normal((6, 6)) * 0.05 * scale + np.eye(6))
    h = q @ np.diag(e) @ q.T
    ref = q[:, list(order)]
    energies, vec, _, ov = match_eigenbasis(h, ref)
    np.testing.assert_allclose(energies, e[list(order)], atol=1e-12)
    np.testing.assert_allclose(ov, 1.0, atol=1e-12)


def test_match_rotates_degenerate_cluster_onto_reference():
    h = np.diag([0.0, 1.0, 1.0, 2.0])
    c, s = math.cos(0.3), math.sin(0.3)
    ref = np.eye(4, dtype=complex)
    ref[1:3, 1:3] = [[c, -s], [s, c]]
    _, vec, _, ov = match_eigenbasis(h, ref)
    np.testing.assert_allclose(np.abs(vec), np.abs(ref), atol=1e-12)
    np.testing.assert_allclose(ov, 1.0, atol=1e-12)


def test_noise_shifted_idle_basis():
    lab = idle_labeling(P, np.array([1.0, -1.0, 0.5]))
    h = real_hamiltonian(P.shifted(1.0, -1.0, 0.5))
    np.testing.assert_allclose(h @ lab.vectors, lab.vectors * lab.energies, atol=1e-9)


def test_rotating_frame_is_diagonal_unitary():
    r = rotating_frame(P, 1.7)
    np.testing.assert_allclose(np.abs(np.diag(r)), 1.0)
    assert np.count_nonzero(r - np.diag(np.diag(r))) == 0


# ---------------------------------------------------------------------------
# recorded evolution
# ---------------------------------------------------------------------------
def test_record_leakage_rises_and_returns():
    rec = evolve_with_record(P, brown_schedule(), sample_dt=0.05)
    pops = rec.populations
    np.testing.assert_allclose(pops.sum(axis=2), 1.0, atol=1e-9)
    leak = rec.contributions["leak"]
    assert leak[0] < 1e-12
    assert leak.max() > 3 * leak[-1]
    assert rec.times[-1] == pytest.approx(brown_schedule().duration)
    text = record_to_csv(rec)
    assert text.splitlines()[0] == "t_ns,initial_state,basis_index,population"
    assert len(text.splitlines()) == 1 + len(rec.times) * 4 * 28
