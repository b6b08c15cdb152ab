"""Time evolution of the 28-level system and adiabatic state labeling.

Two integrators are provided.

``"rk"``
    Adaptive 8th-order Runge-Kutta (DOP853) on the matrix ODE, restarted at
    every corner of the control waveforms.
``"expm"``
    Fixed-step fourth-order commutator-free Magnus scheme: two exponentials
    per step, each applied to the state with a Chebyshev expansion.  It
    propagates many noise realizations at once and is the production path.

``"midpoint"`` is the second-order piecewise-constant exponential, kept as a
cross-check.  Noise enters only as diagonal detuning shifts, held constant
within a step (and within a sample of a time series).
"""

from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import linear_sum_assignment
from scipy.special import jv

from .errors import IntegrationError, LabelingAmbiguousError, NoiseTraceError
from .model import DIM, LOGICAL_INDICES, SystemParams, real_hamiltonian
from .noise import NOISE_FREE, NoiseRealization
from .pulse import ControlSchedule

TWO_PI = 2.0 * math.pi
LEAKAGE_INDICES = tuple(i for i in range(DIM) if i not in LOGICAL_INDICES)

# Commutator-free Magnus (order 4): Gauss nodes and exponent weights.
_C1 = 0.5 - math.sqrt(3) / 6
_C2 = 0.5 + math.sqrt(3) / 6
_A1 = (3 - 2 * math.sqrt(3)) / 12
_A2 = (3 + 2 * math.sqrt(3)) / 12

DEFAULT_MAX_STEP = 0.005
DRIVE_POINTS_PER_PERIOD = 20


# ---------------------------------------------------------------------------
# Hamiltonian as a linear combination of fixed operators
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class HamiltonianTerms:
    """``H = h0 + sum_k c_k op_k + diag(noise @ shift)`` for one device.

    The control operators are exact finite differences of
    :func:`~hybridcz.model.real_hamiltonian`, which is affine in every
    detuning, tunnel coupling and intra-qubit tunnelling.  ``ops`` is ordered
    like :class:`~hybridcz.pulse.Controls`: ``tau_2g1g, tau_2x1g, eps_L,
    delta_L, eps_R, delta_R``.  ``shift`` (28 x 3) maps the detuning noise of
    channels ``L, R, LR`` onto the (diagonal) basis energies.
    """

    params: SystemParams
    h0: np.ndarray
    ops: np.ndarray
    shift: np.ndarray

    @classmethod
    def from_params(cls, params: SystemParams) -> "HamiltonianTerms":
        return _terms(params)

    def matrix(self, controls=None, noise=None) -> np.ndarray:
        h = self.h0.copy()
        if controls is not None:
            h += np.tensordot(np.asarray(controls, dtype=float), self.ops, 1)
        if noise is not None:
            h[np.diag_indices(DIM)] += self.shift @ np.asarray(noise, dtype=float)
        return h

    def matrices(self, controls: np.ndarray) -> np.ndarray:
        """Noise-free Hamiltonians for a stack of control rows, shape ``(n, 28, 28)``."""
        flat = self.h0.reshape(-1) + controls @ self.ops.reshape(6, -1)
        return flat.reshape(-1, DIM, DIM)


@functools.lru_cache(maxsize=64)
def _terms(params: SystemParams) -> HamiltonianTerms:
    h0 = real_hamiltonian(params)
    p = params
    ops = np.stack(
        [
            real_hamiltonian(p, 1.0, 0.0) - h0,
            real_hamiltonian(p, 0.0, 1.0) - h0,
            real_hamiltonian(p.replace(eps_L=p.eps_L + 1.0)) - h0,
            real_hamiltonian(p.replace(D1_L=p.D1_L + 1.0, D2_L=p.D2_L + 1.0)) - h0,
            real_hamiltonian(p.replace(eps_R=p.eps_R + 1.0)) - h0,
            real_hamiltonian(p.replace(D1_R=p.D1_R + 1.0, D2_R=p.D2_R + 1.0)) - h0,
        ]
    )
    shift = np.stack(
        [
            np.diag(real_hamiltonian(p.shifted(d_eps_L=1.0)) - h0),
            np.diag(real_hamiltonian(p.shifted(d_eps_R=1.0)) - h0),
            np.diag(real_hamiltonian(p.shifted(d_eps_LR=1.0)) - h0),
        ],
        axis=1,
    )
    for a in (h0, ops, shift):
        a.setflags(write=False)
    return HamiltonianTerms(params, h0, ops, shift)


# ---------------------------------------------------------------------------
# Adiabatic labeling
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class AdiabaticLabeling:
    """Eigenbasis of one Hamiltonian with every eigenvector tied to a basis label.

    ``vectors[:, b]`` is the eigenvector continuously connected to Table
    basis state ``b`` (0-based) and ``energies[b]`` its eigenvalue.
    ``perm[b]`` is the index of that eigenvector in ascending-energy order.
    """

    energies: np.ndarray
    vectors: np.ndarray
    perm: np.ndarray
    min_overlap: float = 1.0

    @property
    def logical_vectors(self) -> np.ndarray:
        return self.vectors[:, LOGICAL_INDICES]

    @property
    def logical_energies(self) -> np.ndarray:
        return self.energies[list(LOGICAL_INDICES)]


def _gauge(vectors: np.ndarray) -> np.ndarray:
    """Make each column's largest-magnitude entry real and positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    ph = vectors[idx, np.arange(vectors.shape[1])]
    return vectors * (np.abs(ph) / ph)[None, :].conj()


def _clusters(energies: np.ndarray, tol: float) -> list[np.ndarray]:
    order = np.argsort(energies)
    groups, cur = [], [order[0]]
    for a, b in zip(order[:-1], order[1:]):
        if energies[b] - energies[a] <= tol:
            cur.append(b)
        else:
            groups.append(np.array(cur))
            cur = [b]
    groups.append(np.array(cur))
    return groups


def match_eigenbasis(h: np.ndarray, reference: np.ndarray, degeneracy_tol: float = 1e-9):
    """Diagonalize ``h`` and align its eigenvectors with labeled ``reference`` columns.

    Eigenvalues closer than ``degeneracy_tol`` form a cluster whose basis is
    rotated onto the reference columns it absorbs, so the result does not
    depend on how the eigensolver orders a degenerate subspace.

    Returns
    -------
    energies, vectors, perm, overlaps
        ``vectors[:, b]`` continues ``reference[:, b]``; ``overlaps[b]`` is
        ``|<reference_b | vectors_b>|``.
    """
    w, v = np.linalg.eigh(h)
    groups = _clusters(w, degeneracy_tol)
    weight = np.abs(v.conj().T @ reference) ** 2
    rows, owner = [], []
    for gi, g in enumerate(groups):
        agg = weight[g].sum(axis=0)
        for _ in g:
            rows.append(agg)
            owner.append(gi)
    r_idx, labels = linear_sum_assignment(-np.asarray(rows))
    out = np.empty_like(reference, dtype=complex)
    energies = np.empty(reference.shape[1])
    perm = np.empty(reference.shape[1], dtype=int)
    by_group: dict[int, list[int]] = {}
    for r, lab in zip(r_idx, labels):
        by_group.setdefault(owner[r], []).append(lab)
    for gi, labs in by_group.items():
        g = groups[gi]
        vg = v[:, g]
        if len(g) == 1:
            out[:, labs[0]] = vg[:, 0]
        else:
            m = vg.conj().T @ reference[:, labs]
            a, _, bh = np.linalg.svd(m)
            out[:, labs] = vg @ (a @ bh)
        for k, lab in enumerate(labs):
            energies[lab] = w[g].mean() if len(g) > 1 else w[g[0]]
            perm[lab] = g[min(k, len(g) - 1)]
    out = _gauge(out)
    overlaps = np.abs(np.einsum("ij,ij->j", reference.conj(), out))
    return energies, out, perm, overlaps


def _continue(hs, ref, check, threshold, split_clusters=(), offset=0):
    """Maximal-overlap continuation of the labeled columns ``ref`` through ``hs``.

    Clusters in ``split_clusters`` are degenerate in ``ref`` and may split
    arbitrarily at the first point; there they are judged by their weight
    in the common subspace instead of column by column.
    """
    start = ref
    worst = 1.0
    energies = perm = None
    for k, h in enumerate(hs):
        energies, ref, perm, ov = match_eigenbasis(h, ref)
        if k == 0:
            for g in split_clusters:
                ov[g] = np.sqrt(np.sum(np.abs(start[:, g].conj().T @ ref[:, g]) ** 2, axis=0))
        low = ov[check].min()
        worst = min(worst, low)
        if low < threshold:
            bad = check[int(np.argmin(ov[check]))]
            raise LabelingAmbiguousError(
                f"continuation lost state {bad + 1} at path step {k + offset} (overlap {low:.3f})",
                step=k + offset,
                overlap=float(low),
            )
    return energies, ref, perm, worst


def _far_detuned_path(params, noise, steps, scale_max):
    """Uncoupled Hamiltonians with ``eps * s`` and tunnellings ``/ s``, ``s`` from ``scale_max`` to 1."""
    shift = _terms(params).shift @ noise
    out = []
    for s in np.geomspace(scale_max, 1.0, steps) if steps > 1 else [1.0]:
        p = params.replace(
            eps_L=params.eps_L * s,
            eps_R=params.eps_R * s,
            D1_L=params.D1_L / s,
            D2_L=params.D2_L / s,
            D1_R=params.D1_R / s,
            D2_R=params.D2_R / s,
        )
        h = real_hamiltonian(p)
        h[np.diag_indices(DIM)] += shift
        out.append(h)
    return out


def label_adiabatic(
    params: SystemParams,
    tau_2g1g: float = 0.0,
    tau_2x1g: float = 0.0,
    *,
    noise=None,
    steps: int = 100,
    scale_max: float = 20.0,
    threshold: float = 0.6,
    check=None,
) -> AdiabaticLabeling:
    """Label the eigenstates at one tuning by continuation from the far-detuned limit.

    The path has two legs of ``steps`` points each.  First, with the
    inter-qubit tunnelling off, the detunings ``eps_L, eps_R`` are multiplied
    by ``s`` and the intra-qubit tunnellings divided by ``s`` for ``s``
    geometric from ``scale_max`` down to 1; at ``s = scale_max`` eigenvectors
    are matched to basis states.  Second, both inter-qubit couplings are
    ramped linearly from zero to their targets.  Every point is matched to
    the previous one by maximal overlap.  Crossings on the first leg are
    exact (the blocks are decoupled), so labels never swap there.

    Parameters
    ----------
    noise : array-like of 3, optional
        Detuning shifts ``(L, R, LR)`` included at every path point.
    check : sequence of int, optional
        Labels whose overlap must stay above ``threshold``; all 28 by default.

    Raises
    ------
    LabelingAmbiguousError
        If a checked label's overlap between consecutive points drops
        below ``threshold``.
    """
    noise = np.zeros(3) if noise is None else np.asarray(noise, dtype=float)
    check = list(range(DIM)) if check is None else list(check)
    if not np.any(noise) and (steps, scale_max) == (100, 20.0):
        idle = _idle_labeling(params)
        e, ref, perm, worst = idle.energies, idle.vectors, idle.perm, idle.min_overlap
    else:
        path = _far_detuned_path(params, noise, steps, scale_max)
        diag = np.diag(path[0])
        first = [g for g in _clusters(diag, 1e-9) if len(g) > 1]
        e, ref, perm, worst = _continue(path, np.eye(DIM, dtype=complex), check, threshold, first)
    if tau_2g1g == 0 and tau_2x1g == 0:
        return AdiabaticLabeling(e, ref, perm, float(worst))
    terms = _terms(params)
    h0 = terms.matrix(noise=noise).real
    lams = np.linspace(0.0, 1.0, steps + 1)[1:]
    hs = [h0 + lam * (tau_2g1g * terms.ops[0] + tau_2x1g * terms.ops[1]).real for lam in lams]
    degenerate = [g for g in _clusters(e, 1e-9) if len(g) > 1]
    e, ref, perm, w2 = _continue(hs, ref, check, threshold, degenerate, offset=steps)
    return AdiabaticLabeling(e, ref, perm, float(min(worst, w2)))


@functools.lru_cache(maxsize=256)
def _idle_labeling(params: SystemParams) -> AdiabaticLabeling:
    path = _far_detuned_path(params, np.zeros(3), 100, 20.0)
    first = [g for g in _clusters(np.diag(path[0]), 1e-9) if len(g) > 1]
    e, ref, perm, worst = _continue(path, np.eye(DIM, dtype=complex), list(range(DIM)), 0.6, first)
    return AdiabaticLabeling(e, ref, perm, float(worst))


def idle_labeling(params: SystemParams, noise=None) -> AdiabaticLabeling:
    """Labeled eigenbasis of the uncoupled device, optionally noise-shifted.

    A noise-shifted basis is matched in one step against the noise-free
    labeled basis and falls back to full continuation when that is ambiguous.
    """
    base = _idle_labeling(params)
    if noise is None or not np.any(noise):
        return base
    h = _terms(params).matrix(noise=noise)
    e, vec, perm, ov = match_eigenbasis(h, base.vectors)
    if ov.min() < 0.6:
        return label_adiabatic(params, noise=noise)
    return AdiabaticLabeling(e, vec, perm, float(ov.min()))


def idle_logical_energies(params: SystemParams) -> np.ndarray:
    return _idle_labeling(params).logical_energies


def zz_from_spectrum(params: SystemParams, tau_2g1g: float, tau_2x1g: float) -> float:
    """Exchange-induced shift of ``E00 + E11 - E01 - E10`` (GHz) at static couplings."""

    def combo(lab):
        e = lab.logical_energies
        return e[0] + e[3] - e[1] - e[2]

    return combo(label_adiabatic(params, tau_2g1g, tau_2x1g, check=LOGICAL_INDICES)) - combo(
        _idle_labeling(params)
    )


def qubit_frequencies(params: SystemParams) -> tuple[float, float]:
    """Idle splittings (GHz) of qubits L and R, averaged over the spectator state."""
    e = idle_logical_energies(params)
    f_l = 0.5 * ((e[2] - e[0]) + (e[3] - e[1]))
    f_r = 0.5 * ((e[1] - e[0]) + (e[3] - e[2]))
    return float(f_l), float(f_r)


# ---------------------------------------------------------------------------
# Step grid and exponential integrator
# ---------------------------------------------------------------------------
def step_grid(schedule: ControlSchedule, max_step: float = DEFAULT_MAX_STEP, noise_dt=None) -> np.ndarray:
    """Step boundaries aligned with control corners and noise samples."""
    bps = schedule.breakpoints()
    out = [bps[:1]]
    for a, b in zip(bps[:-1], bps[1:]):
        if b - a <= 1e-13:
            continue
        h = max_step
        f = schedule.max_carrier_frequency(a, b)
        if f > 0:
            h = min(h, 1.0 / (DRIVE_POINTS_PER_PERIOD * f))
        pts = [a, b]
        if noise_dt is not None:
            j0, j1 = math.floor(a / noise_dt) + 1, math.ceil(b / noise_dt)
            pts.extend(np.arange(j0, j1) * noise_dt)
        pts = np.unique(np.asarray(pts))
        pts = pts[np.concatenate(([True], np.diff(pts) > 1e-12))]
        pts[-1] = b
        for x, y in zip(pts[:-1], pts[1:]):
            n = max(1, math.ceil((y - x) / h - 1e-9))
            out.append(np.linspace(x, y, n + 1)[1:])
    return np.concatenate(out)


def _cheb_apply(b_mat, dshift, y, theta):
    """``exp(-i theta (B + diag(d))) y`` for a batch of diagonal shifts.

    ``b_mat`` is real symmetric (28, 28); ``dshift`` has shape (28, N) or is
    ``None``; ``y`` is complex with shape (28, N, k).
    """
    gersh = np.abs(b_mat).sum(axis=1) - np.abs(np.diag(b_mat))
    lo = np.min(np.diag(b_mat) - gersh)
    hi = np.max(np.diag(b_mat) + gersh)
    if dshift is not None:
        lo += dshift.min()
        hi += dshift.max()
    a = 0.5 * (hi + lo)
    r = max(0.5 * (hi - lo), 1e-12)
    z = theta * r
    kmax = int(z + 10 + 3 * z ** (1 / 3))
    c = jv(np.arange(kmax + 1), z)
    while abs(c[-1]) > 1e-17 and kmax < 200:
        kmax += 4
        c = jv(np.arange(kmax + 1), z)
    sig = np.abs(c) > 1e-18
    kmax = int(np.nonzero(sig)[0].max()) if sig.any() else 0
    c = c[: kmax + 1]
    bs = (b_mat - a * np.eye(DIM)) / r
    ds = None if dshift is None else (dshift / r)[:, :, None]
    shape = y.shape

    def apply_x(v):
        flat = np.ascontiguousarray(v).reshape(DIM, -1)
        out = (bs @ flat.view(np.float64)).view(np.complex128).reshape(shape)
        if ds is not None:
            out += ds * v
        return out

    coef = 2.0 * c * (-1j) ** np.arange(kmax + 1)
    coef[0] = c[0]
    t0 = y
    acc = coef[0] * t0
    if kmax >= 1:
        t1 = apply_x(t0)
        acc = acc + coef[1] * t1
        for k in range(2, kmax + 1):
            t2 = 2.0 * apply_x(t1) - t0
            acc += coef[k] * t2
            t0, t1 = t1, t2
    return acc * np.exp(-1j * theta * a)


def _noise_stack(noises: Sequence[NoiseRealization], duration: float):
    """Shifts as (N, 3) constants or (N, 3, n) series with a common dt."""
    if all(n.is_constant for n in noises):
        return np.stack([n.values for n in noises]), None
    if any(n.is_constant for n in noises):
        raise NoiseTraceError("cannot mix constant and time-series noise in one batch")
    dt = noises[0].dt
    if any(abs(n.dt - dt) > 1e-15 for n in noises):
        raise NoiseTraceError("time-series noise must share dt")
    for n in noises:
        if not n.covers(duration):
            raise NoiseTraceError(f"noise trace ({n.duration:.4g} ns) shorter than schedule ({duration:.4g} ns)")
    m = min(n.values.shape[1] for n in noises)
    return np.stack([n.values[:, :m] for n in noises]), dt


def evolve_states(
    params: SystemParams,
    schedule: ControlSchedule,
    states: np.ndarray,
    noises: Sequence[NoiseRealization] = (NOISE_FREE,),
    *,
    method: str = "expm",
    max_step: float = DEFAULT_MAX_STEP,
    tol: float = 1e-10,
    sample_times=None,
):
    """Propagate initial states under every noise realization.

    Parameters
    ----------
    states : ndarray
        Complex array of shape ``(N, 28, k)`` or ``(28, k)`` (shared by all
        realizations).
    sample_times : array-like, optional
        Extra times at which to snapshot the states (``"expm"`` only).

    Returns
    -------
    final : ndarray, shape (N, 28, k)
    snapshots : list of ndarray or None
        ``(N, 28, k)`` states at each sample time.
    """
    noises = list(noises)
    n_real = len(noises)
    states = np.asarray(states, dtype=complex)
    if states.ndim == 2:
        states = np.broadcast_to(states, (n_real,) + states.shape)
    if states.shape[:2] != (n_real, DIM):
        raise ValueError("states must have shape (N, 28, k)")
    duration = schedule.duration
    shifts, noise_dt = _noise_stack(noises, duration)
    if duration <= 0:
        return states.copy(), ([states.copy() for _ in sample_times] if sample_times is not None else None)
    if method == "rk":
        if sample_times is not None:
            raise ValueError("sample_times requires the exponential integrator")
        out = np.stack(
            [_rk_single(params, schedule, states[i], shifts[i], noise_dt, tol) for i in range(n_real)]
        )
        return out, None
    if method not in ("expm", "midpoint"):
        raise ValueError(f"unknown method {method!r}")
    return _expm_batch(params, schedule, states, shifts, noise_dt, max_step, method, sample_times)


def _expm_batch(params, schedule, states, shifts, noise_dt, max_step, method, sample_times):
    terms = _terms(params)
    grid = step_grid(schedule, max_step, noise_dt)
    if sample_times is not None:
        sample_times = np.asarray(sample_times, dtype=float)
        grid = np.unique(np.concatenate([grid, sample_times]))
        grid = grid[np.concatenate(([True], np.diff(grid) > 1e-12))]
    h = np.diff(grid)
    t0 = grid[:-1]
    if method == "expm":
        nodes = np.stack([t0 + _C1 * h, t0 + _C2 * h], axis=1)
    else:
        nodes = (t0 + 0.5 * h)[:, None]
    ctrl = schedule.control_matrix(nodes.reshape(-1)).reshape(nodes.shape + (6,))
    mid = t0 + 0.5 * h
    if noise_dt is None:
        dconst = terms.shift @ shifts.T  # (28, N)
        dconst = None if not np.any(dconst) else dconst
    else:
        idx = np.minimum(np.floor(mid / noise_dt + 1e-9).astype(int), shifts.shape[2] - 1)
    # (28, N, k) layout keeps the batch in one matrix product
    y = np.ascontiguousarray(np.transpose(states, (1, 0, 2)))
    snaps = []
    sample_iter = iter(sample_times) if sample_times is not None else None
    next_sample = next(sample_iter, None) if sample_iter is not None else None
    if next_sample is not None and next_sample <= grid[0] + 1e-12:
        snaps.append(np.transpose(y, (1, 0, 2)).copy())
        next_sample = next(sample_iter, None)
    chunk = 256
    for c0 in range(0, len(h), chunk):
        c1 = min(c0 + chunk, len(h))
        if method == "expm":
            m1 = terms.matrices(ctrl[c0:c1, 0])
            m2 = terms.matrices(ctrl[c0:c1, 1])
            first = _A2 * m1 + _A1 * m2
            second = _A1 * m1 + _A2 * m2
        else:
            first = terms.matrices(ctrl[c0:c1, 0])
        for j in range(c1 - c0):
            step = c0 + j
            if noise_dt is None:
                d = dconst
            else:
                d = terms.shift @ shifts[:, :, idx[step]].T
            theta = TWO_PI * h[step]
            if method == "expm":
                dh = None if d is None else 0.5 * d
                y = _cheb_apply(first[j], dh, y, theta)
                y = _cheb_apply(second[j], dh, y, theta)
            else:
                y = _cheb_apply(first[j], d, y, theta)
            if next_sample is not None and grid[step + 1] >= next_sample - 1e-12:
                snaps.append(np.transpose(y, (1, 0, 2)).copy())
                next_sample = next(sample_iter, None)
    final = np.transpose(y, (1, 0, 2)).copy()
    return final, (snaps if sample_times is not None else None)


def _rk_single(params, schedule, y0, shift, noise_dt, tol):
    terms = _terms(params)
    bps = list(schedule.breakpoints())
    if noise_dt is not None:
        k = np.arange(1, math.ceil(schedule.duration / noise_dt))
        bps = np.unique(np.concatenate([bps, k * noise_dt]))
        bps = list(bps[bps <= schedule.duration])
    e0 = 0.5 * (terms.h0.diagonal().max() + terms.h0.diagonal().min())
    eye = np.eye(DIM)
    # Local error compounds over the accumulated phase; scale it so that
    # ``tol`` bounds the global error.
    radius = np.abs(terms.h0 - e0 * eye).sum(axis=1).max() + np.abs(terms.ops).sum(axis=(1, 2)).max() * 10
    local_tol = max(tol / max(1.0, TWO_PI * radius * schedule.duration), 2.5e-14)
    k = y0.shape[1]
    y = np.asarray(y0, dtype=complex).copy()
    for a, b in zip(bps[:-1], bps[1:]):
        if b - a <= 1e-13:
            continue
        f = schedule.max_carrier_frequency(a, b)
        max_step = 1.0 / (DRIVE_POINTS_PER_PERIOD * f) if f > 0 else np.inf
        if noise_dt is None:
            dvec = terms.shift @ shift
        else:
            j = min(int(math.floor(0.5 * (a + b) / noise_dt + 1e-9)), shift.shape[1] - 1)
            dvec = terms.shift @ shift[:, j]
        base = terms.h0 - e0 * eye + np.diag(dvec)

        def rhs(t, v, base=base):
            c = schedule.control_matrix([t])[0]
            hm = base + np.tensordot(c, terms.ops, 1)
            return (-1j * TWO_PI) * (hm @ v.reshape(DIM, k)).reshape(-1)

        sol = solve_ivp(
            rhs, (a, b), y.reshape(-1), method="DOP853", rtol=local_tol, atol=local_tol, max_step=max_step
        )
        if sol.status != 0:
            raise IntegrationError(f"integration failed on [{a}, {b}] ns: {sol.message}")
        y = sol.y[:, -1].reshape(DIM, k) * np.exp(-1j * TWO_PI * e0 * (b - a))
    return y


# ---------------------------------------------------------------------------
# Public propagation API
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class EvolutionResult:
    """Propagator of one evolution plus an optional time series.

    Attributes
    ----------
    U_full : ndarray, shape (28, 28)
        Propagator in the fixed basis of :data:`~hybridcz.model.BASIS`.
    times : ndarray or None
        Sample times (ns).
    populations : ndarray or None
        Shape ``(n_t, 4, 28)``: population of every adiabatically labeled
        state for each logical initial state.
    contributions : dict or None
        Instantaneous ``"qt"``, ``"leak"`` and ``"phase"`` infidelity
        contributions, each of shape ``(n_t,)``.
    """

    U_full: np.ndarray
    times: np.ndarray | None = None
    populations: np.ndarray | None = None
    contributions: dict | None = field(default=None)

    @property
    def unitarity_defect(self) -> float:
        u = self.U_full
        return float(np.abs(u.conj().T @ u - np.eye(u.shape[1])).max())


def propagate(
    params: SystemParams,
    schedule: ControlSchedule,
    noise: NoiseRealization = NOISE_FREE,
    tol: float = 1e-10,
    *,
    method: str = "rk",
    max_step: float = DEFAULT_MAX_STEP,
) -> EvolutionResult:
    """Full 28 x 28 propagator ``U(T)`` solving ``dU/dt = -2 pi i H(t) U``.

    ``H(t)`` combines the device energies, the schedule's controls and the
    detuning shifts of ``noise`` (held piecewise constant over its samples).
    """
    if not noise.is_constant and not noise.covers(schedule.duration):
        raise NoiseTraceError("noise trace shorter than schedule")
    u, _ = evolve_states(
        params, schedule, np.eye(DIM, dtype=complex), [noise], method=method, max_step=max_step, tol=tol
    )
    return EvolutionResult(u[0])


def logical_columns(
    params: SystemParams,
    schedule: ControlSchedule,
    noises: Sequence[NoiseRealization] = (NOISE_FREE,),
    *,
    method: str = "expm",
    max_step: float = DEFAULT_MAX_STEP,
    tol: float = 1e-10,
    frame: bool = False,
) -> np.ndarray:
    """Evolved logical states in the labeled idle eigenbasis.

    Each realization starts in the logical eigenstates of the idle
    Hamiltonian shifted by that realization's initial detuning noise and is
    read out in the same basis.

    Returns
    -------
    ndarray, shape (N, 28, 4)
        ``out[n, b, i]`` is the amplitude on labeled state ``b`` after
        starting in logical state ``i``.  With ``frame=True`` the logical
        rows are expressed in the frame rotating at the noise-free idle
        logical energies.
    """
    noises = list(noises)
    bases = np.stack([idle_labeling(params, n.initial).vectors for n in noises])
    start = bases[:, :, list(LOGICAL_INDICES)]
    final, _ = evolve_states(params, schedule, start, noises, method=method, max_step=max_step, tol=tol)
    out = np.einsum("nab,nak->nbk", bases.conj(), final)
    if frame:
        out = rotating_frame(params, schedule.duration) @ out
    return out


def rotating_frame(params: SystemParams, t: float) -> np.ndarray:
    """``diag(exp(+2 pi i E_b t))`` on logical rows (identity on leakage rows)."""
    phases = np.zeros(DIM)
    phases[list(LOGICAL_INDICES)] = idle_logical_energies(params)
    return np.diag(np.exp(1j * TWO_PI * phases * t))


def evolve_with_record(
    params: SystemParams,
    schedule: ControlSchedule,
    noise: NoiseRealization = NOISE_FREE,
    sample_dt: float = 0.05,
    *,
    max_step: float = DEFAULT_MAX_STEP,
) -> EvolutionResult:
    """Evolve the four logical states and record labeled populations.

    At every sample time the states are expanded in the instantaneous
    eigenbasis of the tunnel-coupled (drive-free) Hamiltonian, tracked from
    the labeled idle basis by maximal overlap.  Contributions follow the
    fidelity budget applied to the partial evolution: ``qt`` and ``leak``
    are a quarter of the summed transition probabilities and ``phase`` uses
    the residuals of :func:`hybridcz.gates.fit_ideal_phases`.
    """
    from .gates import phase_deficit_from_residuals, fit_ideal_phases

    if sample_dt <= 0:
        raise ValueError("sample_dt must be positive")
    duration = schedule.duration
    n_s = int(math.floor(duration / sample_dt + 1e-9))
    times = np.append(np.arange(n_s + 1) * sample_dt, duration)
    times = np.unique(np.round(times, 12))
    lab0 = idle_labeling(params, noise.initial)
    start = lab0.vectors[:, list(LOGICAL_INDICES)]
    _, snaps = evolve_states(
        params, schedule, start[None], [noise], max_step=max_step, sample_times=times
    )
    terms = _terms(params)
    ctrl = schedule.control_matrix(times)
    ref = lab0.vectors
    pops = np.empty((len(times), 4, DIM))
    qt = np.empty(len(times))
    leak = np.empty(len(times))
    ph = np.empty(len(times))
    for j, (t, snap) in enumerate(zip(times, snaps)):
        c = ctrl[j].copy()
        c[2:] = 0.0
        h = terms.matrix(c, noise.at(t) if not noise.is_constant else noise.values)
        _, ref, _, _ = match_eigenbasis(h, ref)
        amp = ref.conj().T @ snap[0]
        p = np.abs(amp) ** 2
        pops[j] = p.T
        blk = amp[list(LOGICAL_INDICES)]
        pl = np.abs(blk) ** 2
        qt[j] = (pl.sum() - np.trace(pl)) / 4
        leak[j] = p[list(LEAKAGE_INDICES)].sum() / 4
        res = fit_ideal_phases(np.angle(np.diag(blk)))[3]
        ph[j] = phase_deficit_from_residuals(res)
    return EvolutionResult(
        U_full=None,
        times=times,
        populations=pops,
        contributions={"qt": qt, "leak": leak, "phase": ph},
    )


def record_to_csv(result: EvolutionResult, stream=None) -> str:
    """Write ``t_ns, initial_state, basis_index, population`` rows (1-based basis index)."""
    buf = stream if stream is not None else io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_ns", "initial_state", "basis_index", "population"])
    labels = ("00", "01", "10", "11")
    for j, t in enumerate(result.times):
        for i, lab in enumerate(labels):
            for b in range(DIM):
                w.writerow([f"{t:.6f}", lab, b + 1, f"{result.populations[j, i, b]:.12e}"])
    return buf.getvalue() if stream is None else ""
