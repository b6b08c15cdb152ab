"""Gate metrology: local invariants, calibration, fidelities and error budgets.

The logical block of an evolution is always expressed in the labeled
eigenbasis of the idle device, ordered ``|00>, |01>, |10>, |11>`` (left qubit
first, index ``2 l + r``).  Z rotations follow ``Z(t) = exp(-i t sigma_z / 2)``
and Y rotations ``Y(t) = exp(-i t sigma_y / 2)``.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import CalibrationError, GateDestroyedError, LabelingAmbiguousError
from .model import DIM, LOGICAL_INDICES, SystemParams, effective_zz_coupling
from .noise import NOISE_FREE, NoiseRealization
from .propagate import (
    DEFAULT_MAX_STEP,
    LEAKAGE_INDICES,
    TWO_PI,
    AdiabaticLabeling,
    _terms,
    evolve_states,
    idle_labeling,
    idle_logical_energies,
    label_adiabatic,
    logical_columns,
    qubit_frequencies,
)
from .pulse import AcDrive, ControlSchedule, DriveSegment, RampSegment, TunnelRamp, default_ramp_time

log = logging.getLogger(__name__)

_LOG = list(LOGICAL_INDICES)
_BITS_L = np.array([0, 0, 1, 1])
_BITS_R = np.array([0, 1, 0, 1])

CZ = np.diag([1, 1, 1, -1]).astype(complex)
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
# Flip the left qubit when the right qubit is |0>.
ZCNOT_IDEAL = np.array([[0, 0, 1, 0], [0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1]], dtype=complex)

_MAGIC = np.array([[1, 0, 0, 1j], [0, 1j, 1, 0], [0, 1j, -1, 0], [1, 0, 0, -1j]]) / math.sqrt(2)


def rz(theta: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


def ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rx(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def on_left(u: np.ndarray) -> np.ndarray:
    return np.kron(u, np.eye(2))


def on_right(u: np.ndarray) -> np.ndarray:
    return np.kron(np.eye(2), u)


def z_frame(z_left: float, z_right: float) -> np.ndarray:
    """``Z(z_left) (x) Z(z_right)`` as a 4 x 4 matrix."""
    return np.kron(rz(z_left), rz(z_right))


# ---------------------------------------------------------------------------
# Local invariants
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class MakhlinInvariants:
    G1: complex
    G2: float

    @property
    def d_cz(self) -> float:
        """Distance ``|G1| + |G2 - 1|`` from the CZ class."""
        return abs(self.G1) + abs(self.G2 - 1.0)


def _invariants(u: np.ndarray):
    """Vectorized ``(G1, G2)`` for unitaries of shape ``(..., 4, 4)``."""
    ub = _MAGIC.conj().T @ u @ _MAGIC
    m = np.swapaxes(ub, -1, -2) @ ub
    det = np.linalg.det(u)
    tr = np.trace(m, axis1=-2, axis2=-1)
    tr2 = np.trace(m @ m, axis1=-2, axis2=-1)
    return tr**2 / (16 * det), (tr**2 - tr2) / (4 * det)


def makhlin_invariants(U: np.ndarray) -> MakhlinInvariants:
    """Local invariants of a two-qubit unitary in the Bell (magic) basis.

    ``m = (Q^+ U Q)^T (Q^+ U Q)``, ``G1 = tr(m)^2 / (16 det U)`` and
    ``G2 = (tr(m)^2 - tr(m^2)) / (4 det U)``.  CZ and CNOT give ``(0, 1)``,
    the identity ``(1, 3)``.
    """
    U = np.asarray(U, dtype=complex)
    if U.shape != (4, 4):
        raise ValueError("expected a 4 x 4 matrix")
    if np.abs(U.conj().T @ U - np.eye(4)).max() > 1e-6:
        raise ValueError("makhlin_invariants needs a unitary matrix")
    g1, g2 = _invariants(U)
    return MakhlinInvariants(complex(g1), float(g2.real))


def sanitize_block(block: np.ndarray) -> np.ndarray:
    """Diagonal unitary keeping only the phases of a 4 x 4 logical block.

    Raises
    ------
    GateDestroyedError
        If any diagonal magnitude is below 0.1.
    """
    d = np.diagonal(block, axis1=-2, axis2=-1)
    mag = np.abs(d)
    if np.any(mag < 0.1):
        raise GateDestroyedError(f"logical diagonal magnitude {mag.min():.3g} < 0.1")
    return np.einsum("...i,ij->...ij", d / mag, np.eye(4))


def sanitize_logical_unitary(U_full: np.ndarray, labeling: AdiabaticLabeling | None = None) -> np.ndarray:
    """Project a 28 x 28 propagator onto the labeled logical states and keep the diagonal phases."""
    if labeling is None:
        block = np.asarray(U_full)[np.ix_(_LOG, _LOG)]
    else:
        w = labeling.logical_vectors
        block = w.conj().T @ U_full @ w
    return sanitize_block(block)


def d_cz_of_phases(phases: np.ndarray) -> np.ndarray:
    """``D_CZ`` for diagonal unitaries given by their phases, shape ``(..., 4)``."""
    u = np.einsum("...i,ij->...ij", np.exp(1j * np.asarray(phases)), np.eye(4))
    g1, g2 = _invariants(u)
    return np.abs(g1) + np.abs(g2 - 1.0)


# ---------------------------------------------------------------------------
# Fidelity
# ---------------------------------------------------------------------------
def _wrap(x):
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi


def fit_ideal_phases(phases):
    """Fit ``theta_g + theta_L l + theta_R r + pi l r`` to four diagonal phases.

    Returns
    -------
    theta_g, theta_L, theta_R : float
    residuals : ndarray of 4
        ``phases - fit``; the least-squares residual of this 2 x 2 design is
        always proportional to ``(1, -1, -1, 1)``.
    """
    y = np.asarray(phases, dtype=float)
    chi = float(_wrap(y[0] - y[1] - y[2] + y[3] - np.pi))
    res = 0.25 * chi * np.array([1.0, -1.0, -1.0, 1.0])
    theta_g = y[0] - res[0]
    theta_r = float(_wrap(y[1] - y[0])) - (res[1] - res[0])
    theta_l = float(_wrap(y[2] - y[0])) - (res[2] - res[0])
    return float(theta_g), float(theta_l), float(theta_r), res


def ideal_from_phases(theta_g, theta_l, theta_r) -> np.ndarray:
    ph = theta_g + theta_l * _BITS_L + theta_r * _BITS_R + np.pi * _BITS_L * _BITS_R
    return np.diag(np.exp(1j * ph))


def phase_deficit_from_residuals(dphi) -> float:
    """``(sum dphi^2 - (sum dphi)^2 / 4) / 4``; unchanged by a common shift."""
    d = np.asarray(dphi, dtype=float)
    return float(0.25 * (np.sum(d**2) - np.sum(d) ** 2 / 4.0))


def _check_weights(weights, n):
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError("one weight per realization is required")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights sum to {w.sum():.12g}, expected 1")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    return w


def process_fidelity(U_sys, U_ideal, weights=None) -> float:
    """Weighted ``sum_n w_n |Tr(U_ideal^+ U_sys_n)|^2 / 16``.

    ``U_sys`` is a 4 x 4 matrix or a stack ``(N, 4, 4)``; it need not be
    unitary (leakage shrinks it).
    """
    u = np.asarray(U_sys, dtype=complex)
    if u.ndim == 2:
        u = u[None]
    w = _check_weights(weights, u.shape[0])
    ov = np.einsum("ij,nij->n", np.asarray(U_ideal).conj(), u)
    return float(np.sum(w * np.abs(ov) ** 2) / 16.0)


def choi_state(U: np.ndarray) -> np.ndarray:
    """Process matrix of ``rho -> U rho U^+`` on the 4-level logical space.

    Built from the maximally entangled state ``|Phi> = sum_j |j>|j> / 2`` as
    ``(I (x) U) |Phi><Phi| (I (x) U)^+``.
    """
    phi = np.eye(4).reshape(16) / 2.0
    v = np.kron(np.eye(4), U) @ phi
    return np.outer(v, v.conj())


def chi_fidelity(U_sys, U_ideal, weights=None) -> float:
    """``Tr(chi_sys chi_ideal)`` with the noise-averaged process matrix."""
    u = np.asarray(U_sys, dtype=complex)
    if u.ndim == 2:
        u = u[None]
    w = _check_weights(weights, u.shape[0])
    chi_sys = sum(wi * choi_state(ui) for wi, ui in zip(w, u))
    return float(np.trace(chi_sys @ choi_state(U_ideal)).real)


@dataclass(frozen=True)
class ErrorBudget:
    qt: float
    leak: float
    phase: float

    @property
    def total(self) -> float:
        return self.qt + self.leak + self.phase


def error_budget(columns, U_ideal, weights=None) -> ErrorBudget:
    """Qubit-transition, leakage and phase deficits.

    Parameters
    ----------
    columns : ndarray, shape (N, 28, 4) or (28, 4)
        Labeled amplitudes of the evolved logical states.
    U_ideal : ndarray, shape (4, 4)
        Unitary target.  For CZ (diagonal) and Z-CNOT (a permutation) the
        overlap with each ideal output column is a single matrix element.

    Notes
    -----
    ``qt`` and ``leak`` are a quarter of the summed probability that lands
    in the logical space orthogonal to the ideal output, or outside the
    logical space.  ``phase`` is
    :func:`phase_deficit_from_residuals` applied to the phase errors of the
    target entries, averaged with the weights.
    """
    a = np.asarray(columns, dtype=complex)
    if a.ndim == 2:
        a = a[None]
    w = _check_weights(weights, a.shape[0])
    ideal = np.asarray(U_ideal, dtype=complex)
    logical = a[:, _LOG, :]
    amp = np.einsum("ji,nji->ni", ideal.conj(), logical)  # overlap with each ideal output
    p_log = (np.abs(logical) ** 2).sum(axis=1)
    qt = 0.25 * (p_log - np.abs(amp) ** 2).sum(axis=1)
    leak = 0.25 * (np.abs(a[:, list(LEAKAGE_INDICES), :]) ** 2).sum(axis=(1, 2))
    common = np.angle(amp.sum(axis=1))
    dphi = _wrap(np.angle(amp) - common[:, None])
    phase = np.array([phase_deficit_from_residuals(d) for d in dphi])
    return ErrorBudget(float(w @ qt), float(w @ leak), float(w @ phase))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class GateReport:
    """Result of one calibrated gate evaluated under a noise model."""

    kind: str
    t_wait: float
    gate_time: float
    F: float
    F_qt_deficit: float
    F_leak_deficit: float
    F_phase_deficit: float
    G1: complex
    G2: float
    D_CZ: float
    theta: tuple[float, float, float]
    N_realizations: int
    warnings: tuple[str, ...] = ()
    extra: dict = field(default_factory=dict)

    @property
    def infidelity(self) -> float:
        return 1.0 - self.F

    @property
    def budget_total(self) -> float:
        return self.F_qt_deficit + self.F_leak_deficit + self.F_phase_deficit

    def budget_consistent(self) -> bool:
        return abs(self.infidelity - self.budget_total) <= 1e-4 + 0.1 * self.infidelity

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["G1"] = [self.G1.real, self.G1.imag]
        d["theta"] = list(self.theta)
        d["warnings"] = list(self.warnings)
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "GateReport":
        d = dict(d)
        d["G1"] = complex(*d["G1"])
        d["theta"] = tuple(d["theta"])
        d["warnings"] = tuple(d.get("warnings", ()))
        return cls(**d)


# ---------------------------------------------------------------------------
# CZ calibration
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CZSettings:
    tau_2g1g: float
    tau_2x1g: float
    t_ramp: float
    t_wait: float

    @property
    def ramp(self) -> TunnelRamp:
        return TunnelRamp(self.tau_2g1g, self.tau_2x1g, self.t_ramp, self.t_wait)

    @property
    def gate_time(self) -> float:
        return 2 * self.t_ramp + self.t_wait

    def schedule(self) -> ControlSchedule:
        return ControlSchedule.single_ramp(self.ramp)


class CZWaitScan:
    """Noise-free CZ evolution for any wait time from one ramp simulation.

    The fall of a symmetric ramp is the time reverse of its rise, and for a
    real symmetric Hamiltonian that makes ``U_down = U_up^T``.  With the
    plateau diagonalized, ``U(t_wait) = U_up^T V exp(-2 pi i E t_wait) V^+ U_up``.
    """

    def __init__(self, params: SystemParams, tau_2g1g, tau_2x1g, t_ramp, *, max_step=DEFAULT_MAX_STEP):
        self.params = params
        self.peaks = (float(tau_2g1g), float(tau_2x1g))
        self.t_ramp = float(t_ramp)
        lab = idle_labeling(params)
        self.basis = lab.vectors
        start = lab.vectors[:, _LOG]
        if t_ramp > 0:
            rise = ControlSchedule.single_ramp(TunnelRamp(tau_2g1g, tau_2x1g, t_ramp, 0.0))
            _, snaps = evolve_states(params, rise, start[None], max_step=max_step, sample_times=[t_ramp])
            self.up = snaps[0][0]
        else:
            self.up = start.astype(complex)
        h_peak = _terms(params).matrix([tau_2g1g, tau_2x1g, 0, 0, 0, 0])
        self.energies, self.vecs = np.linalg.eigh(h_peak)
        # With real idle vectors w: w_i^T U_up^T = (U_up w_i)^T.
        self._a = self.up.T @ self.vecs  # (4, 28)
        self._b = self.vecs.T @ self.up  # (28, 4)

    def logical_blocks(self, t_wait) -> np.ndarray:
        """Logical 4 x 4 blocks for an array of wait times, shape ``(n, 4, 4)``."""
        t = np.atleast_1d(np.asarray(t_wait, dtype=float))
        ph = np.exp(-1j * TWO_PI * np.outer(t, self.energies))
        return np.einsum("ik,nk,kj->nij", self._a, ph, self._b)

    def columns(self, t_wait: float) -> np.ndarray:
        """All 28 labeled amplitudes of the evolved logical states, shape ``(28, 4)``."""
        ph = np.exp(-1j * TWO_PI * self.energies * t_wait)
        u_total_cols = self.up_full_transpose() @ (self.vecs @ (ph[:, None] * self._b))
        return self.basis.conj().T @ u_total_cols

    def up_full_transpose(self) -> np.ndarray:
        if not hasattr(self, "_up_full"):
            rise = ControlSchedule.single_ramp(TunnelRamp(*self.peaks, self.t_ramp, 0.0))
            if self.t_ramp > 0:
                _, snaps = evolve_states(self.params, rise, np.eye(DIM)[None], sample_times=[self.t_ramp])
                self._up_full = snaps[0][0]
            else:
                self._up_full = np.eye(DIM, dtype=complex)
        return self._up_full.T

    def d_cz(self, t_wait) -> np.ndarray:
        blocks = self.logical_blocks(t_wait)
        mag = np.abs(np.diagonal(blocks, axis1=1, axis2=2))
        out = np.full(blocks.shape[0], np.inf)
        ok = np.all(mag >= 0.1, axis=1)
        if np.any(ok):
            out[ok] = d_cz_of_phases(np.angle(np.diagonal(blocks[ok], axis1=1, axis2=2)))
        return out


def default_wait_window(params: SystemParams, tau_2x1g: float) -> tuple[float, float]:
    """``[0, 4 / |gamma|]`` with ``gamma`` the closed-form exchange rate."""
    g = abs(effective_zz_coupling(params, tau_2x1g))
    if g == 0:
        raise CalibrationError("no exchange coupling: the CZ phase never accumulates")
    return 0.0, 4.0 / g


def calibrate_t_wait(
    params: SystemParams,
    tau_2g1g: float,
    tau_2x1g: float,
    t_ramp: float,
    window: tuple[float, float] | None = None,
    *,
    coarse_step: float = 0.01,
    xtol: float = 1e-4,
    threshold: float = 0.1,
    max_points: int = 50001,
    scan: CZWaitScan | None = None,
) -> float:
    """Wait time that makes the noise-free ramp a CZ up to local gates.

    ``D_CZ`` is evaluated on a 10 ps grid over ``window`` (coarsened to at
    most ``max_points`` samples for weak couplings) and the earliest
    local minimum below ``threshold`` is refined to ``xtol`` by bounded
    golden-section/Brent search.

    Raises
    ------
    CalibrationError
        If no local minimum with ``D_CZ < threshold`` lies in the window.
    """
    lo, hi = window if window is not None else default_wait_window(params, tau_2x1g)
    if not hi >= lo:
        raise ValueError("empty search window")
    scan = scan or CZWaitScan(params, tau_2g1g, tau_2x1g, t_ramp)
    n = min(max(2, int(math.ceil((hi - lo) / coarse_step)) + 1), max_points)
    grid = np.linspace(lo, hi, n)
    d = np.concatenate([scan.d_cz(grid[i : i + 4096]) for i in range(0, n, 4096)])
    is_min = np.zeros(n, dtype=bool)
    is_min[1:-1] = (d[1:-1] <= d[:-2]) & (d[1:-1] <= d[2:])
    is_min[0] = d[0] <= d[1]
    is_min[-1] = d[-1] <= d[-2]
    cand = np.nonzero(is_min & (d < threshold))[0]
    if cand.size == 0:
        raise CalibrationError(
            f"no D_CZ minimum below {threshold} in [{lo:.3f}, {hi:.3f}] ns (best {np.min(d):.3g})"
        )
    k = cand[0]
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, n - 1)]
    res = minimize_scalar(lambda t: float(scan.d_cz(t)[0]), bounds=(a, b), method="bounded", options={"xatol": xtol})
    t_best = float(res.x) if res.fun <= d[k] else float(grid[k])
    return t_best


def calibrate_cz(params: SystemParams, tau_2g1g, tau_2x1g, t_ramp, window=None, **kw) -> CZSettings:
    t_wait = calibrate_t_wait(params, tau_2g1g, tau_2x1g, t_ramp, window, **kw)
    return CZSettings(float(tau_2g1g), float(tau_2x1g), float(t_ramp), t_wait)


def cz_reference_phases(params: SystemParams, settings: CZSettings, *, rotating: bool = False):
    """Fitted frames of the noise-free CZ and its invariants.

    With ``rotating=True`` the phases are taken in the frame rotating with
    the idle logical energies, as needed when the CZ sits inside a sequence.
    """
    scan = CZWaitScan(params, settings.tau_2g1g, settings.tau_2x1g, settings.t_ramp)
    block = scan.logical_blocks(settings.t_wait)[0]
    if rotating:
        block = np.exp(1j * TWO_PI * idle_logical_energies(params) * settings.gate_time)[:, None] * block
    san = sanitize_block(block)
    inv = makhlin_invariants(san)
    tg, tl, tr, _ = fit_ideal_phases(np.angle(np.diag(block)))
    return (tg, tl, tr), inv


def evaluate_cz(
    params: SystemParams,
    settings: CZSettings,
    noises: Sequence[NoiseRealization] = (NOISE_FREE,),
    *,
    max_step: float = DEFAULT_MAX_STEP,
) -> GateReport:
    """Fidelity and budget of a calibrated CZ under a set of noise realizations.

    The target ``diag(exp(i(theta_g + theta_L l + theta_R r + pi l r)))`` is
    fitted once to the noise-free gate and shared by all realizations.
    """
    noises = list(noises)
    theta, inv = cz_reference_phases(params, settings)
    ideal = ideal_from_phases(*theta)
    cols = logical_columns(params, settings.schedule(), noises, max_step=max_step)
    w = np.array([n.weight for n in noises])
    w = w / w.sum()
    F = process_fidelity(cols[:, _LOG, :], ideal, w)
    bud = error_budget(cols, ideal, w)
    return GateReport(
        kind="CZ",
        t_wait=settings.t_wait,
        gate_time=settings.gate_time,
        F=F,
        F_qt_deficit=bud.qt,
        F_leak_deficit=bud.leak,
        F_phase_deficit=bud.phase,
        G1=inv.G1,
        G2=inv.G2,
        D_CZ=inv.d_cz,
        theta=theta,
        N_realizations=len(noises),
        extra={"tau_2g1g": settings.tau_2g1g, "tau_2x1g": settings.tau_2x1g, "t_ramp": settings.t_ramp},
    )


def cz_noise_free_report(params: SystemParams, settings: CZSettings, scan: CZWaitScan | None = None) -> GateReport:
    """Noise-free CZ report from the wait-time scan (no extra simulation)."""
    scan = scan or CZWaitScan(params, settings.tau_2g1g, settings.tau_2x1g, settings.t_ramp)
    cols = scan.columns(settings.t_wait)
    block = cols[_LOG]
    inv = makhlin_invariants(sanitize_block(block))
    theta = fit_ideal_phases(np.angle(np.diag(block)))[:3]
    ideal = ideal_from_phases(*theta)
    bud = error_budget(cols, ideal)
    return GateReport(
        kind="CZ",
        t_wait=settings.t_wait,
        gate_time=settings.gate_time,
        F=process_fidelity(block, ideal),
        F_qt_deficit=bud.qt,
        F_leak_deficit=bud.leak,
        F_phase_deficit=bud.phase,
        G1=inv.G1,
        G2=inv.G2,
        D_CZ=inv.d_cz,
        theta=tuple(theta),
        N_realizations=1,
        extra={"tau_2g1g": settings.tau_2g1g, "tau_2x1g": settings.tau_2x1g, "t_ramp": settings.t_ramp},
    )


# ---------------------------------------------------------------------------
# Single-qubit gates
# ---------------------------------------------------------------------------
def zyz_angles(u: np.ndarray):
    """``(delta, a, theta, b)`` with ``u = exp(i delta) Z(a) Y(theta) Z(b)`` and ``theta`` in ``[0, pi]``."""
    x, _, yh = np.linalg.svd(u)
    u = x @ yh
    theta = 2 * math.atan2(abs(u[1, 0]), abs(u[0, 0]))
    # phases of vanishing entries are noise; only a + b or a - b is defined then
    diag_ok, off_ok = abs(u[0, 0]) > 1e-9, abs(u[1, 0]) > 1e-9
    s_ab = np.angle(u[1, 1]) - np.angle(u[0, 0]) if diag_ok else 0.0
    d_ab = np.angle(u[1, 0]) - np.angle(-u[0, 1]) if off_ok else 0.0
    if abs(u[0, 0]) >= abs(u[1, 0]):
        delta0 = 0.5 * (np.angle(u[0, 0]) + np.angle(u[1, 1]))
    else:
        delta0 = 0.5 * (np.angle(u[1, 0]) + np.angle(-u[0, 1]))
    best = None
    # Half-angle branches: a and b are fixed only modulo 2 pi jointly.
    for da in (0.0, np.pi):
        a = 0.5 * (s_ab + d_ab) + da
        b = 0.5 * (s_ab - d_ab) - da
        for dd in (0.0, np.pi):
            cand = np.exp(1j * (delta0 + dd)) * rz(a) @ ry(theta) @ rz(b)
            err = np.abs(cand - u).max()
            if best is None or err < best[0]:
                best = (err, delta0 + dd, a, b)
    _, delta, a, b = best
    a, b = _wrap(a), _wrap(b)
    # wrapping a or b by 2 pi flips the sign of Z(a) Z(b)
    if np.abs(np.exp(1j * delta) * rz(a) @ ry(theta) @ rz(b) - u).max() > 1e-6:
        delta += np.pi
    return float(_wrap(delta)), float(a), float(theta), float(b)


def split_single_qubit(block: np.ndarray, qubit: str = "L"):
    """Split a logical block into a target rotation and a spectator phase.

    Returns ``(u, gamma)`` with ``block ~ u (x) Z(gamma)`` (qubit L) or
    ``Z(gamma) (x) u`` (qubit R), up to a global phase.
    """
    if qubit == "L":
        u0 = block[np.ix_([0, 2], [0, 2])]
        u1 = block[np.ix_([1, 3], [1, 3])]
    else:
        u0 = block[np.ix_([0, 1], [0, 1])]
        u1 = block[np.ix_([2, 3], [2, 3])]
    g = np.angle(np.trace(u0.conj().T @ u1))
    x, _, yh = np.linalg.svd(u0 + u1 * np.exp(-1j * g))
    return x @ yh, float(g)


@dataclass(frozen=True)
class SingleQubitSettings:
    """Calibrated resonant rotation with virtual frame corrections.

    ``z_before`` and ``z_after`` are ``(z_L, z_R)`` virtual rotations placed
    around the pulse so that the composite equals the target rotation.
    """

    drive: AcDrive
    qubit: str = "L"
    angle: float = math.pi / 2
    axis: str = "y"
    z_before: tuple[float, float] = (0.0, 0.0)
    z_after: tuple[float, float] = (0.0, 0.0)

    def schedule(self) -> ControlSchedule:
        return ControlSchedule((DriveSegment(self.drive, self.qubit, tuple(self.z_before)),), tuple(self.z_after))

    def ideal(self) -> np.ndarray:
        rot = {"y": ry, "x": rx, "z": rz}[self.axis](self.angle)
        return on_left(rot) if self.qubit == "L" else on_right(rot)


def drive_matrix_element(params: SystemParams, A_eps: float, A_delta: float, qubit: str = "L") -> float:
    """Transverse element ``<1|M|0>`` of the drive operator between the idle qubit states."""
    terms = _terms(params)
    lab = idle_labeling(params)
    k = (2, 3) if qubit == "L" else (4, 5)
    m = A_eps * terms.ops[k[0]] + A_delta * terms.ops[k[1]]
    i0, i1 = (0, 3) if qubit == "L" else (0, 1)
    v = lab.vectors.real
    return float(v[:, i1] @ m @ v[:, i0])


def sequence_block(params, schedule: ControlSchedule, noises=(NOISE_FREE,), *, max_step=DEFAULT_MAX_STEP):
    """Labeled columns in the rotating frame with the virtual frame applied, ``(N, 28, 4)``."""
    cols = logical_columns(params, schedule, noises, max_step=max_step, frame=True)
    zl, zr = schedule.total_frame()
    f = z_frame(zl, zr)
    cols = cols.copy()
    cols[:, _LOG, :] = np.einsum("ij,njk->nik", f, cols[:, _LOG, :])
    return cols


def single_qubit_drive(params, qubit="L", A_eps=27.0, A_delta=3.1, t_g=1.0, phi=0.0, t_r=None) -> AcDrive:
    f_l, f_r = qubit_frequencies(params)
    f = f_l if qubit == "L" else f_r
    t_r = default_ramp_time(params) if t_r is None else t_r
    return AcDrive(A_eps, A_delta, TWO_PI * f, phi, t_g, min(t_r, t_g / 2))


def _rotation_time_estimate(params, qubit, A_eps, A_delta, angle):
    m = abs(drive_matrix_element(params, A_eps, A_delta, qubit))
    if m == 0:
        raise CalibrationError("drive does not couple the qubit states")
    return angle / (TWO_PI * m)


def calibrate_single_qubit(
    params: SystemParams,
    qubit: str = "L",
    angle: float = math.pi / 2,
    *,
    A_eps: float = 27.0,
    A_delta: float = 3.1,
    t_r: float | None = None,
    max_step: float = DEFAULT_MAX_STEP,
) -> SingleQubitSettings:
    """Calibrate a Y rotation by ``angle`` (either sign) on one qubit.

    The carrier phase is set so that the pulse rotates about +y in the
    frame rotating with the idle qubit, the duration ``t_g`` is tuned until
    the rotation angle equals ``|angle|`` and the residual Euler frames are
    absorbed into virtual Z rotations.  A negative angle uses the opposite
    carrier phase.
    """
    m = drive_matrix_element(params, A_eps, A_delta, qubit)
    phi = -0.5 * math.pi * math.copysign(1.0, m)
    if angle < 0:
        phi += math.pi
    target = abs(angle)
    t_est = _rotation_time_estimate(params, qubit, A_eps, A_delta, target)
    t_min = 2 * (default_ramp_time(params) if t_r is None else t_r)

    flip = rz(math.pi) if angle < 0 else np.eye(2)

    def evaluate(t_g):
        drive = single_qubit_drive(params, qubit, A_eps, A_delta, t_g, phi, t_r)
        cols = sequence_block(params, ControlSchedule.single_drive(drive, qubit), max_step=max_step)[0]
        u, g = split_single_qubit(cols[_LOG], qubit)
        # Conjugating by Z(pi) maps a rotation about -y onto one about +y
        # without touching the small frame errors.
        return zyz_angles(flip.conj().T @ u @ flip), g

    def mismatch(t_g):
        return evaluate(t_g)[0][2] - target

    lo, hi = max(t_min, 0.6 * t_est), 1.6 * t_est
    grid = np.linspace(lo, hi, 9)
    vals = [mismatch(t) for t in grid]
    root = None
    for (t0, v0), (t1, v1) in zip(zip(grid, vals), zip(grid[1:], vals[1:])):
        if v0 <= 0 <= v1 or v1 <= 0 <= v0:
            root = brentq(mismatch, t0, t1, xtol=1e-7)
            break
    if root is None:
        raise CalibrationError(f"rotation angle {target:.3f} not reached for t_g in [{lo:.3f}, {hi:.3f}] ns")
    (delta, a, theta, b), g = evaluate(root)
    drive = single_qubit_drive(params, qubit, A_eps, A_delta, root, phi, t_r)
    if qubit == "L":
        zb, za = (-b, 0.0), (-a, -g)
    else:
        zb, za = (0.0, -b), (-g, -a)
    return SingleQubitSettings(drive, qubit, math.copysign(target, angle), "y", zb, za)


def single_qubit_gate(
    params: SystemParams,
    settings: SingleQubitSettings,
    noises: Sequence[NoiseRealization] = (NOISE_FREE,),
    *,
    max_step: float = DEFAULT_MAX_STEP,
) -> GateReport:
    """Fidelity of a single-qubit gate (identity on the spectator)."""
    noises = list(noises)
    ideal = settings.ideal()
    warnings = []
    d = settings.drive
    if d.t_g > 0:
        f_l, f_r = qubit_frequencies(params)
        f_q = f_l if settings.qubit == "L" else f_r
        detune = abs(d.omega / TWO_PI - f_q)
        if detune > 1.0 / d.t_g:
            warnings.append(f"drive detuned by {detune:.3g} GHz, beyond the 1/t_g linewidth")
    w = np.array([n.weight for n in noises])
    w = w / w.sum()
    if d.t_g == 0:
        cols = np.repeat(idle_identity_columns()[None], len(noises), axis=0)
        zl, zr = settings.schedule().total_frame()
        cols[:, _LOG, :] = np.einsum("ij,njk->nik", z_frame(zl, zr), cols[:, _LOG, :])
    else:
        cols = sequence_block(params, settings.schedule(), noises, max_step=max_step)
    F = process_fidelity(cols[:, _LOG, :], ideal, w)
    bud = error_budget(cols, ideal, w)
    if F < 0.99:
        warnings.append(f"low single-qubit fidelity {F:.4f}")
    return GateReport(
        kind=f"{settings.axis.upper()}_{settings.qubit}({settings.angle:.4f})",
        t_wait=0.0,
        gate_time=d.t_g,
        F=F,
        F_qt_deficit=bud.qt,
        F_leak_deficit=bud.leak,
        F_phase_deficit=bud.phase,
        G1=complex(1.0),
        G2=3.0,
        D_CZ=float("nan"),
        theta=(0.0, 0.0, 0.0),
        N_realizations=len(noises),
        warnings=tuple(warnings),
        extra={"t_g": d.t_g, "phi": d.phi, "z_before": list(settings.z_before), "z_after": list(settings.z_after)},
    )


def idle_identity_columns() -> np.ndarray:
    out = np.zeros((DIM, 4), dtype=complex)
    out[_LOG, np.arange(4)] = 1.0
    return out


# ---------------------------------------------------------------------------
# Z-CNOT
# ---------------------------------------------------------------------------
def zcnot_ideal_sequence(y_plus=None, y_minus=None, cz=CZ) -> np.ndarray:
    """``Y_L(-pi/2) Z_L(-pi) Z_R(-pi) CZ Y_L(pi/2)`` with optional substitutes for the parts."""
    yp = on_left(ry(math.pi / 2)) if y_plus is None else y_plus
    ym = on_left(ry(-math.pi / 2)) if y_minus is None else y_minus
    return ym @ z_frame(-math.pi, -math.pi) @ cz @ yp


def zcnot_schedule(
    y_plus: SingleQubitSettings,
    cz: CZSettings,
    y_minus: SingleQubitSettings,
    cz_frames: tuple[float, float],
) -> ControlSchedule:
    """Pulse sequence with every Z rotation folded into drive phases.

    ``cz_frames`` are the fitted single-qubit phases ``(theta_L, theta_R)``
    of the CZ, undone virtually along with the ``Z_L(-pi) Z_R(-pi)`` step.
    """
    if y_plus.qubit != "L" or y_minus.qubit != "L":
        raise ValueError("the sequence drives the left qubit")
    tl, tr = cz_frames
    mid = (
        y_plus.z_after[0] - math.pi - tl + y_minus.z_before[0],
        y_plus.z_after[1] - math.pi - tr + y_minus.z_before[1],
    )
    segs = (
        DriveSegment(y_plus.drive, "L", tuple(y_plus.z_before)),
        RampSegment(cz.ramp),
        DriveSegment(y_minus.drive, "L", mid),
    )
    return ControlSchedule(segs, tuple(y_minus.z_after))


@dataclass(frozen=True)
class ZCNOTSettings:
    y_plus: SingleQubitSettings
    cz: CZSettings
    y_minus: SingleQubitSettings
    cz_frames: tuple[float, float]

    @property
    def gate_time(self) -> float:
        return self.y_plus.drive.duration + self.cz.gate_time + self.y_minus.drive.duration

    def schedule(self) -> ControlSchedule:
        return zcnot_schedule(self.y_plus, self.cz, self.y_minus, self.cz_frames)


def calibrate_zcnot(params: SystemParams, tau_2g1g, tau_2x1g, t_ramp, *, A_eps=27.0, A_delta=3.1) -> ZCNOTSettings:
    cz = calibrate_cz(params, tau_2g1g, tau_2x1g, t_ramp)
    theta, _ = cz_reference_phases(params, cz, rotating=True)
    yp = calibrate_single_qubit(params, "L", math.pi / 2, A_eps=A_eps, A_delta=A_delta)
    ym = calibrate_single_qubit(params, "L", -math.pi / 2, A_eps=A_eps, A_delta=A_delta)
    return ZCNOTSettings(yp, cz, ym, (theta[1], theta[2]))


def compose_zcnot(
    params: SystemParams,
    settings: ZCNOTSettings,
    noises: Sequence[NoiseRealization] = (NOISE_FREE,),
    *,
    max_step: float = DEFAULT_MAX_STEP,
) -> GateReport:
    """Simulate the whole Z-CNOT sequence per realization and score it.

    Each realization spans the full sequence.  The target is
    ``sigma_x (x) |0><0| + I (x) |1><1|`` up to a global phase, which is
    fixed on the noise-free run.
    """
    noises = list(noises)
    sched = settings.schedule()
    ref = sequence_block(params, sched, max_step=max_step)[0]
    ov = np.trace(ZCNOT_IDEAL.conj().T @ ref[_LOG])
    ideal = ZCNOT_IDEAL * (ov / abs(ov))
    cols = sequence_block(params, sched, noises, max_step=max_step)
    w = np.array([n.weight for n in noises])
    w = w / w.sum()
    F = process_fidelity(cols[:, _LOG, :], ideal, w)
    bud = error_budget(cols, ideal, w)
    inv = makhlin_invariants(_nearest_unitary(ref[_LOG]))
    return GateReport(
        kind="Z-CNOT",
        t_wait=settings.cz.t_wait,
        gate_time=sched.duration,
        F=F,
        F_qt_deficit=bud.qt,
        F_leak_deficit=bud.leak,
        F_phase_deficit=bud.phase,
        G1=inv.G1,
        G2=inv.G2,
        D_CZ=inv.d_cz,
        theta=(float(np.angle(ov)), settings.cz_frames[0], settings.cz_frames[1]),
        N_realizations=len(noises),
        extra={
            "tau_2g1g": settings.cz.tau_2g1g,
            "tau_2x1g": settings.cz.tau_2x1g,
            "t_ramp": settings.cz.t_ramp,
            "t_g_plus": settings.y_plus.drive.t_g,
            "t_g_minus": settings.y_minus.drive.t_g,
        },
    )


def _nearest_unitary(m):
    x, _, yh = np.linalg.svd(m)
    return x @ yh


# ---------------------------------------------------------------------------
# Leakage channels and LZS phase
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LeakageChannel:
    """Dominant second-order leakage partner of one logical state.

    Attributes
    ----------
    logical : int
        Basis index (0-based) of the logical state.
    leakage : int
        Lowest basis index of the partner's degenerate idle cluster.
    coupling : float
        Effective coupling per unit tunnel amplitude squared (GHz).
    vector : ndarray
        Partner state in the basis of :data:`hybridcz.model.BASIS`; within an
        exactly degenerate idle cluster it is the combination that couples.
    candidates : dict
        Cluster (tuple of basis indices) -> coupling magnitude, for every
        near-degenerate leakage cluster.
    """

    logical: int
    leakage: int
    coupling: float
    vector: np.ndarray
    candidates: dict


def leakage_channel(
    params: SystemParams,
    logical: str,
    direction=(1.0, 1.0),
    *,
    window: float = 2.0,
    rel_threshold: float = 1e-6,
) -> LeakageChannel:
    """Dominant second-order leakage partner of a logical state.

    Leakage levels within ``window`` GHz of the logical level form its
    near-degenerate manifold.  Their coupling to the logical state, mediated
    at second order by every level outside the manifold, is computed in the
    idle eigenbasis for tunnel couplings along ``direction``.  Exactly
    degenerate idle levels are rotated so that a single combination carries
    the whole coupling; the largest coupling wins.

    Raises
    ------
    LabelingAmbiguousError
        If no candidate has a non-vanishing coupling.
    """
    lab_i = {"00": 0, "01": 1, "10": 3, "11": 4}
    if logical not in lab_i:
        raise ValueError("logical must be one of 00, 01, 10, 11")
    a = lab_i[logical]
    lab = idle_labeling(params)
    terms = _terms(params)
    v = lab.vectors.real
    e = lab.energies
    vop = v.T @ (direction[0] * terms.ops[0] + direction[1] * terms.ops[1]) @ v
    cands = [b for b in LEAKAGE_INDICES if abs(e[b] - e[a]) < window]
    manifold = set(cands) | {a}
    outside = np.array([m for m in range(DIM) if m not in manifold])
    coup = {}
    for b in cands:
        coup[b] = 0.5 * np.sum(
            vop[a, outside] * vop[outside, b] * (1.0 / (e[a] - e[outside]) + 1.0 / (e[b] - e[outside]))
        )
    clusters = {}
    for b in cands:
        key = next((k for k in clusters if abs(e[k[0]] - e[b]) < 1e-6), None)
        if key is None:
            clusters[(b,)] = None
        else:
            clusters[key + (b,)] = clusters.pop(key)
    strength = {k: float(np.linalg.norm([coup[b] for b in k])) for k in clusters}
    scale = max(strength.values(), default=0.0)
    diag_scale = max(abs(vop).max() ** 2 / 100.0, 1e-300)
    if not strength or scale < rel_threshold * diag_scale:
        raise LabelingAmbiguousError(
            f"|{logical}> has no leakage partner with a second-order coupling "
            f"(candidates: { {tuple(i + 1 for i in k): round(c, 12) for k, c in strength.items()} })",
            overlap=scale,
        )
    best = max(strength, key=strength.get)
    c = np.array([coup[b] for b in best])
    vec = v[:, list(best)] @ (c / np.linalg.norm(c))
    return LeakageChannel(a, min(best), scale, vec, strength)


@dataclass(frozen=True)
class LZSMap:
    tau_2g1g: np.ndarray
    tau_2x1g: np.ndarray
    t_wait: np.ndarray  # (n_g, n_x)
    delta_theta: np.ndarray  # wrapped to [0, 2 pi)
    leakage: np.ndarray  # terminal leakage probability from the channel's logical state
    channel: LeakageChannel


def lzs_phase(
    params: SystemParams,
    channel: LeakageChannel,
    settings: CZSettings,
    scan: CZWaitScan | None = None,
    *,
    threshold: float = 0.6,
):
    """Phase difference between the leakage and logical paths of one pulse.

    The logical path follows the labeled peak eigenstate of the channel's
    logical state.  The leakage path follows the non-logical peak eigenstate
    with the largest overlap with the channel's partner.  Each path state
    enters once as a bra and once as a ket, so the result is gauge
    invariant.  Uses ``U_down = U_up^T`` for the symmetric ramp.

    Returns
    -------
    delta_theta : float
        Wrapped to ``[0, 2 pi)``.
    leakage : float
        Terminal leakage probability out of the logical state.

    Raises
    ------
    LabelingAmbiguousError
        If no peak eigenstate overlaps the partner by at least ``threshold``.
    """
    scan = scan or CZWaitScan(params, settings.tau_2g1g, settings.tau_2x1g, settings.t_ramp)
    peak = label_adiabatic(params, settings.tau_2g1g, settings.tau_2x1g, check=[channel.logical])
    ov = np.abs(peak.vectors.conj().T @ channel.vector) ** 2
    ov[_LOG] = 0.0
    k = int(np.argmax(ov))
    if ov[k] < threshold:
        raise LabelingAmbiguousError(
            f"leakage partner of state {channel.logical + 1} is spread over peak states "
            f"(best overlap {ov[k]:.3f} with state {k + 1})",
            overlap=float(ov[k]),
        )
    i = _LOG.index(channel.logical)
    up = scan.up[:, i]
    p_log = peak.vectors[:, channel.logical]
    p_leak = peak.vectors[:, k]
    a_leak = p_leak.conj() @ up  # <L_peak| U_up |l_init>
    a_log = p_log.conj() @ up
    # <l_init| U_down |x_peak> = x_peak^T U_up l_init for a real idle vector
    d_leak = p_leak @ up
    d_log = p_log @ up
    t = settings.t_wait
    dtheta = (
        np.angle(a_leak)
        + np.angle(d_leak)
        - np.angle(a_log)
        - np.angle(d_log)
        - TWO_PI * (peak.energies[k] - peak.energies[channel.logical]) * t
    )
    cols = scan.columns(t)
    leak = float(np.sum(np.abs(cols[list(LEAKAGE_INDICES), i]) ** 2))
    return float(dtheta % TWO_PI), leak


def lzs_phase_map(
    params: SystemParams,
    tau_2g1g_values,
    tau_2x1g_values,
    t_ramp: float,
    channel: str = "10",
) -> LZSMap:
    """``delta_theta`` and terminal leakage over a grid of ramp peaks.

    At each grid point the CZ wait time is calibrated first (noise-free).
    Points where calibration fails are NaN.
    """
    if channel not in ("10", "11"):
        raise LabelingAmbiguousError(f"no dominant second-order leakage channel is defined for |{channel}>")
    gs = np.asarray(tau_2g1g_values, dtype=float)
    xs = np.asarray(tau_2x1g_values, dtype=float)
    ch = leakage_channel(params, channel)
    tw = np.full((gs.size, xs.size), np.nan)
    dth = np.full_like(tw, np.nan)
    lk = np.full_like(tw, np.nan)
    for i, g in enumerate(gs):
        for j, x in enumerate(xs):
            try:
                scan = CZWaitScan(params, g, x, t_ramp)
                t = calibrate_t_wait(params, g, x, t_ramp, scan=scan)
                s = CZSettings(g, x, t_ramp, t)
                dth[i, j], lk[i, j] = lzs_phase(params, ch, s, scan)
                tw[i, j] = t
            except (GateDestroyedError, LabelingAmbiguousError) as exc:
                log.warning("lzs point (%g, %g) skipped: %s", g, x, exc)
            except Exception as exc:  # calibration failure
                log.warning("lzs point (%g, %g) failed: %s", g, x, exc)
    return LZSMap(gs, xs, tw, dth, lk, ch)
