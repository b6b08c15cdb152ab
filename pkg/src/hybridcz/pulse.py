"""Control waveforms: tunnel-coupling ramps, smoothed drive envelopes, schedules.

Times are in ns and amplitudes in GHz.  A :class:`ControlSchedule` strings
entangling ramps and single-qubit drive pulses back to back; virtual Z
rotations never appear as evolution, only as phase offsets of later pulses.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfRangeError
from .model import SystemParams

_EDGE_TOL = 1e-12


def default_ramp_time(params: SystemParams) -> float:
    """Smoothing time of the drive envelope, ``h / Est_L`` in ns."""
    return 1.0 / params.Est_L


def _check_window(t, stop, what):
    t = np.asarray(t, dtype=float)
    if np.any(t < -_EDGE_TOL) or np.any(t > stop + _EDGE_TOL):
        raise OutOfRangeError(f"{what} evaluated outside [0, {stop}] ns")
    return np.clip(t, 0.0, stop)


@dataclass(frozen=True)
class TunnelRamp:
    """Trapezoidal pulse of the two inter-qubit tunnel couplings.

    Both couplings rise linearly over ``t_ramp``, hold for ``t_wait`` and
    fall back linearly, so the pulse is symmetric in time.
    """

    tau_max_2g1g: float
    tau_max_2x1g: float
    t_ramp: float
    t_wait: float = 0.0

    def __post_init__(self):
        if self.t_ramp < 0 or self.t_wait < 0:
            raise ValueError("t_ramp and t_wait must be non-negative")

    @property
    def duration(self) -> float:
        return 2.0 * self.t_ramp + self.t_wait

    @property
    def peaks(self) -> tuple[float, float]:
        return (self.tau_max_2g1g, self.tau_max_2x1g)

    def shape(self, t):
        """Fraction of the peak coupling reached at time ``t``."""
        t = _check_window(t, self.duration, "tunnel ramp")
        if self.t_ramp == 0:
            return np.ones_like(t)[()]
        rise = t / self.t_ramp
        fall = (self.duration - t) / self.t_ramp
        return np.minimum(np.minimum(rise, fall), 1.0)[()]

    def breakpoints(self) -> tuple[float, ...]:
        return (0.0, self.t_ramp, self.t_ramp + self.t_wait, self.duration)

    def with_wait(self, t_wait: float) -> "TunnelRamp":
        return dataclasses.replace(self, t_wait=float(t_wait))


def tunnel_value(ramp: TunnelRamp, t):
    """Instantaneous ``(tau_2g1g, tau_2x1g)`` in GHz at time ``t`` into the ramp."""
    s = ramp.shape(t)
    return ramp.tau_max_2g1g * s, ramp.tau_max_2x1g * s


@dataclass(frozen=True)
class AcDrive:
    """Resonant drive ``A p(t) cos(omega t + phi)`` of one qubit's detuning and tunnelling.

    Attributes
    ----------
    A_eps, A_delta : float
        Amplitudes (GHz) on the detuning and on both intra-qubit tunnel
        couplings.
    omega : float
        Carrier angular frequency in rad/ns.
    phi : float
        Carrier phase in rad.
    t_g : float
        Pulse duration in ns.
    t_r : float
        Cosine smoothing time at each edge, ``0 < t_r <= t_g / 2``.
    """

    A_eps: float
    A_delta: float
    omega: float
    phi: float
    t_g: float
    t_r: float

    def __post_init__(self):
        if self.t_g < 0:
            raise ValueError("t_g must be non-negative")
        if self.t_g > 0 and not (0 < self.t_r <= self.t_g / 2 + _EDGE_TOL):
            raise ValueError("need 0 < t_r <= t_g/2")

    @property
    def duration(self) -> float:
        return self.t_g

    @property
    def plateau(self) -> float:
        return self.t_g / (self.t_g - self.t_r)

    def breakpoints(self) -> tuple[float, ...]:
        return (0.0, self.t_r, self.t_g - self.t_r, self.t_g)

    def with_phase(self, phi: float) -> "AcDrive":
        return dataclasses.replace(self, phi=float(phi))

    def carrier(self, t_abs):
        return np.cos(self.omega * np.asarray(t_abs, dtype=float) + self.phi)[()]


def envelope(drive: AcDrive, t):
    """Area-normalized smoothed rectangular envelope ``p(t)``.

    ``p`` rises as a half cosine over ``t_r``, holds at ``t_g / (t_g - t_r)``
    and falls symmetrically, so that its integral over the pulse is ``t_g``.
    """
    if drive.t_g == 0:
        _check_window(t, 0.0, "envelope")
        return np.zeros_like(np.asarray(t, dtype=float))[()]
    t = _check_window(t, drive.t_g, "envelope")
    t_g, t_r = drive.t_g, drive.t_r
    top = drive.plateau
    rise = 0.5 * top * (1.0 - np.cos(np.pi * np.minimum(t, t_r) / t_r))
    fall = 0.5 * top * (1.0 + np.cos(np.pi * (np.maximum(t, t_g - t_r) - t_g + t_r) / t_r))
    out = np.where(t <= t_r, rise, np.where(t >= t_g - t_r, fall, top))
    return out[()]


def drive_signal(drive: AcDrive, t, t_abs=None):
    """``p(t) cos(omega t_abs + phi)``; the carrier clock defaults to the pulse clock."""
    if t_abs is None:
        t_abs = t
    return envelope(drive, t) * drive.carrier(t_abs)


def modulated_params(base: SystemParams, drive: AcDrive, qubit: str, t, t_abs=None) -> SystemParams:
    """Device energies with the drive applied to ``qubit`` ('L' or 'R') at time ``t``."""
    s = float(drive_signal(drive, t, t_abs))
    de, dd = drive.A_eps * s, drive.A_delta * s
    if qubit == "L":
        return base.replace(eps_L=base.eps_L + de, D1_L=base.D1_L + dd, D2_L=base.D2_L + dd)
    if qubit == "R":
        return base.replace(eps_R=base.eps_R + de, D1_R=base.D1_R + dd, D2_R=base.D2_R + dd)
    raise ValueError(f"qubit must be 'L' or 'R', got {qubit!r}")


@dataclass(frozen=True)
class RampSegment:
    """Entangling segment."""

    ramp: TunnelRamp

    @property
    def duration(self) -> float:
        return self.ramp.duration


@dataclass(frozen=True)
class DriveSegment:
    """Single-qubit segment preceded by virtual Z rotations.

    ``virtual_z`` holds the angles ``(z_L, z_R)`` of ``exp(-i z sigma_z / 2)``
    applied to the two qubits immediately before the pulse.  They shift the
    phases of this and every later pulse instead of being simulated.
    """

    drive: AcDrive
    qubit: str = "L"
    virtual_z: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.qubit not in ("L", "R"):
            raise ValueError(f"qubit must be 'L' or 'R', got {self.qubit!r}")

    @property
    def duration(self) -> float:
        return self.drive.duration


@dataclass(frozen=True)
class Controls:
    """Control values at one instant: tunnel couplings and per-qubit drive signals."""

    tau_2g1g: float = 0.0
    tau_2x1g: float = 0.0
    eps_L: float = 0.0
    delta_L: float = 0.0
    eps_R: float = 0.0
    delta_R: float = 0.0


@dataclass(frozen=True)
class ControlSchedule:
    """Contiguous sequence of ramp and drive segments starting at ``t = 0``.

    ``final_z`` is a trailing virtual rotation applied after the last
    segment.  Drive phases seen by the hardware are the nominal phase plus
    the accumulated virtual-Z angle of the driven qubit.
    """

    segments: tuple = ()
    final_z: tuple[float, float] = (0.0, 0.0)
    starts: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        segs = tuple(self.segments)
        for s in segs:
            if not isinstance(s, (RampSegment, DriveSegment)):
                raise TypeError(f"unsupported segment {s!r}")
        object.__setattr__(self, "segments", segs)
        starts, t = [], 0.0
        for s in segs:
            starts.append(t)
            t += s.duration
        object.__setattr__(self, "starts", tuple(starts))

    @classmethod
    def single_ramp(cls, ramp: TunnelRamp) -> "ControlSchedule":
        return cls((RampSegment(ramp),))

    @classmethod
    def single_drive(cls, drive: AcDrive, qubit: str = "L") -> "ControlSchedule":
        return cls((DriveSegment(drive, qubit),))

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)

    def frame_phases(self) -> list[tuple[float, float]]:
        """Accumulated virtual-Z angles in effect during each segment."""
        out, zl, zr = [], 0.0, 0.0
        for s in self.segments:
            if isinstance(s, DriveSegment):
                zl += s.virtual_z[0]
                zr += s.virtual_z[1]
            out.append((zl, zr))
        return out

    def total_frame(self) -> tuple[float, float]:
        """Net virtual-Z angles, including ``final_z``."""
        zl, zr = self.frame_phases()[-1] if self.segments else (0.0, 0.0)
        return zl + self.final_z[0], zr + self.final_z[1]

    def effective_drives(self) -> list:
        """Each segment with virtual frames folded into the drive phase."""
        out = []
        for s, (zl, zr) in zip(self.segments, self.frame_phases()):
            if isinstance(s, DriveSegment):
                z = zl if s.qubit == "L" else zr
                out.append(dataclasses.replace(s, drive=s.drive.with_phase(s.drive.phi + z)))
            else:
                out.append(s)
        return out

    def breakpoints(self) -> np.ndarray:
        """Times where the controls lose smoothness (segment and edge corners)."""
        pts = [0.0, self.duration]
        for start, s in zip(self.starts, self.segments):
            inner = s.ramp.breakpoints() if isinstance(s, RampSegment) else s.drive.breakpoints()
            pts.extend(start + b for b in inner)
        return np.unique(np.round(np.asarray(pts), 12))

    def max_carrier_frequency(self, start: float, stop: float) -> float:
        """Largest drive frequency (GHz) active anywhere in ``[start, stop]``."""
        f = 0.0
        for t0, s in zip(self.starts, self.segments):
            if isinstance(s, DriveSegment) and t0 < stop and t0 + s.duration > start:
                f = max(f, abs(s.drive.omega) / (2 * math.pi))
        return f

    def controls(self, t) -> Controls:
        """Control values at absolute time ``t`` (scalar)."""
        return self.control_arrays(np.atleast_1d(float(t)))[0]

    def control_arrays(self, t) -> list[Controls]:
        return [Controls(*row) for row in self.control_matrix(t)]

    def control_matrix(self, t) -> np.ndarray:
        """Controls at many times as an array of shape ``(len(t), 6)``.

        Columns follow :class:`Controls`.  At a boundary between segments the
        later segment wins.
        """
        t = np.asarray(t, dtype=float)
        if np.any(t < -_EDGE_TOL) or np.any(t > self.duration + _EDGE_TOL):
            raise OutOfRangeError("schedule evaluated outside its duration")
        out = np.zeros((t.size, 6))
        segs = self.effective_drives()
        idx = np.clip(np.searchsorted(self.starts, t, side="right") - 1, 0, max(len(segs) - 1, 0))
        for k, s in enumerate(segs):
            sel = idx == k
            if not np.any(sel):
                continue
            local = np.clip(t[sel] - self.starts[k], 0.0, s.duration)
            if isinstance(s, RampSegment):
                g, x = tunnel_value(s.ramp, local)
                out[sel, 0], out[sel, 1] = g, x
            else:
                sig = np.atleast_1d(drive_signal(s.drive, local, t[sel]))
                col = 2 if s.qubit == "L" else 4
                out[sel, col] = s.drive.A_eps * sig
                out[sel, col + 1] = s.drive.A_delta * sig
        return out

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        segs = []
        for s in self.segments:
            if isinstance(s, RampSegment):
                segs.append({"type": "ramp", **dataclasses.asdict(s.ramp)})
            else:
                segs.append(
                    {
                        "type": "drive",
                        "qubit": s.qubit,
                        "virtual_z": list(s.virtual_z),
                        **dataclasses.asdict(s.drive),
                    }
                )
        return {"segments": segs, "final_z": list(self.final_z)}

    @classmethod
    def from_dict(cls, data: dict) -> "ControlSchedule":
        segs = []
        for raw in data.get("segments", []):
            raw = dict(raw)
            kind = raw.pop("type")
            if kind == "ramp":
                segs.append(RampSegment(TunnelRamp(**raw)))
            elif kind == "drive":
                qubit = raw.pop("qubit", "L")
                vz = tuple(raw.pop("virtual_z", (0.0, 0.0)))
                segs.append(DriveSegment(AcDrive(**raw), qubit, vz))
            else:
                raise ValueError(f"unknown segment type {kind!r}")
        return cls(tuple(segs), tuple(data.get("final_z", (0.0, 0.0))))
