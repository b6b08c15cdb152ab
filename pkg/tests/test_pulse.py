import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from hybridcz.errors import OutOfRangeError
from hybridcz.model import DEFAULT_PARAMS
from hybridcz.pulse import (
    AcDrive,
    ControlSchedule,
    DriveSegment,
    RampSegment,
    TunnelRamp,
    default_ramp_time,
    drive_signal,
    envelope,
    modulated_params,
    tunnel_value,
)

durations = st.floats(0.05, 10.0)


def test_default_ramp_time():
    assert default_ramp_time(DEFAULT_PARAMS) == pytest.approx(1 / 12)


@settings(max_examples=50, deadline=None)
@given(durations, st.floats(0.0, 10.0), st.floats(0.0, 1.0))
def test_ramp_is_symmetric_and_bounded(t_ramp, t_wait, frac):
    r = TunnelRamp(4.2, 4.4, t_ramp, t_wait)
    t = frac * r.duration
    assert r.shape(t) == pytest.approx(r.shape(r.duration - t), abs=1e-12)
    assert 0.0 <= r.shape(t) <= 1.0


def test_ramp_corners():
    r = TunnelRamp(4.2, 4.4, 2.25, 0.86)
    assert r.duration == pytest.approx(5.36)
    g, x = tunnel_value(r, [0.0, 1.125, 2.25, 3.0, r.duration])
    np.testing.assert_allclose(g, [0.0, 2.1, 4.2, 4.2, 0.0])
    np.testing.assert_allclose(x, [0.0, 2.2, 4.4, 4.4, 0.0])
    assert r.breakpoints() == pytest.approx((0.0, 2.25, 3.11, 5.36))
    with pytest.raises(OutOfRangeError):
        r.shape(5.5)
    with pytest.raises(ValueError):
        TunnelRamp(1, 1, -1.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(0.05, 0.5))
def test_envelope_area_and_edges(t_g, r_frac):
    d = AcDrive(27.0, 3.1, 2 * math.pi * 11.0, 0.0, t_g, r_frac * t_g)
    area, _ = quad(lambda t: envelope(d, t), 0, t_g, points=[d.t_r, t_g - d.t_r])
    assert area == pytest.approx(t_g, rel=1e-9)
    assert envelope(d, 0.0) == pytest.approx(0.0, abs=1e-12)
    assert envelope(d, t_g) == pytest.approx(0.0, abs=1e-12)
    assert envelope(d, t_g / 2) == pytest.approx(d.plateau)


def test_envelope_is_smooth_at_corners():
    d = AcDrive(1.0, 0.0, 1.0, 0.0, 1.0, 0.2)
    eps = 1e-6
    for c in (0.2, 0.8):
        left = (envelope(d, c) - envelope(d, c - eps)) / eps
        right = (envelope(d, c + eps) - envelope(d, c)) / eps
        assert abs(left - right) < 1e-4


def test_drive_validation_and_range():
    with pytest.raises(ValueError):
        AcDrive(1, 1, 1, 0, 1.0, 0.6)
    with pytest.raises(ValueError):
        AcDrive(1, 1, 1, 0, 1.0, 0.0)
    d = AcDrive(1, 1, 1, 0, 1.0, 0.1)
    with pytest.raises(OutOfRangeError):
        envelope(d, 1.5)
    zero = AcDrive(1, 1, 1, 0, 0.0, 0.0)
    assert envelope(zero, 0.0) == 0.0


def test_drive_signal_and_modulation():
    d = AcDrive(27.0, 3.1, 2.0, 0.3, 1.0, 0.1)
    t = 0.5
    s = drive_signal(d, t)
    assert s == pytest.approx(d.plateau * math.cos(2.0 * t + 0.3))
    p = modulated_params(DEFAULT_PARAMS, d, "R", t)
    assert p.eps_R == pytest.approx(70 + 27 * s)
    assert p.D1_R == pytest.approx(6.3 + 3.1 * s)
    assert p.eps_L == DEFAULT_PARAMS.eps_L
    with pytest.raises(ValueError):
        modulated_params(DEFAULT_PARAMS, d, "X", t)


def _sequence():
    d1 = AcDrive(27.0, 3.1, 70.0, -math.pi / 2, 0.72, 1 / 12)
    ramp = TunnelRamp(4.2, 4.4, 2.25, 0.86)
    d2 = AcDrive(27.0, 3.1, 70.0, math.pi / 2, 0.72, 1 / 12)
    return ControlSchedule(
        (
            DriveSegment(d1, "L", (0.1, 0.2)),
            RampSegment(ramp),
            DriveSegment(d2, "L", (0.3, -0.4)),
        ),
        final_z=(0.5, 0.6),
    )


def test_schedule_timing_and_frames():
    s = _sequence()
    assert s.duration == pytest.approx(0.72 + 5.36 + 0.72)
    assert s.starts == pytest.approx((0.0, 0.72, 6.08))
    assert s.frame_phases() == [(0.1, 0.2), (0.1, 0.2), pytest.approx((0.4, -0.2))]
    assert s.total_frame() == pytest.approx((0.9, 0.4))
    eff = s.effective_drives()
    assert eff[0].drive.phi == pytest.approx(-math.pi / 2 + 0.1)
    assert eff[2].drive.phi == pytest.approx(math.pi / 2 + 0.4)


def test_schedule_controls_follow_segments():
    s = _sequence()
    c = s.control_matrix(np.array([0.36, 0.72 + 2.25, 6.08 + 0.36]))
    assert c[0, 0] == 0 and c[0, 2] != 0 and c[0, 4] == 0
    assert c[1, :2] == pytest.approx([4.2, 4.4])
    assert np.all(c[1, 2:] == 0)
    d = s.effective_drives()[2].drive
    assert c[2, 2] == pytest.approx(27.0 * drive_signal(d, 0.36, 6.08 + 0.36))
    assert s.controls(0.72 + 2.25).tau_2x1g == pytest.approx(4.4)
    with pytest.raises(OutOfRangeError):
        s.control_matrix([s.duration + 1])


def test_schedule_breakpoints_and_carrier():
    s = _sequence()
    bp = s.breakpoints()
    assert bp[0] == 0 and bp[-1] == pytest.approx(s.duration)
    assert np.any(np.isclose(bp, 0.72 + 2.25))
    assert s.max_carrier_frequency(0.0, 0.1) == pytest.approx(70 / (2 * math.pi))
    assert s.max_carrier_frequency(1.0, 5.0) == 0.0


def test_schedule_roundtrip():
    s = _sequence()
    back = ControlSchedule.from_dict(s.to_dict())
    assert back == s
    with pytest.raises(ValueError):
        ControlSchedule.from_dict({"segments": [{"type": "warp"}]})
    with pytest.raises(TypeError):
        ControlSchedule(("nope",))
