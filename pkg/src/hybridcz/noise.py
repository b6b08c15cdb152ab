"""Detuning charge noise on the three channels ``(L, R, LR)``.

Quasistatic noise is a constant shift per realization, averaged with a
Gauss-Hermite tensor grid.  Flicker noise has the two-sided spectrum
``S(f) = c_eps**2 / |f|`` between ``f_low`` and ``f_high``: the band above
``f_split`` is synthesized by FFT shaping and everything below it is folded
into a Gaussian constant.  Amplitudes are in GHz, ``dt`` in ns, frequencies
in Hz.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AliasingError, NoiseTraceError

CHANNELS = ("L", "R", "LR")

F_LOW_HZ = 1.0
F_HIGH_HZ = 256e9
F_SPLIT_HZ = 1.2e6


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    """One draw of the three detuning shifts.

    Attributes
    ----------
    values : ndarray
        Shape ``(3,)`` for a constant shift or ``(3, n)`` for a trace whose
        sample ``j`` holds on ``[j dt, (j + 1) dt)``.
    weight : float
        Statistical weight (quadrature weight or ``1/N``).
    dt : float or None
        Sampling interval in ns; ``None`` for constant shifts.
    """

    values: np.ndarray
    weight: float = 1.0
    dt: float | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[0] != 3 or v.ndim not in (1, 2):
            raise NoiseTraceError("values must have shape (3,) or (3, n)")
        if (v.ndim == 2) != (self.dt is not None):
            raise NoiseTraceError("time series need dt; constant shifts must not set it")
        if not self.weight > 0:
            raise NoiseTraceError("weight must be positive")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, d_eps_L=0.0, d_eps_R=0.0, d_eps_LR=0.0, weight=1.0) -> "NoiseRealization":
        return cls(np.array([d_eps_L, d_eps_R, d_eps_LR], dtype=float), weight)

    @property
    def is_constant(self) -> bool:
        return self.dt is None

    @property
    def duration(self) -> float:
        return math.inf if self.is_constant else self.values.shape[1] * self.dt

    @property
    def initial(self) -> np.ndarray:
        """Shifts at ``t = 0``; these set the initial eigenstates."""
        return self.values if self.is_constant else self.values[:, 0]

    def covers(self, duration: float) -> bool:
        return self.duration >= duration * (1 - 1e-12)

    def at(self, t) -> np.ndarray:
        """Shifts at time(s) ``t``, shape ``(3,)`` or ``(3, len(t))``."""
        if self.is_constant:
            return self.values if np.ndim(t) == 0 else np.repeat(self.values[:, None], np.size(t), 1)
        j = np.floor(np.asarray(t, dtype=float) / self.dt + 1e-9).astype(int)
        if np.any(j < 0) or np.any(j >= self.values.shape[1] + 1):
            raise NoiseTraceError("noise trace does not cover the requested time")
        j = np.minimum(j, self.values.shape[1] - 1)
        return self.values[:, j]

    def scaled(self, factor: float) -> "NoiseRealization":
        return dataclasses.replace(self, values=self.values * factor)


NOISE_FREE = NoiseRealization.constant()


def quadrature_grid(sigma_L, sigma_R, sigma_LR, nodes_per_channel=6) -> list[NoiseRealization]:
    """Gauss-Hermite tensor grid for three independent Gaussian shifts.

    Nodes are the Hermite abscissae scaled by ``sigma * sqrt(2)`` and the
    product weights sum to one.  The left channel varies slowest.
    """
    if min(sigma_L, sigma_R, sigma_LR) < 0:
        raise ValueError("standard deviations must be non-negative")
    if nodes_per_channel < 1:
        raise ValueError("need at least one node per channel")
    x, w = np.polynomial.hermite.hermgauss(nodes_per_channel)
    w = w / w.sum()
    x = x * math.sqrt(2.0)
    sig = (sigma_L, sigma_R, sigma_LR)
    out = []
    for i in range(nodes_per_channel):
        for j in range(nodes_per_channel):
            for k in range(nodes_per_channel):
                vals = np.array([sig[0] * x[i], sig[1] * x[j], sig[2] * x[k]])
                out.append(NoiseRealization(vals, float(w[i] * w[j] * w[k])))
    return out


def quasistatic_monte_carlo(sigma_L, sigma_R, sigma_LR, n, seed=0) -> list[NoiseRealization]:
    """``n`` equally weighted random constant shifts."""
    rng = np.random.default_rng(seed)
    draws = rng.standard_normal((n, 3)) * np.array([sigma_L, sigma_R, sigma_LR])
    return [NoiseRealization(d, 1.0 / n) for d in draws]


def sigma_to_c_eps(sigma, f_low=F_LOW_HZ, f_high=F_HIGH_HZ) -> float:
    """Amplitude ``c_eps`` whose full-band variance ``2 c^2 ln(f_high/f_low)`` is ``sigma**2``."""
    return sigma / math.sqrt(2.0 * math.log(f_high / f_low))


@dataclass(frozen=True)
class OneOverFSpec:
    """Flicker-noise parameters.

    ``dt`` defaults to the Nyquist interval ``1 / (2 f_high)`` expressed in ns.
    """

    c_eps: float
    f_low: float = F_LOW_HZ
    f_high: float = F_HIGH_HZ
    f_split: float = F_SPLIT_HZ
    dt: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.f_low < self.f_split < self.f_high):
            raise ValueError("need 0 < f_low < f_split < f_high")
        if self.dt is None:
            object.__setattr__(self, "dt", 1e9 / (2.0 * self.f_high))
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.dt * 1e-9 > 1.0 / (2.0 * self.f_high) * (1 + 1e-12):
            raise AliasingError(f"dt = {self.dt} ns cannot resolve f_high = {self.f_high:g} Hz")

    @classmethod
    def from_sigma(cls, sigma, **kwargs) -> "OneOverFSpec":
        f_low = kwargs.get("f_low", F_LOW_HZ)
        f_high = kwargs.get("f_high", F_HIGH_HZ)
        return cls(sigma_to_c_eps(sigma, f_low, f_high), **kwargs)

    @property
    def total_variance(self) -> float:
        return 2.0 * self.c_eps**2 * math.log(self.f_high / self.f_low)

    @property
    def quasistatic_variance(self) -> float:
        return 2.0 * self.c_eps**2 * math.log(self.f_split / self.f_low)

    def fft_length(self, duration: float) -> int:
        """Power-of-two trace length resolving ``f_split`` and covering ``duration``."""
        dt_s = self.dt * 1e-9
        need = max(1.0 / (self.f_split * dt_s), duration / self.dt + 1, 2)
        return 1 << int(math.ceil(math.log2(need)))


def _band_variances(spec: OneOverFSpec, n_fft: int) -> np.ndarray:
    """Exact spectral weight ``2 c^2 int df/f`` of every rfft bin inside the band."""
    df = 1.0 / (n_fft * spec.dt * 1e-9)
    k = np.arange(n_fft // 2 + 1)
    lo = np.maximum((k - 0.5) * df, spec.f_split)
    hi = np.minimum((k + 0.5) * df, spec.f_high)
    v = np.zeros(k.size)
    ok = hi > lo
    v[ok] = 2.0 * spec.c_eps**2 * np.log(hi[ok] / lo[ok])
    return v


def _channel_rng(master: int, index: int, channel: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master), int(index), int(channel)]))


def _unit_trace(spec: OneOverFSpec, n_fft: int, n_keep: int, rng, band_sd) -> np.ndarray:
    m = n_fft // 2 + 1
    g = rng.standard_normal((2, m))
    z = (n_fft / 2) * band_sd * (g[0] - 1j * g[1])
    z[-1] = n_fft * band_sd[-1] * g[0, -1]
    z[0] = 0.0
    trace = np.fft.irfft(z, n_fft)[:n_keep]
    return trace + math.sqrt(spec.quasistatic_variance) * rng.standard_normal()


def sample_one_over_f(spec: OneOverFSpec, duration: float, index: int = 0, weight: float = 1.0) -> NoiseRealization:
    """Draw realization ``index`` of three independent flicker-noise traces.

    The random stream of each (realization, channel) pair is seeded from
    ``(spec.seed, index, channel)`` alone, so results do not depend on the
    order in which realizations are generated.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    n_fft = spec.fft_length(duration)
    n_keep = int(math.ceil(duration / spec.dt - 1e-9)) + 1
    if spec.c_eps == 0:
        return NoiseRealization(np.zeros((3, n_keep)), weight, spec.dt)
    band_sd = np.sqrt(_band_variances(spec, n_fft))
    vals = np.stack(
        [_unit_trace(spec, n_fft, n_keep, _channel_rng(spec.seed, index, ch), band_sd) for ch in range(3)]
    )
    return NoiseRealization(vals, weight, spec.dt)


def one_over_f_ensemble(spec: OneOverFSpec, duration: float, n: int) -> list[NoiseRealization]:
    """``n`` equally weighted realizations with indices ``0 .. n-1``."""
    return [sample_one_over_f(spec, duration, k, 1.0 / n) for k in range(n)]


def psd_estimate(realizations: Sequence[NoiseRealization], channels=(0, 1, 2)):
    """Averaged two-sided periodogram of time-series realizations.

    Returns
    -------
    f_hz : ndarray
        Positive frequencies (Hz), excluding zero and Nyquist.
    psd : ndarray
        Power spectral density in GHz^2/Hz; for flicker noise it
        approaches ``c_eps**2 / f``.
    """
    if len(realizations) < 1:
        raise NoiseTraceError("no realizations given")
    if any(r.is_constant for r in realizations):
        raise NoiseTraceError("psd_estimate needs time series, got a constant shift")
    n = realizations[0].values.shape[1]
    dt = realizations[0].dt
    if any(r.values.shape[1] != n or r.dt != dt for r in realizations):
        raise NoiseTraceError("realizations must share length and dt")
    dt_s = dt * 1e-9
    acc = np.zeros(n // 2 + 1)
    count = 0
    for r in realizations:
        x = r.values[list(channels)]
        x = x - x.mean(axis=1, keepdims=True)
        acc += (np.abs(np.fft.rfft(x, axis=1)) ** 2).sum(axis=0)
        count += x.shape[0]
    psd = acc * dt_s / (n * count)
    f = np.fft.rfftfreq(n, dt_s)
    return f[1:-1], psd[1:-1]


def loglog_slope(f, psd, f_min, f_max, bins=40) -> float:
    """Least-squares slope of ``log psd`` against ``log f`` over log-spaced bin averages."""
    sel = (f >= f_min) & (f <= f_max)
    lf, lp = np.log(f[sel]), psd[sel]
    edges = np.linspace(lf.min(), lf.max(), bins + 1)
    idx = np.clip(np.digitize(lf, edges) - 1, 0, bins - 1)
    xs, ys = [], []
    for b in range(bins):
        m = idx == b
        if np.any(m):
            xs.append(lf[m].mean())
            ys.append(np.log(lp[m].mean()))
    return float(np.polyfit(xs, ys, 1)[0])
