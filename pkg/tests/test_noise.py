import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridcz.errors import AliasingError, NoiseTraceError
from hybridcz.noise import (
    NOISE_FREE,
    NoiseRealization,
    OneOverFSpec,
    _band_variances,
    loglog_slope,
    one_over_f_ensemble,
    psd_estimate,
    quadrature_grid,
    quasistatic_monte_carlo,
    sample_one_over_f,
    sigma_to_c_eps,
)

from oracles import gaussian_moment


def test_grid_shape_and_weights():
    g = quadrature_grid(1.0, 2.0, 3.0)
    assert len(g) == 216
    assert sum(r.weight for r in g) == pytest.approx(1.0, abs=1e-14)
    assert all(r.is_constant for r in g)
    # left channel varies slowest
    assert g[0].values[0] == g[35].values[0] != g[36].values[0]


@pytest.mark.parametrize("k", range(12))
def test_hermite_exact_to_degree_11(k):
    sig = 1.3
    g = quadrature_grid(sig, 0.0, 0.0)
    terms = np.array([r.weight * r.values[0] ** k for r in g])
    assert terms.sum() == pytest.approx(gaussian_moment(k, sig), rel=1e-12, abs=1e-13 * np.abs(terms).sum())


@settings(max_examples=40, deadline=None)
@given(
    st.integers(0, 5),
    st.integers(0, 5),
    st.integers(0, 5),
    st.floats(0.1, 3.0),
    st.floats(0.1, 3.0),
    st.floats(0.1, 3.0),
)
def test_hermite_mixed_moments(a, b, c, s1, s2, s3):
    g = quadrature_grid(s1, s2, s3)
    terms = np.array([r.weight * r.values[0] ** a * r.values[1] ** b * r.values[2] ** c for r in g])
    expect = gaussian_moment(a, s1) * gaussian_moment(b, s2) * gaussian_moment(c, s3)
    assert terms.sum() == pytest.approx(expect, rel=1e-10, abs=1e-13 * np.abs(terms).sum())


def test_hermite_not_exact_at_degree_12():
    g = quadrature_grid(1.0, 0.0, 0.0)
    m = sum(r.weight * r.values[0] ** 12 for r in g)
    assert abs(m - gaussian_moment(12, 1.0)) > 1.0


def test_grid_validation():
    with pytest.raises(ValueError):
        quadrature_grid(-1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        quadrature_grid(1.0, 1.0, 1.0, 0)


def test_monte_carlo_is_seeded():
    a = quasistatic_monte_carlo(1, 1, 1, 50, seed=4)
    b = quasistatic_monte_carlo(1, 1, 1, 50, seed=4)
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))
    assert sum(r.weight for r in a) == pytest.approx(1.0)


def test_realization_validation_and_lookup():
    with pytest.raises(NoiseTraceError):
        NoiseRealization(np.zeros(2))
    with pytest.raises(NoiseTraceError):
        NoiseRealization(np.zeros((3, 4)))
    with pytest.raises(NoiseTraceError):
        NoiseRealization(np.zeros(3), weight=0.0)
    r = NoiseRealization(np.arange(12.0).reshape(3, 4), dt=0.5)
    assert r.duration == 2.0
    np.testing.assert_array_equal(r.at(0.6), [1.0, 5.0, 9.0])
    np.testing.assert_array_equal(r.initial, [0.0, 4.0, 8.0])
    assert r.covers(2.0) and not r.covers(2.1)
    with pytest.raises(NoiseTraceError):
        r.at(3.0)
    assert NOISE_FREE.is_constant and NOISE_FREE.duration == math.inf
    np.testing.assert_array_equal(r.scaled(2.0).values, 2 * r.values)


def test_spec_defaults_and_aliasing():
    s = OneOverFSpec(1e-3)
    assert s.dt == pytest.approx(1e9 / (2 * 256e9))
    with pytest.raises(AliasingError):
        OneOverFSpec(1e-3, dt=0.01)
    with pytest.raises(ValueError):
        OneOverFSpec(1e-3, f_split=1e12)
    assert OneOverFSpec.from_sigma(2.0).total_variance == pytest.approx(4.0)
    assert sigma_to_c_eps(2.0) == pytest.approx(2.0 / math.sqrt(2 * math.log(256e9)))


def test_designed_variance_covers_band():
    spec = OneOverFSpec.from_sigma(1.0)
    n = spec.fft_length(10.0)
    designed = _band_variances(spec, n).sum() + spec.quasistatic_variance
    assert designed == pytest.approx(spec.total_variance, rel=1e-9)


def test_sample_variance_matches_spectrum():
    spec = OneOverFSpec(0.01, f_low=1e6, f_split=1e7, f_high=1e10, dt=0.05, seed=3)
    traces = one_over_f_ensemble(spec, 100.0, 1000)
    v = np.var(np.concatenate([r.values.ravel() for r in traces]))
    assert v == pytest.approx(2 * 0.01**2 * math.log(1e4), rel=0.03)


def test_periodogram_slope_and_level():
    spec = OneOverFSpec.from_sigma(1.0, seed=2)
    f, p = psd_estimate(one_over_f_ensemble(spec, 200.0, 8))
    assert loglog_slope(f, p, 5e7, 1e11) == pytest.approx(-1.0, abs=0.1)
    band = (f > 1e9) & (f < 2e9)
    assert np.median(p[band] * f[band]) == pytest.approx(spec.c_eps**2, rel=0.1)


def test_traces_are_reproducible_and_order_free():
    spec = OneOverFSpec.from_sigma(1.0, seed=11)
    a = sample_one_over_f(spec, 5.0, index=3)
    b = one_over_f_ensemble(spec, 5.0, 5)[3]
    np.testing.assert_array_equal(a.values, b.values)
    c = sample_one_over_f(OneOverFSpec.from_sigma(1.0, seed=12), 5.0, index=3)
    assert not np.array_equal(a.values, c.values)
    assert a.covers(5.0)
    assert not np.array_equal(a.values[0], a.values[1])


def test_unit_traces_scale_linearly():
    a = sample_one_over_f(OneOverFSpec.from_sigma(1.0, seed=5), 2.0)
    b = sample_one_over_f(OneOverFSpec.from_sigma(3.0, seed=5), 2.0)
    np.testing.assert_allclose(b.values, 3.0 * a.values, rtol=1e-12)
    z = sample_one_over_f(OneOverFSpec(0.0), 2.0)
    assert not np.any(z.values)


def test_psd_rejects_constant_shifts():
    with pytest.raises(NoiseTraceError):
        psd_estimate([NOISE_FREE])
    with pytest.raises(NoiseTraceError):
        psd_estimate([])
