import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import smooth_texture
from pcwlad.phasecong import (
    NoiseMode,
    PcParams,
    angular_gain,
    build_filter_bank,
    compute_pc,
    estimate_noise_threshold,
    frequency_grid,
    radial_gain,
    rayleigh_stats,
    rayleigh_threshold,
)


# --- filter bank -------------------------------------------------------------


def test_default_bank_has_24_zero_dc_filters():
    bank = build_filter_bank(64, 48)
    assert len(bank) == 24
    assert bank.filters.shape == (4, 6, 48, 64)
    assert np.all(bank.filters[:, :, 0, 0] == 0)


def test_gain_peaks_at_centre_frequency_and_orientation():
    p = PcParams()
    for n in range(p.n_scales):
        f0 = p.center_frequency(n)
        assert radial_gain(np.array([f0]), f0, p.sigma_on_f)[0] == pytest.approx(1.0)
        assert radial_gain(np.array([f0 * 1.3]), f0, p.sigma_on_f)[0] < 1.0
    for o in range(p.n_orientations):
        a = o * math.pi / p.n_orientations
        assert angular_gain(np.array([a]), a, p.n_orientations)[0] == pytest.approx(1.0)
        # a filter also responds to the opposite half-plane angle ± pi
        assert angular_gain(np.array([a + 0.3]), a, p.n_orientations)[0] < 1.0


def test_radial_gain_log_gaussian_oracle():
    f0, s = 0.1, 0.55
    r = np.array([0.05, 0.1, 0.2, 0.4])
    expect = np.exp(-np.log(r / f0) ** 2 / (2 * np.log(s) ** 2))
    np.testing.assert_allclose(radial_gain(r, f0, s), expect, rtol=1e-14)


def test_frequency_grid_dc_and_nyquist():
    r, th = frequency_grid(8, 8)
    assert r[0, 0] == 0
    assert r[0, 4] == pytest.approx(0.5)
    assert th[0, 1] == pytest.approx(0.0)
    # row frequency +1/8 points "down" the image; the angle convention flips it
    assert th[1, 0] == pytest.approx(-math.pi / 2)


def test_bad_params_rejected():
    with pytest.raises(ValueError):
        PcParams(sigma_on_f=1.2)
    with pytest.raises(ValueError):
        PcParams(n_scales=0)
    with pytest.raises(ValueError):
        PcParams(noise_mode="gaussian")


# --- Rayleigh noise model ----------------------------------------------------


def test_rayleigh_values_against_scipy():
    for sg in (0.3, 1.0, 2.7):
        mu, sd = rayleigh_stats(sg)
        assert mu == pytest.approx(stats.rayleigh(scale=sg).mean(), rel=1e-12)
        assert sd == pytest.approx(stats.rayleigh(scale=sg).std(), rel=1e-12)


def test_rayleigh_threshold_examples():
    mu, sd = rayleigh_stats(1.0)
    assert round(mu, 4) == 1.2533
    assert round(sd, 4) == 0.6551
    assert round(rayleigh_threshold(1.0, 2.0), 4) == 2.5636
    assert round(rayleigh_threshold(1.0, 3.0), 4) == 3.2187
    assert rayleigh_threshold(0.0, 2.0) == 0.0


@given(st.floats(1e-6, 1e6))
def test_rayleigh_ratio_identity(sg):
    mu, sd = rayleigh_stats(sg)
    assert sd / mu == pytest.approx(math.sqrt((4 - math.pi) / math.pi), rel=1e-14)


def test_noise_threshold_recovers_rayleigh_scale():
    # amplitudes drawn from a Rayleigh law: the median estimator recovers its scale
    p = PcParams(n_scales=1, k_noise=2.0)
    amp = stats.rayleigh(scale=0.7).rvs(size=200_000, random_state=np.random.default_rng(0))
    t = estimate_noise_threshold(amp, p)
    assert t == pytest.approx(rayleigh_threshold(0.7, 2.0), rel=1e-2)


# --- phase congruency ----------------------------------------------------------


def test_constant_image_gives_zero_pc():
    m = compute_pc(np.full((64, 64), 0.4))
    assert m.pc.max() <= 1e-6


def _fourier_pc_1d(row):
    """Phase agreement of the Fourier components of a periodic 1-D signal:
    |sum of analytic components| / sum of amplitudes, at every sample."""
    n = len(row)
    f = np.fft.fft(row)
    k = np.arange(1, n // 2)
    x = np.arange(n)
    comp = np.abs(f[k])[:, None] * np.exp(1j * (2 * np.pi * k[:, None] * x / n + np.angle(f[k])[:, None]))
    return np.abs(comp.sum(axis=0)) / np.abs(f[k]).sum()


def test_step_edge_matches_fourier_oracle():
    img = np.zeros((64, 64))
    img[:, 32:] = 1.0
    pc = compute_pc(img).pc
    oracle = _fourier_pc_1d(img[0])
    inner = slice(8, 56)
    # same edge location as the oracle, away from the periodic wrap edge
    assert set(np.flatnonzero(np.isclose(oracle[inner], oracle[inner].max())) + 8) == {31, 32}
    assert np.all(np.argmax(pc[:, inner], axis=1) + 8 >= 31)
    assert np.all(np.argmax(pc[:, inner], axis=1) + 8 <= 32)
    edge = pc[:, 31:33].max(axis=1)
    assert np.all(edge > 0.6)
    np.testing.assert_allclose(edge, pc.max(axis=1), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 100.0), st.floats(-1.0, 1.0))
def test_exact_contrast_equivariance_with_scaled_epsilon(seed, a, b):
    # epsilon is the only absolute constant, so scaling it with the image
    # must reproduce the map exactly
    img = smooth_texture((48, 48), seed=seed, sigma=1.0)
    p1 = compute_pc(img).pc
    p2 = compute_pc(a * img + b, PcParams(epsilon=a * 1e-4)).pc
    np.testing.assert_allclose(p2, p1, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.5, 4.0), st.floats(-1.0, 1.0))
def test_contrast_invariance_on_texture(seed, a, b):
    img = smooth_texture((48, 48), seed=seed, sigma=1.0)
    p1 = compute_pc(img).pc
    p2 = compute_pc(a * img + b).pc
    assert np.abs(p1 - p2).max() < 1e-3


def test_contrast_invariance_spec_map():
    rng = np.random.default_rng(11)
    img = rng.random((64, 64))
    p1 = compute_pc(img).pc
    p2 = compute_pc(0.5 * img + 0.25).pc
    assert np.abs(p1 - p2).max() < 1e-3
    np.testing.assert_array_equal(p1.argmax(axis=1), p2.argmax(axis=1))


def test_pc_in_unit_interval_on_100_random_images():
    rng = np.random.default_rng(2024)
    for k in range(100):
        h, w = rng.integers(32, 72, size=2)
        img = rng.random((h, w)) * rng.uniform(0.01, 100)
        mode = NoiseMode.RAYLEIGH if k % 2 else NoiseMode.OFF
        pc = compute_pc(img, PcParams(noise_mode=mode)).pc
        assert pc.shape == (h, w)
        assert pc.min() >= 0.0 and pc.max() <= 1.0


def test_rayleigh_mode_never_exceeds_off(camera):
    img = camera[100:228, 150:278]
    off = compute_pc(img, PcParams(noise_mode="off")).pc
    ray = compute_pc(img, PcParams(noise_mode="rayleigh")).pc
    assert np.all(ray <= off + 1e-12)
    assert ray.sum() < off.sum()


def test_shared_bank_gives_same_result():
    img = smooth_texture((40, 56), seed=1)
    bank = build_filter_bank(56, 40)
    np.testing.assert_array_equal(compute_pc(img).pc, compute_pc(img, bank=bank).pc)
    with pytest.raises(ValueError):
        compute_pc(img, bank=build_filter_bank(40, 40))


def test_small_or_bad_input_rejected():
    with pytest.raises(ValueError):
        compute_pc(np.zeros((16, 64)))
    bad = np.zeros((40, 40))
    bad[3, 3] = np.nan
    with pytest.raises(ValueError):
        compute_pc(bad)
