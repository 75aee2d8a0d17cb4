import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fdct.frequency import decompose, gaussian_mask, lowpass
from fdct.geometry import DoseModel, simulate_low_dose
from oracles import centered_freq, dft2, idft2


def test_mask_values():
    m = gaussian_mask(16, 20, 0.1)
    assert m.gains[0, 0] == 1.0
    # frequency (0.1, 0) on a 20-point axis is bin 2 along the second axis
    m2 = gaussian_mask(10, 20, 0.1)
    assert m2.gains[1, 0] == pytest.approx(math.exp(-0.5), rel=1e-12)
    assert m2.gains[0, 2] == pytest.approx(math.exp(-0.5), rel=1e-12)


def test_mask_symmetric_and_radially_decreasing():
    m = gaussian_mask(9, 12, 0.08)
    g = m.gains
    for u in range(9):
        for v in range(12):
            assert g[u, v] == pytest.approx(g[-u % 9, -v % 12], abs=0)
    fu, fv = centered_freq(9)[:, None], centered_freq(12)[None, :]
    radius = np.sqrt(fu ** 2 + fv ** 2).ravel()
    order = np.argsort(radius, kind="stable")
    assert np.all(np.diff(g.ravel()[order]) <= 1e-15)


def test_mask_validation():
    with pytest.raises(ValueError):
        gaussian_mask(8, 8, 0.0)
    with pytest.raises(ValueError):
        gaussian_mask(0, 8, 0.1)
    with pytest.raises(ValueError):
        decompose(np.zeros(8), 0.1)
    with pytest.raises(ValueError):
        decompose(np.full((4, 4), np.nan), 0.1)


def test_impulse_matches_direct_dft_oracle():
    n, sigma = 8, 0.15
    x = np.zeros((n, n))
    x[3, 5] = 1.0
    f = centered_freq(n)
    kernel = np.exp(-(f[:, None] ** 2 + f[None, :] ** 2) / (2 * sigma ** 2))
    want = idft2(dft2(x) * kernel)
    assert np.max(np.abs(want.imag)) < 1e-12
    np.testing.assert_allclose(lowpass(x, sigma), want.real, atol=1e-9, rtol=0)
    np.testing.assert_allclose(decompose(x, sigma).low, want.real, atol=1e-9, rtol=0)


def test_random_field_matches_direct_dft_oracle(rng):
    x = rng.normal(size=(6, 7))
    f6, f7 = centered_freq(6), centered_freq(7)
    kernel = np.exp(-(f6[:, None] ** 2 + f7[None, :] ** 2) / (2 * 0.2 ** 2))
    np.testing.assert_allclose(lowpass(x, 0.2), idft2(dft2(x) * kernel).real, atol=1e-9)


def test_constant_field_has_no_high_band():
    trip = decompose(np.full((12, 16), 3.7), 0.08)
    np.testing.assert_allclose(trip.low, 3.7, rtol=1e-12)
    assert np.max(np.abs(trip.high)) < 1e-12
    assert np.array_equal(trip.full, np.full((12, 16), 3.7))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 24), st.integers(2, 24)),
              elements=st.floats(-1e6, 1e6)),
       st.floats(0.01, 1.0))
def test_split_identity(x, sigma):
    trip = decompose(x, sigma)
    scale = max(np.max(np.abs(x)), 1e-300)
    assert np.max(np.abs(trip.low + trip.high - x)) <= 1e-6 * scale


def test_noise_energy_concentrates_in_high_band():
    # smooth sinogram-like field, default sigma
    h, w = 32, 32
    u, v = np.meshgrid(np.linspace(0, 1, w), np.linspace(0, 1, h))
    clean = 2.0 + np.sin(2 * np.pi * u) * np.cos(np.pi * v)
    for seed in range(20):
        noisy = simulate_low_dose(clean, DoseModel(1e4, 0.0, seed))
        trip = decompose(noisy - clean, 0.08)
        assert np.sum(trip.high ** 2) > np.sum(trip.low ** 2)


def test_second_low_pass_removes_less(rng):
    x = rng.normal(size=(32, 32))
    first = decompose(x, 0.08)
    second = decompose(first.low, 0.08)
    assert np.linalg.norm(second.high) < np.linalg.norm(first.high)
