import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from greennoise.core import InvalidInputError
from greennoise.maskgen import (
    BinaryMask,
    blue_noise_mask,
    constant_mask,
    disk_filter,
    fmedg_generate,
    generate_mask,
    high_freq_ratio,
    med_generate,
    radial_power_spectrum,
    ring_filter,
    sector_powers,
    white_noise_mask,
)

from .oracles import brute_dft2, ring_support


def _count_ok(mask, sigma):
    n = mask.bits.size
    return abs(int(mask.bits.sum()) - sigma * n) <= 0.005 * n


# -- kernels -------------------------------------------------------------------


def test_ring_r1_1p5_support_and_weights():
    k = ring_filter(1.5)
    assert set(k.as_dict()) == {(2, 0), (-2, 0), (0, 2), (0, -2)}
    assert set(k.as_dict()) == ring_support(1.5, 1.5 * math.sqrt(2))
    assert all(w == pytest.approx(0.25) for w in k.weights)
    assert k.r2 == pytest.approx(2.1213, abs=1e-4)


@given(st.floats(0.5, 6.0))
def test_ring_support_matches_enumeration(r1):
    k = ring_filter(r1)
    assert set(k.as_dict()) == ring_support(r1, max(math.sqrt(2) * r1, 1.0))
    assert math.isclose(k.weights.sum(), 1.0, rel_tol=0, abs_tol=1e-15)
    assert np.all(k.weights > 0)


@given(st.floats(0.5, 6.0))
def test_ring_support_symmetric(r1):
    support = set(ring_filter(r1).as_dict())
    for m, n in support:
        assert (-m, -n) in support and (n, m) in support
    assert (0, 0) not in support


def test_ring_zero_is_disk():
    k = ring_filter(0.0)
    assert set(k.as_dict()) == ring_support(0.0, math.sqrt(2))
    assert len(k.weights) == 8


def test_disk_filter_radius_1p5():
    assert set(disk_filter(1.5).as_dict()) == ring_support(0.0, 1.5)


def test_negative_r1_rejected():
    with pytest.raises(InvalidInputError):
        ring_filter(-0.1)


# -- BinaryMask ----------------------------------------------------------------


def test_binary_mask_validates():
    with pytest.raises(InvalidInputError):
        BinaryMask(np.array([[0, 2]]), "white", 0.5, 0)
    with pytest.raises(InvalidInputError):
        BinaryMask(np.zeros((2, 2)), "pink", 0.5, 0)
    m = BinaryMask(np.eye(3, dtype=int), "white", 1 / 3, 0)
    assert m.shape == (3, 3) and m.bits.dtype == np.uint8
    with pytest.raises(ValueError):
        m.bits[0, 0] = 0


# -- generators ----------------------------------------------------------------


def test_constant_masks():
    ones = generate_mask("green", 16, 16, 1.0, 0, 1.5)
    assert ones.bits.all() and high_freq_ratio(ones) == 0.0
    zeros = generate_mask("white", 16, 16, 0.0, 0)
    assert not zeros.bits.any()
    assert np.all(radial_power_spectrum(ones, 8).mean_power == 0)


def test_white_exact_count_and_determinism():
    a = white_noise_mask(50, 40, 0.37, 5)
    b = white_noise_mask(50, 40, 0.37, 5)
    assert a.bits.sum() == round(0.37 * 2000)
    assert np.array_equal(a.bits, b.bits)
    assert not np.array_equal(a.bits, white_noise_mask(50, 40, 0.37, 6).bits)


@pytest.mark.parametrize("gen", ["green", "blue", "white"])
def test_generators_deterministic(gen):
    a = generate_mask(gen, 32, 24, 0.4, 11, 1.5)
    b = generate_mask(gen, 32, 24, 0.4, 11, 1.5)
    assert np.array_equal(a.bits, b.bits)
    assert a.shape == (24, 32)


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("kind", ["green", "blue", "white"])
def test_conservation_bound(kind, seed):
    sigma = [0.3, 0.5, 0.7][seed % 3]
    mask = generate_mask(kind, 64, 64, sigma, seed, 1.5)
    assert _count_ok(mask, sigma)


def test_med_places_exact_target_without_discard():
    bits, placed, discarded = med_generate(64, 64, 0.5, ring_filter(1.5), 0, "fmedg")
    assert placed == bits.sum() == math.floor(0.5 * 4096 + 0.5)
    assert discarded >= 0


@settings(max_examples=25)
@given(st.integers(4, 40), st.integers(4, 40), st.floats(0.05, 0.95), st.floats(0.5, 3.0), st.integers(0, 2**32))
def test_fmedg_conservation_property(w, h, sigma, r1, seed):
    mask = fmedg_generate(w, h, sigma, r1, seed)
    assert _count_ok(mask, sigma) or abs(int(mask.bits.sum()) - sigma * w * h) <= 1
    assert set(np.unique(mask.bits)) <= {0, 1}


def test_fmedg_rejects_bad_sigma_and_r1():
    with pytest.raises(InvalidInputError):
        fmedg_generate(16, 16, 1.0, 1.5, 0)
    with pytest.raises(InvalidInputError):
        fmedg_generate(16, 16, 0.5, 0.2, 0)
    with pytest.raises(InvalidInputError):
        blue_noise_mask(16, 16, 0.0, 0)
    with pytest.raises(InvalidInputError):
        generate_mask("green", 16, 16, 0.5, 0, None)


# -- spectra -------------------------------------------------------------------


def test_eta_checkerboard_brute_force():
    i, j = np.indices((8, 8))
    bits = ((i + j) % 2).astype(np.uint8)
    power = np.abs(brute_dft2(bits)) ** 2
    # Nyquist bin (4, 4) sits in the high band, DC does not
    expected = power[4, 4] / power.sum()
    mask = BinaryMask(bits, "white", 0.5, 0)
    assert high_freq_ratio(mask) == pytest.approx(expected, abs=1e-12)
    assert high_freq_ratio(mask) == pytest.approx(0.5, abs=1e-12)


def test_eta_in_unit_interval():
    for kind in ("green", "white", "blue"):
        eta = high_freq_ratio(generate_mask(kind, 32, 32, 0.5, 1, 1.5))
        assert 0 <= eta <= 1


def test_spectral_bands_200():
    g = high_freq_ratio(fmedg_generate(200, 200, 0.5, 1.5, 0))
    w = high_freq_ratio(white_noise_mask(200, 200, 0.5, 0))
    b = high_freq_ratio(blue_noise_mask(200, 200, 0.5, 0))
    assert 0.01 <= g <= 0.11
    assert 0.12 <= w <= 0.25
    assert 0.25 <= b <= 0.45
    assert g < w < b


def test_white_profile_is_flat():
    for seed in range(10):
        p = radial_power_spectrum(white_noise_mask(200, 200, 0.5, seed), 16)
        inner = p.mean_power[:-2]
        assert inner.max() / inner.min() < 4


def test_green_profile_has_interior_peak():
    p = radial_power_spectrum(fmedg_generate(200, 200, 0.5, 1.5, 0), 32)
    peak = p.peak_bin()
    assert 2 <= peak <= 28
    assert p.mean_power[peak] > 2 * p.mean_power[0]
    assert p.mean_power[peak] > 2 * p.mean_power[-1]


def test_peak_frequency_decreases_with_r1_64():
    lo = radial_power_spectrum(fmedg_generate(64, 64, 0.5, 1.0, 0), 32).peak_bin()
    hi = radial_power_spectrum(fmedg_generate(64, 64, 0.5, 2.5, 0), 32).peak_bin()
    assert hi < lo


def test_peak_frequency_non_increasing_over_r1_ladder():
    peaks = [radial_power_spectrum(fmedg_generate(200, 200, 0.5, r1, 0), 32).peak_bin() for r1 in (1.0, 1.5, 2.0, 2.5)]
    assert all(a >= b for a, b in zip(peaks, peaks[1:]))


def test_green_isotropy_at_peak():
    mask = fmedg_generate(200, 200, 0.5, 1.5, 3)
    peak = radial_power_spectrum(mask, 32).peak_bin()
    sectors = sector_powers(mask, peak, 32, 8)
    assert np.std(sectors) / np.mean(sectors) < 0.5


def test_profile_bins_and_validation():
    p = radial_power_spectrum(white_noise_mask(20, 20, 0.5, 0), 8)
    assert len(p.bin_centers) == 8 and np.all(p.mean_power >= 0)
    assert p.bin_centers[0] > 0 and p.bin_centers[-1] < math.sqrt(2) / 2
    with pytest.raises(InvalidInputError):
        radial_power_spectrum(constant_mask(4, 4, 1), 3)
