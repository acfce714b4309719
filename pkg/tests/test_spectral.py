import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as O
from freqsem import ops
from freqsem.errors import ShapeError
from freqsem.spectral import (BOX3, IDENTITY3, LAPLACIAN3, band_masks, band_split_fft,
                              conv2d_via_fft, fft2, frequency_grid, ifft2, kernel_freq_response,
                              kernel_transfer, parseval_check)

POW2 = [1, 2, 4, 8, 16]


def test_delta_flat_spectrum():
    x = np.zeros((8, 8))
    x[0, 0] = 1
    assert np.array_equal(fft2(x), np.ones((8, 8), complex))


def test_constant_single_dc_bin():
    g = fft2(np.full((4, 8), 2.5))
    assert g[0, 0] == 2.5 * 32
    g[0, 0] = 0
    assert np.max(np.abs(g)) < 1e-12


def test_transform_identities_many(rng):
    for _ in range(100):
        h, w = (int(v) for v in rng.choice(POW2, 2))
        x = rng.standard_normal((2, h, w))
        y = rng.standard_normal((2, h, w))
        a, b = rng.standard_normal(2)
        gx = fft2(x)
        ref = O.dft2(x)
        assert np.max(np.abs(gx - ref)) <= 1e-10 * max(1.0, np.max(np.abs(ref)))
        assert np.max(np.abs(ifft2(gx).data - x)) <= 1e-10 * np.max(np.abs(x))
        assert parseval_check(x) < 1e-10
        lin = fft2(a * x + b * y) - (a * gx + b * fft2(y))
        assert np.max(np.abs(lin)) <= 1e-10 * max(1.0, np.max(np.abs(gx)))


def test_parseval_examples(rng):
    assert parseval_check(np.zeros((4, 4))) == 0.0
    d = np.zeros((8, 8))
    d[3, 5] = 1
    assert parseval_check(d) == 0.0
    assert parseval_check(rng.standard_normal((8, 8))) < 1e-10


@pytest.mark.parametrize("shape", [(6, 8), (8, 12), (3, 3)])
def test_non_power_of_two(shape):
    for fn in (fft2, parseval_check, band_split_fft, lambda x: conv2d_via_fft(x, BOX3)):
        with pytest.raises(ShapeError):
            fn(np.zeros(shape))


def test_conv_via_fft_examples(rng):
    x = rng.standard_normal((1, 2, 8, 8))
    assert np.max(np.abs(conv2d_via_fft(x, IDENTITY3).data - x)) < 1e-10
    c = conv2d_via_fft(np.full((8, 8), 3.0), BOX3).data
    assert np.max(np.abs(c - 3.0)) < 1e-12


def test_conv_via_fft_matches_circular_loop(rng):
    for _ in range(5):
        x = rng.standard_normal((2, 16, 16))
        k = rng.standard_normal((3, 3))
        assert O.rel_err(conv2d_via_fft(x, k), O.circular_correlate(x, k)) < 1e-6
    k5 = rng.standard_normal((5, 5))
    x = rng.standard_normal((16, 16))
    assert O.rel_err(conv2d_via_fft(x, k5), O.circular_correlate(x, k5)) < 1e-6


def test_conv_via_fft_matches_conv2d_interior(rng):
    x = rng.standard_normal((1, 1, 16, 16))
    k = rng.standard_normal((3, 3))
    direct = ops.conv2d_raw(x, k[None, None]).data
    assert O.rel_err(conv2d_via_fft(x, k).data[..., 1:-1, 1:-1], direct[..., 1:-1, 1:-1]) < 1e-6


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(POW2), st.sampled_from(POW2), st.floats(0.05, 2.0), st.floats(0.05, 2.0))
def test_masks_partition(h, w, a, b):
    m = band_masks(h, w, a, a + b)
    total = m.low.astype(int) + m.mid.astype(int) + m.high.astype(int)
    assert np.all(total == 1)
    assert m.low[0, 0]


def test_band_split_reconstructs(rng):
    for _ in range(20):
        h, w = (int(v) for v in rng.choice([4, 8, 16], 2))
        x = rng.standard_normal((1, 3, h, w))
        bands = band_split_fft(x)
        assert O.rel_err(sum(b.data for b in bands), x) < 1e-6


def test_constant_is_low_band():
    x = np.full((1, 1, 8, 8), 1.7)
    low, mid, high = band_split_fft(x)
    assert np.max(np.abs(low.data - x)) < 1e-12
    assert np.max(np.abs(mid.data)) < 1e-12 and np.max(np.abs(high.data)) < 1e-12


def test_checkerboard_is_high_band():
    i, j = np.indices((8, 8))
    x = ((-1.0) ** (i + j))[None, None]
    spec = O.dft2(x[0, 0])
    assert np.count_nonzero(np.abs(spec) > 1e-9) == 1 and abs(spec[4, 4]) > 0
    low, mid, high = band_split_fft(x)
    assert np.max(np.abs(high.data - x)) < 1e-12
    assert np.max(np.abs(low.data)) < 1e-12 and np.max(np.abs(mid.data)) < 1e-12


def test_transfer_matches_direct_sum(rng):
    k = rng.standard_normal((3, 5))
    for w1, w2 in rng.uniform(-math.pi, math.pi, (10, 2)):
        assert abs(kernel_transfer(k, w1, w2) - O.transfer(k, w1, w2)) < 1e-12


def test_box_response_examples():
    r = kernel_freq_response(BOX3, 33)
    assert abs(r[16, 16] - 1.0) < 1e-12
    assert abs(r[0, 0] - 1 / 9) < 1e-12 and abs(r[-1, -1] - 1 / 9) < 1e-12


def test_box_low_pass_shape():
    # |1 + 2 cos w| / 3 dips to 0 at 2pi/3 and rises to 1/3 at pi, so the
    # magnitude is not monotone; the signed real transfer is
    w = frequency_grid(129)[64:]
    h_axis = kernel_transfer(BOX3, w, np.zeros_like(w)).real
    h_other = kernel_transfer(BOX3, np.zeros_like(w), w).real
    assert np.all(np.diff(h_axis) <= 1e-12) and np.all(np.diff(h_other) <= 1e-12)
    mag = np.abs(h_axis)
    assert mag[0] == pytest.approx(1.0) and mag[-1] == pytest.approx(1 / 3)


def test_laplacian_high_pass_shape():
    r = kernel_freq_response(LAPLACIAN3, 33)
    assert r[16, 16] < 1e-12
    assert abs(r[0, 0] - 1.0) < 1e-12
    # the lattice maximum sits at (0, pi) with 1.5, above the (pi, pi) value
    assert abs(r.max() - 1.5) < 1e-12 and abs(r[16, 0] - 1.5) < 1e-12


def test_identity_all_pass():
    assert np.max(np.abs(kernel_freq_response(IDENTITY3, 17) - 1)) < 1e-12


def test_response_rejects_even_kernel():
    with pytest.raises(ShapeError):
        kernel_freq_response(np.ones((2, 2)), 9)
