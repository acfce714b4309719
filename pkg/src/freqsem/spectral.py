"""Explicit frequency-domain machinery.

A radix-2 2-D FFT, FFT-based circular convolution, a three-band radial
mask split (the explicit-transform baseline) and transfer-function
evaluation for small spatial kernels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import instrument
from .errors import ConfigError, ShapeError
from .tensor import Tensor, as_tensor


def _is_pow2(n):
    return n >= 1 and n & (n - 1) == 0


def _check_pow2(shape):
    h, w = shape[-2], shape[-1]
    if not (_is_pow2(h) and _is_pow2(w)):
        raise ShapeError(f"radix-2 transform needs power-of-two extents, got {h}x{w}")


_BITREV = {}
_TWIDDLES = {}


def _bitrev(n):
    if n not in _BITREV:
        bits = n.bit_length() - 1
        idx = np.arange(n)
        rev = np.zeros(n, dtype=np.intp)
        for b in range(bits):
            rev |= ((idx >> b) & 1) << (bits - 1 - b)
        _BITREV[n] = rev
    return _BITREV[n]


def _twiddle(size, inverse):
    key = (size, inverse)
    if key not in _TWIDDLES:
        sign = 1.0 if inverse else -1.0
        _TWIDDLES[key] = np.exp(sign * 2j * np.pi * np.arange(size // 2) / size)
    return _TWIDDLES[key]


def _fft_last(a, inverse=False):
    """Iterative decimation-in-time radix-2 FFT along the last axis (unscaled)."""
    n = a.shape[-1]
    lead = a.shape[:-1]
    out = a[..., _bitrev(n)].astype(np.complex128)
    instrument.note(0, out.nbytes)
    size = 2
    while size <= n:
        half = size // 2
        blocks = out.reshape(lead + (n // size, size))
        even = blocks[..., :half]
        odd = blocks[..., half:] * _twiddle(size, inverse)
        blocks = np.concatenate([even + odd, even - odd], axis=-1)
        instrument.note(4 * half * (n // size) * int(np.prod(lead)), 2 * blocks.nbytes, count=4)
        out = blocks.reshape(lead + (n,))
        size *= 2
    return out


def fft2(x):
    """Forward 2-D DFT over the last two axes; returns a complex128 array."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    _check_pow2(arr.shape)
    g = _fft_last(arr)
    return np.swapaxes(_fft_last(np.swapaxes(g, -1, -2)), -1, -2)


def ifft2_complex(g):
    g = np.asarray(g)
    _check_pow2(g.shape)
    h, w = g.shape[-2], g.shape[-1]
    t = _fft_last(g, inverse=True)
    t = np.swapaxes(_fft_last(np.swapaxes(t, -1, -2), inverse=True), -1, -2)
    return t / (h * w)


def ifft2(g, dtype=np.float64):
    """Inverse 2-D DFT, real part, as a :class:`Tensor` of ``dtype``."""
    return Tensor(ifft2_complex(g).real.astype(dtype))


def parseval_check(x):
    """Relative mismatch between spatial energy and spectral energy / (H*W)."""
    arr = as_tensor(x).data.astype(np.float64)
    _check_pow2(arr.shape)
    e_spatial = float((arr * arr).sum())
    spec = fft2(arr)
    e_spectral = float((spec.real ** 2 + spec.imag ** 2).sum()) / (arr.shape[-2] * arr.shape[-1])
    if e_spatial == 0.0:
        return 0.0 if e_spectral == 0.0 else math.inf
    return abs(e_spatial - e_spectral) / e_spatial


def embed_kernel(kernel, h, w):
    """Place an odd kernel on an h x w torus with its center tap at (0, 0)."""
    k = np.asarray(kernel.data if isinstance(kernel, Tensor) else kernel, dtype=np.float64)
    kh, kw = k.shape
    if kh > h or kw > w:
        raise ShapeError(f"kernel {k.shape} larger than grid {h}x{w}")
    grid = np.zeros((h, w))
    ch, cw = (kh - 1) // 2, (kw - 1) // 2
    for m in range(kh):
        for n in range(kw):
            grid[(m - ch) % h, (n - cw) % w] += k[m, n]
    return grid


def conv2d_via_fft(x, kernel):
    """Circular cross-correlation of every plane of ``x`` with a 2-D kernel.

    Matches ``conv2d`` with the same kernel on interior positions where
    padding never enters the window.
    """
    xt = as_tensor(x)
    arr = xt.data
    _check_pow2(arr.shape)
    h, w = arr.shape[-2], arr.shape[-1]
    kgrid = embed_kernel(kernel, h, w)
    spec = fft2(arr) * np.conj(fft2(kgrid))
    instrument.note(4 * spec.size, spec.nbytes)
    return Tensor(ifft2_complex(spec).real.astype(arr.dtype))


def circular_frequencies(n):
    """Angular frequency of each DFT bin in [-pi, pi); bin n/2 sits at -pi."""
    return 2.0 * np.pi * np.fft.fftfreq(n)


@dataclass(frozen=True)
class BandMasks:
    """Disjoint low/mid/high boolean masks over the (uncentered) DFT grid."""

    low: np.ndarray
    mid: np.ndarray
    high: np.ndarray
    r1: float
    r2: float

    def as_list(self):
        return [self.low, self.mid, self.high]

    def centered(self):
        return [np.fft.fftshift(m) for m in self.as_list()]


def band_masks(h, w, r1=math.pi / 3, r2=2 * math.pi / 3):
    """Radial partition: low r < r1, mid r1 <= r < r2, high otherwise.

    DC always lands in low; any bin carrying a Nyquist component lands in high.
    """
    if not (0 < r1 < r2):
        raise ConfigError(f"band cutoffs need 0 < band_r1 < band_r2, got {r1}, {r2}", key="band_r1")
    if not (_is_pow2(h) and _is_pow2(w)):
        raise ShapeError(f"band masks need power-of-two extents, got {h}x{w}")
    wy = circular_frequencies(h)[:, None]
    wx = circular_frequencies(w)[None, :]
    radius = np.sqrt(wy * wy + wx * wx)
    nyq = np.zeros((h, w), dtype=bool)
    if h > 1:
        nyq[h // 2, :] = True
    if w > 1:
        nyq[:, w // 2] = True
    low = radius < r1
    low[0, 0] = True
    high = ((radius >= r2) | nyq) & ~low
    mid = ~low & ~high
    return BandMasks(low, mid, high, float(r1), float(r2))


def band_split_fft(x, masks=None):
    """Split ``x`` [..., H, W] into three real bands that sum back to ``x``."""
    xt = as_tensor(x)
    arr = xt.data
    _check_pow2(arr.shape)
    h, w = arr.shape[-2], arr.shape[-1]
    if masks is None:
        masks = band_masks(h, w)
    if masks.low.shape != (h, w):
        raise ShapeError(f"masks {masks.low.shape} vs input {h}x{w}")
    spec = fft2(arr)
    bands = []
    for m in masks.as_list():
        masked = spec * m
        instrument.note(0, masked.nbytes)
        bands.append(Tensor(ifft2_complex(masked).real.astype(arr.dtype)))
    return tuple(bands)


def fft_band_split_macs(shape):
    """Real MACs of one forward and three inverse 2-D radix-2 transforms.

    Counts 4 real MACs per complex butterfly multiply, (n/2) log2 n per 1-D
    length-n transform, matching the instrumentation in ``_fft_last``.
    """
    *lead, h, w = shape
    planes = int(np.prod(lead)) if lead else 1

    def one_pass(n, count):
        stages = n.bit_length() - 1
        return 4 * (n // 2) * stages * count

    per_2d = one_pass(w, h) + one_pass(h, w)
    return planes * 4 * per_2d


def kernel_transfer(kernel, w1, w2):
    """Complex transfer function sum_{m,n} k[m,n] e^{-i(w1 m + w2 n)}, centered taps."""
    k = np.asarray(kernel.data if isinstance(kernel, Tensor) else kernel, dtype=np.float64)
    kh, kw = k.shape
    m = np.arange(kh) - (kh - 1) // 2
    n = np.arange(kw) - (kw - 1) // 2
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    phase_m = np.exp(-1j * np.multiply.outer(w1, m))
    phase_n = np.exp(-1j * np.multiply.outer(w2, n))
    return np.einsum("...m,mn,...n->...", phase_m, k, phase_n)


def frequency_grid(grid):
    return np.linspace(-np.pi, np.pi, grid)


def kernel_freq_response(kernel, grid):
    """|H(w1, w2)| on a grid x grid lattice over [-pi, pi]^2 (rows index w1)."""
    if grid < 2:
        raise ConfigError(f"grid must be >= 2, got {grid}", key="grid")
    k = np.asarray(kernel.data if isinstance(kernel, Tensor) else kernel, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise ShapeError(f"kernel must be a small odd 2-D array, got {k.shape}")
    w = frequency_grid(grid)
    w1, w2 = np.meshgrid(w, w, indexing="ij")
    return np.abs(kernel_transfer(k, w1, w2))


BOX3 = np.full((3, 3), 1.0 / 9.0)
LAPLACIAN3 = np.array([[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]]) / 8.0
IDENTITY3 = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
