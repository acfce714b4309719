"""Content-gated band decomposition, cooperative modulation and the split/fuse block.

Three spatial band proxies stand in for an explicit spectral split: a 3x3
replicate-padded box filter (low), the identity (mid) and a learnable
depthwise 3x3 kernel (high). A softmax gate driven by the global channel
descriptor mixes them per sample. The modulation stage sums a pointwise and
two depthwise convolutions, then rescales channels with a sigmoid bottleneck
gate computed from that sum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops, spectral
from .errors import ConfigError, ShapeError
from .params import ConvSpec, init_conv, uniform_fan_in
from .tensor import Tensor, as_tensor

BANDS = ("low", "mid", "high")


def gate_hidden(channels):
    return max(4, channels // 4)


def laplacian_kernels(channels, dtype=np.float32):
    """Depthwise stack of (center 8, neighbors -1) / 8 kernels; each sums to zero."""
    k = np.broadcast_to(spectral.LAPLACIAN3, (channels, 1, 3, 3)).astype(dtype)
    return Tensor(k)


@dataclass(frozen=True)
class DmsdParams:
    gate_w1: Tensor
    gate_w2: Tensor
    high_band: ConvSpec
    frozen_alpha: tuple | None = None  # test hook: fixed (low, mid, high) weights

    def __post_init__(self):
        object.__setattr__(self, "gate_w1", as_tensor(self.gate_w1))
        object.__setattr__(self, "gate_w2", as_tensor(self.gate_w2))
        c = self.high_band.in_channels
        if not self.high_band.depthwise or (self.high_band.kernel_h, self.high_band.kernel_w) != (3, 3):
            raise ConfigError("high band must be a depthwise 3x3 convolution", key="high_band")
        hidden = self.gate_w1.shape[0]
        if self.gate_w1.shape != (hidden, c):
            raise ShapeError(f"gate_w1 {self.gate_w1.shape} vs C={c}")
        if self.gate_w2.shape != (3, hidden):
            raise ShapeError(f"gate_w2 must be [3, {hidden}], got {self.gate_w2.shape}")
        if self.frozen_alpha is not None and len(self.frozen_alpha) != 3:
            raise ConfigError("frozen_alpha needs three band weights", key="frozen_alpha")

    @property
    def channels(self):
        return self.high_band.in_channels


def init_dmsd(rng, channels, high_band_init="laplacian", dtype=np.float32):
    hidden = gate_hidden(channels)
    w1 = uniform_fan_in(rng, (hidden, channels), channels, dtype)
    w2 = uniform_fan_in(rng, (3, hidden), hidden, dtype)
    if high_band_init == "laplacian":
        high = ConvSpec(channels, channels, 3, 3, laplacian_kernels(channels, dtype), groups=channels)
    elif high_band_init == "random":
        high = init_conv(rng, channels, channels, 3, groups=channels, dtype=dtype)
    else:
        raise ConfigError(f"high_band_init {high_band_init!r} not in (laplacian, random)",
                          key="high_band_init")
    return DmsdParams(w1, w2, high)


def _check_channels(x, channels, what):
    if x.ndim != 4 or x.shape[1] != channels:
        raise ShapeError(f"{what}: input {x.shape} does not have {channels} channels")


def dmsd_alpha(x, p):
    """Band weights [N, 3] = softmax(W2 gelu(W1 GAP(x)))."""
    if p.frozen_alpha is not None:
        a = np.broadcast_to(np.asarray(p.frozen_alpha, dtype=x.dtype), (x.shape[0], 3))
        return Tensor(a.copy())
    hidden = ops.gelu(ops.linear(ops.global_avg_pool(x), p.gate_w1))
    return ops.softmax(ops.linear(hidden, p.gate_w2))


def dmsd_bands(x, p):
    low = ops.avg_pool2d(x, 3, 1, "replicate")
    high = ops.conv2d(x, p.high_band)
    return low, x, high


def mix_bands(bands, alpha):
    """sum_i alpha[:, i] * band_i with the weights broadcast over C, H, W."""
    n = alpha.shape[0]
    a = ops.reshape(alpha, (n, 3, 1, 1))
    y = None
    for i, band in enumerate(bands):
        term = ops.mul(band, ops.channel_slice(a, i, i + 1))
        y = term if y is None else ops.add(y, term)
    return y


def dmsd_forward(x, p):
    """Returns ``(y, alpha)``; alpha rows sum to one."""
    x = as_tensor(x)
    _check_channels(x, p.channels, "dmsd")
    alpha = dmsd_alpha(x, p)
    return mix_bands(dmsd_bands(x, p), alpha), alpha


def dmsd_band_response(p, band, grid, channel=0):
    """Magnitude response of a band proxy on a grid x grid lattice over [-pi, pi]^2."""
    if band == "low":
        kernel = spectral.BOX3
    elif band == "high":
        kernel = p.high_band.weight.data[channel, 0]
    elif band == "mid":
        kernel = spectral.IDENTITY3
    else:
        raise ConfigError(f"band {band!r} not in {BANDS}", key="band")
    return spectral.kernel_freq_response(kernel, grid)


@dataclass(frozen=True)
class SfcmParams:
    pw: ConvSpec
    dw3: ConvSpec
    dw5: ConvSpec
    bottleneck_w1: Tensor
    bottleneck_w2: Tensor
    r: int = 16

    def __post_init__(self):
        object.__setattr__(self, "bottleneck_w1", as_tensor(self.bottleneck_w1))
        object.__setattr__(self, "bottleneck_w2", as_tensor(self.bottleneck_w2))
        c = self.pw.in_channels
        if (self.pw.out_channels, self.pw.kernel_h, self.pw.groups) != (c, 1, 1):
            raise ConfigError("pw must be a dense 1x1 C->C convolution", key="pw")
        for name, spec, k in (("dw3", self.dw3, 3), ("dw5", self.dw5, 5)):
            if not spec.depthwise or spec.in_channels != c or spec.kernel_h != k:
                raise ConfigError(f"{name} must be a depthwise {k}x{k} over {c} channels", key=name)
        hidden = self.bottleneck_w1.shape[0]
        if self.bottleneck_w1.shape != (hidden, c) or self.bottleneck_w2.shape != (c, hidden):
            raise ShapeError(
                f"bottleneck {self.bottleneck_w1.shape}/{self.bottleneck_w2.shape} vs C={c}")

    @property
    def channels(self):
        return self.pw.in_channels


def init_sfcm(rng, channels, r=16, dtype=np.float32):
    if r < 1:
        raise ConfigError(f"reduction ratio r={r} must be >= 1", key="r")
    hidden = max(1, channels // r)
    return SfcmParams(
        pw=init_conv(rng, channels, channels, 1, dtype=dtype),
        dw3=init_conv(rng, channels, channels, 3, groups=channels, dtype=dtype),
        dw5=init_conv(rng, channels, channels, 5, groups=channels, dtype=dtype),
        bottleneck_w1=uniform_fan_in(rng, (hidden, channels), channels, dtype),
        bottleneck_w2=uniform_fan_in(rng, (channels, hidden), hidden, dtype),
        r=r,
    )


def sfcm_aggregate(x, p):
    return ops.add(ops.add(ops.conv2d(x, p.pw), ops.conv2d(x, p.dw3)), ops.conv2d(x, p.dw5))


def sfcm_forward(x, p):
    """Returns ``(y, z, beta)`` with ``y = z * beta`` broadcast over H, W."""
    x = as_tensor(x)
    _check_channels(x, p.channels, "sfcm")
    z = sfcm_aggregate(x, p)
    s = ops.global_avg_pool(z)
    beta = ops.sigmoid(ops.linear(ops.relu(ops.linear(s, p.bottleneck_w1)), p.bottleneck_w2))
    n, c = beta.shape
    y = ops.mul(z, ops.reshape(beta, (n, c, 1, 1)))
    return y, z, beta


@dataclass(frozen=True)
class DyFusConfig:
    e: float = 0.5
    fuse: ConvSpec | None = None
    fuse_1x1: bool = True

    def __post_init__(self):
        if not (0.0 < self.e <= 1.0):
            raise ConfigError(f"split ratio e={self.e} outside (0, 1]", key="e")
        if self.fuse_1x1:
            if self.fuse is None:
                raise ConfigError("fuse_1x1 enabled but no fusion convolution given", key="fuse_1x1")
            f = self.fuse
            if f.in_channels != f.out_channels or f.kernel_h != 1 or f.groups != 1:
                raise ConfigError("fusion must be a dense 1x1 C->C convolution", key="fuse")


@dataclass(frozen=True)
class DyFusNet:
    """Everything one split/fuse block needs, bundled for reuse inside the encoder."""

    dmsd: DmsdParams
    sfcm: SfcmParams
    cfg: DyFusConfig

    @property
    def channels(self):
        if self.cfg.fuse is not None:
            return self.cfg.fuse.in_channels
        return None


def init_dyfusnet(rng, channels, e=0.5, r=16, fuse_1x1=True, high_band_init="laplacian",
                  dtype=np.float32):
    c1 = ops.split_count(channels, e)
    dmsd = init_dmsd(rng, c1, high_band_init, dtype)
    sfcm = init_sfcm(rng, c1, r, dtype)
    fuse = init_conv(rng, channels, channels, 1, dtype=dtype) if fuse_1x1 else None
    return DyFusNet(dmsd, sfcm, DyFusConfig(e, fuse, fuse_1x1))


def dyfusnet_forward(x, dmsd, sfcm, cfg):
    """Split, run the frequency path on the leading part, concatenate, fuse."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"dyfusnet expects [N, C, H, W], got {x.shape}")
    c = x.shape[1]
    c1 = ops.split_count(c, cfg.e)
    if dmsd.channels != c1 or sfcm.channels != c1:
        raise ConfigError(
            f"e={cfg.e} routes {c1} of {c} channels but parameters expect "
            f"dmsd={dmsd.channels}, sfcm={sfcm.channels}", key="e")
    if cfg.fuse_1x1 and cfg.fuse.in_channels != c:
        raise ConfigError(f"fusion expects {cfg.fuse.in_channels} channels, input has {c}", key="fuse")
    x1, x2 = ops.split_channels(x, cfg.e)
    freq, _ = dmsd_forward(x1, dmsd)
    freq, _, _ = sfcm_forward(freq, sfcm)
    y = ops.concat_channels(freq, x2) if x2.shape[1] else freq
    return ops.conv2d(y, cfg.fuse) if cfg.fuse_1x1 else y


def dyfusnet_apply(x, block):
    return dyfusnet_forward(x, block.dmsd, block.sfcm, block.cfg)
