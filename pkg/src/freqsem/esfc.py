"""Semantic concentrator: dynamic expert convolution, ghost blocks and dual-domain gating.

Branch one mixes K expert convolutions with per-sample softmax weights.
Branch two is a residual chain of ghost blocks, each a reduced-width dense
convolution followed by a cheap depthwise convolution whose outputs are
concatenated. A learnable two-way softmax blends the branches and the result
passes through cascaded channel then spatial sigmoid gates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .params import ConvSpec, init_conv, uniform_fan_in
from .tensor import Tensor, as_tensor

STAGES = ("S", "M", "D", "M&D")


# ---------------------------------------------------------------- expert convolution

@dataclass(frozen=True)
class DeconvParams:
    experts: tuple
    gate_fc: Tensor
    frozen_delta: tuple | None = None  # test hook: fixed expert weights

    def __post_init__(self):
        object.__setattr__(self, "experts", tuple(self.experts))
        object.__setattr__(self, "gate_fc", as_tensor(self.gate_fc))
        if len(self.experts) < 2:
            raise ConfigError(f"need at least 2 experts, got {len(self.experts)}", key="experts")
        ref = self.experts[0]
        for e in self.experts[1:]:
            if e.weight.shape != ref.weight.shape or (e.stride, e.groups, e.padding_mode) != (
                    ref.stride, ref.groups, ref.padding_mode) or (e.bias is None) != (ref.bias is None):
                raise ConfigError("all experts must share identical shape metadata", key="experts")
        if self.gate_fc.shape != (len(self.experts), ref.in_channels):
            raise ShapeError(f"gate_fc {self.gate_fc.shape}, expected ({self.k}, {ref.in_channels})")
        if self.frozen_delta is not None and len(self.frozen_delta) != self.k:
            raise ConfigError("frozen_delta length must equal the expert count", key="frozen_delta")

    @property
    def k(self):
        return len(self.experts)

    @property
    def channels(self):
        return self.experts[0].in_channels


def init_deconv(rng, channels, k=3, kernel=3, dtype=np.float32):
    if k < 2:
        raise ConfigError(f"experts={k} must be >= 2", key="experts")
    experts = tuple(init_conv(rng, channels, channels, kernel, dtype=dtype) for _ in range(k))
    return DeconvParams(experts, uniform_fan_in(rng, (k, channels), channels, dtype))


def deconv_delta(x, p):
    if p.frozen_delta is not None:
        d = np.broadcast_to(np.asarray(p.frozen_delta, dtype=x.dtype), (x.shape[0], p.k))
        return Tensor(d.copy())
    return ops.softmax(ops.linear(ops.global_avg_pool(x), p.gate_fc))


def deconv_forward(x, p):
    """Returns ``(y, delta)`` with ``y = sum_k delta_k * (W_k * x)``."""
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1] != p.channels:
        raise ShapeError(f"deconv: input {x.shape} vs C={p.channels}")
    delta = deconv_delta(x, p)
    n = x.shape[0]
    d = ops.reshape(delta, (n, p.k, 1, 1))
    y = None
    for i, expert in enumerate(p.experts):
        term = ops.mul(ops.conv2d(x, expert), ops.channel_slice(d, i, i + 1))
        y = term if y is None else ops.add(y, term)
    return y, delta


def deconv_aggregated(x, p):
    """Same map evaluated as one convolution with the per-sample kernel sum_k delta_k W_k."""
    x = as_tensor(x)
    delta = deconv_delta(x, p).data
    ref = p.experts[0]
    weights = np.stack([e.weight.data for e in p.experts])
    outs = []
    for n in range(x.shape[0]):
        kernel = np.tensordot(delta[n], weights, axes=1)
        bias = None
        if ref.bias is not None:
            bias = np.tensordot(delta[n], np.stack([e.bias.data for e in p.experts]), axes=1)
        outs.append(ops.conv2d_raw(x.data[n:n + 1], kernel, bias, ref.stride, ref.groups,
                                   ref.padding_mode).data)
    return Tensor(np.concatenate(outs, axis=0))


# ---------------------------------------------------------------- ghost block

@dataclass(frozen=True)
class EgBlockParams:
    primary: ConvSpec
    cheap: ConvSpec
    activation: str = "relu"

    def __post_init__(self):
        half = self.primary.out_channels
        if not self.cheap.depthwise or self.cheap.in_channels != half:
            raise ConfigError(f"cheap op must be depthwise over {half} channels", key="cheap")
        if self.activation not in ("relu", "gelu", "sigmoid"):
            raise ConfigError(f"activation {self.activation!r}", key="activation")

    @property
    def in_channels(self):
        return self.primary.in_channels

    @property
    def out_channels(self):
        return 2 * self.primary.out_channels


def init_egblock(rng, cin, cout, ghost_ratio=0.5, dtype=np.float32):
    if ghost_ratio != 0.5:
        raise ConfigError(f"ghost_ratio={ghost_ratio}; only 0.5 is supported", key="ghost_ratio")
    if cout % 2:
        raise ConfigError(f"ghost block output channels must be even, got {cout}", key="channels")
    half = cout // 2
    return EgBlockParams(
        init_conv(rng, cin, half, 3, bias=True, dtype=dtype),
        init_conv(rng, half, half, 3, groups=half, bias=True, dtype=dtype),
    )


def egblock_forward(x, p):
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1] != p.in_channels:
        raise ShapeError(f"egblock: input {x.shape} vs Cin={p.in_channels}")
    primary = ops.activation(ops.conv2d(x, p.primary), p.activation)
    ghost = ops.activation(ops.conv2d(primary, p.cheap), p.activation)
    return ops.concat_channels(primary, ghost)


def egblock_chain(x, params):
    """y_i = y_{i-1} + block_i(y_{i-1}); identity for an empty chain."""
    y = as_tensor(x)
    for i, p in enumerate(params):
        if p.in_channels != p.out_channels or p.in_channels != y.shape[1]:
            raise ConfigError(
                f"chain block {i} maps {p.in_channels}->{p.out_channels}, "
                f"needs {y.shape[1]}->{y.shape[1]}", key="n_blocks")
        y = ops.add(y, egblock_forward(y, p))
    return y


# ---------------------------------------------------------------- dual-domain guidance

def eca_kernel_size(channels, b=1.0, gamma=2.0):
    """Nearest odd integer to (log2 C + b) / gamma, ties toward the smaller, at least 1."""
    if channels < 1 or gamma <= 0:
        raise ConfigError(f"eca_kernel_size needs C >= 1 and gamma > 0 (C={channels}, gamma={gamma})",
                          key="eca_gamma")
    t = (math.log2(channels) + b) / gamma
    below = 2 * math.floor((t - 1) / 2) + 1
    k = below if t - below <= below + 2 - t else below + 2
    return max(1, k)


@dataclass(frozen=True)
class DgaParams:
    eca_kernel: Tensor
    spatial_conv: ConvSpec
    eca_b: float = 1.0
    eca_gamma: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "eca_kernel", as_tensor(self.eca_kernel))
        k = self.eca_kernel.shape[-1]
        if self.eca_kernel.shape != (1, 1, k) or k % 2 == 0:
            raise ConfigError(f"eca kernel must be [1, 1, odd k], got {self.eca_kernel.shape}",
                              key="eca_kernel")
        s = self.spatial_conv
        if (s.in_channels, s.out_channels) != (2, 1):
            raise ConfigError("spatial guidance conv must map 2 -> 1 channels", key="spatial_conv")


def init_dga(rng, channels, b=1.0, gamma=2.0, spatial_kernel=7, dtype=np.float32):
    k = eca_kernel_size(channels, b, gamma)
    if k > channels:
        raise ConfigError(f"eca kernel {k} exceeds C={channels}", key="eca_gamma")
    return DgaParams(
        uniform_fan_in(rng, (1, 1, k), k, dtype),
        init_conv(rng, 2, 1, spatial_kernel, dtype=dtype),
        float(b), float(gamma),
    )


def dga_forward(x, p):
    """Returns ``(y, c_gate, s_gate)``; x is gated per channel, then per position."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"dga expects [N, C, H, W], got {x.shape}")
    n, c = x.shape[:2]
    if p.eca_kernel.shape[-1] > c:
        raise ConfigError(f"eca kernel {p.eca_kernel.shape[-1]} exceeds C={c}", key="eca_kernel")
    c_gate = ops.sigmoid(ops.conv1d_channels(ops.global_avg_pool(x), p.eca_kernel))
    xc = ops.mul(x, ops.reshape(c_gate, (n, c, 1, 1)))
    s_gate = ops.sigmoid(ops.conv2d(ops.spatial_descriptor_pool(xc), p.spatial_conv))
    return ops.mul(xc, s_gate), c_gate, s_gate


# ---------------------------------------------------------------- full module

@dataclass(frozen=True)
class EsfcConfig:
    fusion_logits: Tensor
    n_blocks: int = 3
    placement: str = "D"
    frozen_fusion: tuple | None = None  # test hook: fixed branch weights

    def __post_init__(self):
        object.__setattr__(self, "fusion_logits", as_tensor(self.fusion_logits))
        if self.fusion_logits.shape != (2,):
            raise ShapeError(f"fusion_logits must have shape (2,), got {self.fusion_logits.shape}")
        if self.placement not in STAGES:
            raise ConfigError(f"esfc_stage {self.placement!r} not in {STAGES}", key="esfc_stage")
        if self.n_blocks < 0:
            raise ConfigError(f"n_blocks={self.n_blocks} must be >= 0", key="n_blocks")


@dataclass(frozen=True)
class Esfc:
    deconv: DeconvParams
    chain: tuple
    dga: DgaParams
    cfg: EsfcConfig

    @property
    def channels(self):
        return self.deconv.channels


def init_esfc(rng, channels, experts=3, n_blocks=3, placement="D", eca_b=1.0, eca_gamma=2.0,
              ghost_ratio=0.5, dtype=np.float32):
    deconv = init_deconv(rng, channels, experts, dtype=dtype)
    chain = tuple(init_egblock(rng, channels, channels, ghost_ratio, dtype) for _ in range(n_blocks))
    dga = init_dga(rng, channels, eca_b, eca_gamma, dtype=dtype)
    cfg = EsfcConfig(Tensor(np.zeros(2, dtype=dtype)), n_blocks, placement)
    return Esfc(deconv, chain, dga, cfg)


def fusion_weights(cfg, dtype=np.float64):
    if cfg.frozen_fusion is not None:
        return Tensor(np.asarray(cfg.frozen_fusion, dtype=dtype))
    return ops.softmax(cfg.fusion_logits)


def esfc_forward(x, deconv, chain, dga, cfg):
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1] != deconv.channels:
        raise ConfigError(f"esfc: input {x.shape} vs expert channels {deconv.channels}", key="channels")
    if len(chain) != cfg.n_blocks:
        raise ConfigError(f"chain has {len(chain)} blocks, config says {cfg.n_blocks}", key="n_blocks")
    b1, _ = deconv_forward(x, deconv)
    b2 = egblock_chain(x, chain)
    w = ops.reshape(fusion_weights(cfg, x.dtype), (1, 2, 1, 1))
    mixed = ops.add(ops.mul(b1, ops.channel_slice(w, 0, 1)), ops.mul(b2, ops.channel_slice(w, 1, 2)))
    y, _, _ = dga_forward(mixed, dga)
    return y


def esfc_apply(x, m):
    return esfc_forward(x, m.deconv, m.chain, m.dga, m.cfg)
