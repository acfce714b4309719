"""Analytic multiply-accumulate and parameter counts.

Counting rules match the runtime instrumentation in :mod:`freqsem.instrument`:
convolutions, linear maps, channel 1-D convolutions and matrix products
contribute MACs; pooling, activations and elementwise gating do not.
"""
from __future__ import annotations

from . import ops
from .dyfusnet import DmsdParams, DyFusNet, SfcmParams
from .errors import ConfigError
from .esfc import DeconvParams, DgaParams, EgBlockParams, Esfc
from .params import ConvSpec


def conv_out(h, w, k, stride):
    pad = (k - 1) // 2
    return (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1


def conv_macs(n, cin, cout, h, w, k, stride=1, groups=1):
    ho, wo = conv_out(h, w, k, stride)
    return n * cout * ho * wo * (cin // groups) * k * k


def conv_params(cin, cout, k, groups=1, bias=False):
    return cout * (cin // groups) * k * k + (cout if bias else 0)


def conv_cost(spec: ConvSpec, shape):
    n, _, h, w = shape
    macs = conv_macs(n, spec.in_channels, spec.out_channels, h, w, spec.kernel_h,
                     spec.stride, spec.groups)
    params = conv_params(spec.in_channels, spec.out_channels, spec.kernel_h, spec.groups,
                         spec.bias is not None)
    ho, wo = conv_out(h, w, spec.kernel_h, spec.stride)
    return macs, params, (n, spec.out_channels, ho, wo)


def dmsd_cost(p: DmsdParams, shape):
    n, c = shape[:2]
    hidden = p.gate_w1.shape[0]
    gate_macs = 0 if p.frozen_alpha is not None else n * (c * hidden + hidden * 3)
    macs, params, _ = conv_cost(p.high_band, shape)
    return gate_macs + macs, params + c * hidden + hidden * 3


def sfcm_cost(p: SfcmParams, shape):
    n, c = shape[:2]
    hidden = p.bottleneck_w1.shape[0]
    macs = n * 2 * c * hidden
    params = 2 * c * hidden
    for spec in (p.pw, p.dw3, p.dw5):
        m, q, _ = conv_cost(spec, shape)
        macs, params = macs + m, params + q
    return macs, params


def dyfusnet_cost(block: DyFusNet, shape):
    n, c, h, w = shape
    c1 = ops.split_count(c, block.cfg.e)
    sub = (n, c1, h, w)
    m1, p1 = dmsd_cost(block.dmsd, sub)
    m2, p2 = sfcm_cost(block.sfcm, sub)
    macs, params = m1 + m2, p1 + p2
    if block.cfg.fuse_1x1:
        m, q, _ = conv_cost(block.cfg.fuse, shape)
        macs, params = macs + m, params + q
    return macs, params


def deconv_cost(p: DeconvParams, shape):
    n, c = shape[:2]
    gate = 0 if p.frozen_delta is not None else n * p.k * c
    m, q, _ = conv_cost(p.experts[0], shape)
    return gate + p.k * m, p.k * q + p.k * c


def egblock_cost(p: EgBlockParams, shape):
    m1, q1, mid = conv_cost(p.primary, shape)
    m2, q2, _ = conv_cost(p.cheap, mid)
    return m1 + m2, q1 + q2


def dga_cost(p: DgaParams, shape):
    n, c, h, w = shape
    k = p.eca_kernel.shape[-1]
    m, q, _ = conv_cost(p.spatial_conv, (n, 2, h, w))
    return n * c * k + m, k + q


def esfc_cost(m: Esfc, shape):
    macs, params = deconv_cost(m.deconv, shape)
    for block in m.chain:
        a, b = egblock_cost(block, shape)
        macs, params = macs + a, params + b
    a, b = dga_cost(m.dga, shape)
    return macs + a, params + b + 2


def count_flops_params(obj, shape):
    """``(MACs, parameters)`` of a module parameter set applied to input ``shape``."""
    from .ffr import AifiParams, FusionBlock, aifi_cost, fusion_cost

    table = [
        (ConvSpec, lambda o, s: conv_cost(o, s)[:2]),
        (DmsdParams, dmsd_cost),
        (SfcmParams, sfcm_cost),
        (DyFusNet, dyfusnet_cost),
        (DeconvParams, deconv_cost),
        (EgBlockParams, egblock_cost),
        (DgaParams, dga_cost),
        (Esfc, esfc_cost),
        (AifiParams, aifi_cost),
        (FusionBlock, fusion_cost),
    ]
    for kind, fn in table:
        if isinstance(obj, kind):
            return fn(obj, tuple(shape))
    if isinstance(obj, (list, tuple)) and all(isinstance(b, EgBlockParams) for b in obj):
        macs = params = 0
        for b in obj:
            a, q = egblock_cost(b, shape)
            macs, params = macs + a, params + q
        return macs, params
    raise ConfigError(f"no cost model for {type(obj).__name__}", key="module")
