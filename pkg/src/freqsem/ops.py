"""Primitive tensor operations with reverse-mode rules.

Convolution and pooling forwards dispatch to the active kernel backend; all
backward rules are numpy. Convolutions use "same" padding with
pad = (kernel - 1) / 2 and are cross-correlations (no kernel flip).
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import expit, ndtr

from . import _backend
from .errors import ConfigError, ShapeError
from .tensor import Tensor, apply, as_tensor, register_op

PADDING_MODES = ("zero", "replicate")


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _const(v, like):
    if isinstance(v, Tensor):
        return v
    return Tensor(np.asarray(v, dtype=like.dtype))


# ---------------------------------------------------------------- elementwise

def _add_fwd(a, b):
    return a + b, (a.shape, b.shape)


def _sub_fwd(a, b):
    return a - b, (a.shape, b.shape)


def _mul_fwd(a, b):
    return a * b, (a, b)


register_op("add", _add_fwd, lambda c, g: (_unbroadcast(g, c[0]), _unbroadcast(g, c[1])))
register_op("sub", _sub_fwd, lambda c, g: (_unbroadcast(g, c[0]), -_unbroadcast(g, c[1])))
register_op(
    "mul", _mul_fwd,
    lambda c, g: (_unbroadcast(g * c[1], c[0].shape), _unbroadcast(g * c[0], c[1].shape)),
)
register_op("scale", lambda a, factor: (a * a.dtype.type(factor), factor),
            lambda f, g: (g * g.dtype.type(f),))


def add(a, b):
    a = as_tensor(a)
    return apply("add", a, _const(b, a))


def sub(a, b):
    if not isinstance(a, Tensor):
        b = as_tensor(b)
        return apply("sub", _const(a, b), b)
    return apply("sub", a, _const(b, a))


def mul(a, b):
    """Broadcasting elementwise product (used for every gate application)."""
    a = as_tensor(a)
    if isinstance(b, (int, float)):
        return scale(a, b)
    return apply("mul", a, _const(b, a))


def scale(x, factor):
    return apply("scale", x, factor=float(factor))


def _sum_fwd(a):
    return np.asarray([a.sum()], dtype=a.dtype), a.shape


register_op("sum_all", _sum_fwd, lambda shape, g: (np.broadcast_to(g.reshape(()), shape).copy(),))


def sum_all(x):
    return apply("sum_all", x)


# ---------------------------------------------------------------- activations

def _relu_fwd(x):
    return np.maximum(x, 0), x


def _gelu_fwd(x):
    cdf = ndtr(x)
    return x * cdf, (x, cdf)


def _gelu_bwd(ctx, g):
    x, cdf = ctx
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return (g * (cdf + x * pdf),)


def _sigmoid_fwd(x):
    s = expit(x)
    # keep the (0, 1) contract even where expit rounds to an endpoint
    info = np.finfo(x.dtype)
    s = np.clip(s, info.tiny, np.nextafter(x.dtype.type(1), x.dtype.type(0)))
    return s, s


register_op("relu", _relu_fwd, lambda x, g: (g * (x > 0),))
register_op("gelu", _gelu_fwd, _gelu_bwd)
register_op("sigmoid", _sigmoid_fwd, lambda s, g: (g * s * (1 - s),))


def activation(x, kind):
    if kind not in ("relu", "gelu", "sigmoid"):
        raise ConfigError(f"unknown activation {kind!r}", key="activation")
    return apply(kind, x)


def relu(x):
    return apply("relu", x)


def gelu(x):
    """Exact GELU, x * Phi(x) with the standard normal CDF."""
    return apply("gelu", x)


def sigmoid(x):
    return apply("sigmoid", x)


def _softmax_fwd(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)
    return s, s


def _softmax_bwd(s, g):
    return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)


register_op("softmax", _softmax_fwd, _softmax_bwd)


def softmax(x):
    """Max-stabilized softmax over the last axis."""
    return apply("softmax", x)


softmax_vec = softmax


# ---------------------------------------------------------------- linear maps

def _linear_fwd(x, w, b=None):
    out = x @ w.T
    if b is not None:
        out = out + b
    return out, (x, w, b is not None)


def _linear_bwd(ctx, g):
    x, w, has_b = ctx
    gx = g @ w
    gw = g.reshape(-1, g.shape[-1]).T @ x.reshape(-1, x.shape[-1])
    if has_b:
        return gx, gw, g.reshape(-1, g.shape[-1]).sum(axis=0)
    return gx, gw


def _linear_macs(x, w, b=None):
    return int(np.prod(x.shape[:-1])) * w.shape[0] * w.shape[1]


register_op("linear", _linear_fwd, _linear_bwd, _linear_macs)


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` over the last axis."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} vs weight {weight.shape}")
    if bias is None:
        return apply("linear", x, weight)
    bias = as_tensor(bias)
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} vs weight {weight.shape}")
    return apply("linear", x, weight, bias)


register_op(
    "matmul",
    lambda a, b: (a @ b, (a, b)),
    lambda c, g: (g @ np.swapaxes(c[1], -1, -2), np.swapaxes(c[0], -1, -2) @ g),
    lambda a, b: int(np.prod(a.shape)) * b.shape[-1],
)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    return apply("matmul", a, b)


# ---------------------------------------------------------------- convolution

def _pad_same(x, ph, pw, replicate):
    return _backend._fallback.pad2d(x, ph, ph, pw, pw, replicate)


def _fold_pad(gp, h, w, top, left, replicate):
    """Adjoint of padding: sum padded-grid cotangents back onto the input grid."""
    if not replicate:
        return gp[:, :, top:top + h, left:left + w]
    rows = np.clip(np.arange(gp.shape[2]) - top, 0, h - 1)
    cols = np.clip(np.arange(gp.shape[3]) - left, 0, w - 1)
    tmp = np.zeros(gp.shape[:2] + (h, gp.shape[3]), dtype=gp.dtype)
    np.add.at(tmp, (slice(None), slice(None), rows), gp)
    out = np.zeros(gp.shape[:2] + (h, w), dtype=gp.dtype)
    np.add.at(out, (slice(None), slice(None), slice(None), cols), tmp)
    return out


def _conv_fwd(x, w, b=None, stride=1, groups=1, padding="zero"):
    out = _backend.kernels.conv2d(x, w, b, stride, groups, padding == "replicate")
    return out, (x, w, b is not None, stride, groups, padding)


def _conv_bwd(ctx, g):
    x, w, has_b, stride, groups, padding = ctx
    n, cin, h, wd = x.shape
    cout, cig, kh, kw = w.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    ho, wo = g.shape[2], g.shape[3]
    replicate = padding == "replicate"
    xp = _pad_same(x, ph, pw, replicate)
    cog = cout // groups
    xg = xp.reshape(n, groups, cig, xp.shape[2], xp.shape[3])
    gg = g.reshape(n, groups, cog, ho, wo)
    wg = w.reshape(groups, cog, cig, kh, kw)
    gxp = np.zeros_like(xg)
    gw = np.zeros_like(wg)
    hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            sl = (slice(None), slice(None), slice(None),
                  slice(i, i + hs, stride), slice(j, j + ws, stride))
            gw[:, :, :, i, j] = np.einsum("ngohw,ngchw->goc", gg, xg[sl], optimize=True)
            gxp[sl] += np.einsum("ngohw,goc->ngchw", gg, wg[:, :, :, i, j], optimize=True)
    gx = _fold_pad(gxp.reshape(xp.shape), h, wd, ph, pw, replicate)
    grads = (gx, gw.reshape(w.shape))
    if has_b:
        grads += (g.sum(axis=(0, 2, 3)),)
    return grads


def _conv_macs(x, w, b=None, stride=1, groups=1, padding="zero"):
    cout, cig, kh, kw = w.shape
    ho = (x.shape[2] + 2 * ((kh - 1) // 2) - kh) // stride + 1
    wo = (x.shape[3] + 2 * ((kw - 1) // 2) - kw) // stride + 1
    return x.shape[0] * cout * ho * wo * cig * kh * kw


register_op("conv2d", _conv_fwd, _conv_bwd, _conv_macs)


def conv2d(x, spec):
    """Apply a :class:`~freqsem.params.ConvSpec` to ``x`` [N, Cin, H, W]."""
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ShapeError(f"conv2d: input {x.shape} vs in_channels={spec.in_channels}")
    args = (x, spec.weight) if spec.bias is None else (x, spec.weight, spec.bias)
    return apply("conv2d", *args, stride=spec.stride, groups=spec.groups,
                 padding=spec.padding_mode)


def conv2d_raw(x, weight, bias=None, stride=1, groups=1, padding="zero"):
    """Convolution with bare weight tensors, validated like :func:`conv2d`."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 4 or x.ndim != 4:
        raise ShapeError(f"conv2d: input {x.shape}, weight {weight.shape}")
    cout, cig, kh, kw = weight.shape
    if groups < 1 or x.shape[1] % groups or cout % groups:
        raise ConfigError(f"groups={groups} must divide {x.shape[1]} and {cout}", key="groups")
    if x.shape[1] // groups != cig:
        raise ShapeError(f"conv2d: input {x.shape} vs weight {weight.shape}, groups={groups}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"kernel {kh}x{kw} must be odd", key="kernel")
    if padding not in PADDING_MODES:
        raise ConfigError(f"padding {padding!r}", key="padding_mode")
    args = (x, weight) if bias is None else (x, weight, as_tensor(bias))
    return apply("conv2d", *args, stride=stride, groups=groups, padding=padding)


def _conv1d_fwd(d, w):
    k = w.shape[-1]
    p = (k - 1) // 2
    taps = w.reshape(k)
    dp = np.pad(d, ((0, 0), (p, p)))
    c = d.shape[1]
    out = np.zeros_like(d)
    for j in range(k):
        out += taps[j] * dp[:, j:j + c]
    return out, (dp, taps, c)


def _conv1d_bwd(ctx, g):
    dp, taps, c = ctx
    k = taps.shape[0]
    p = (k - 1) // 2
    gdp = np.zeros_like(dp)
    gw = np.empty_like(taps)
    for j in range(k):
        gdp[:, j:j + c] += taps[j] * g
        gw[j] = (g * dp[:, j:j + c]).sum()
    return gdp[:, p:p + c], gw.reshape(1, 1, k)


register_op("conv1d_channels", _conv1d_fwd, _conv1d_bwd,
            lambda d, w: d.shape[0] * d.shape[1] * w.shape[-1])


def conv1d_channels(desc, weight):
    """Zero-padded 1-D correlation along the channel axis of ``desc`` [N, C]."""
    desc, weight = as_tensor(desc), as_tensor(weight)
    k = weight.shape[-1]
    if weight.size != k:
        raise ShapeError(f"conv1d_channels weight must be [1, 1, k], got {weight.shape}")
    if k % 2 == 0:
        raise ConfigError(f"channel kernel size {k} must be odd", key="eca_kernel")
    if desc.ndim != 2:
        raise ShapeError(f"conv1d_channels expects [N, C], got {desc.shape}")
    if k > desc.shape[1]:
        raise ConfigError(f"channel kernel {k} exceeds C={desc.shape[1]}", key="eca_kernel")
    return apply("conv1d_channels", desc, weight)


# ---------------------------------------------------------------- pooling

def _pool_pads(k, padding):
    if padding == "none":
        return 0, 0
    lo = (k - 1) // 2
    return lo, k - 1 - lo


def _pool_fwd(x, k=3, stride=1, padding="replicate", is_max=False):
    lo, hi = _pool_pads(k, padding)
    out = _backend.kernels.pool2d(x, k, stride, lo, hi, padding == "replicate", is_max)
    return out, (x, k, stride, padding, is_max, out)


def _pool_bwd(ctx, g):
    x, k, stride, padding, is_max, out = ctx
    lo, hi = _pool_pads(k, padding)
    replicate = padding == "replicate"
    xp = _backend._fallback.pad2d(x, lo, hi, lo, hi, replicate)
    ho, wo = g.shape[2], g.shape[3]
    hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    gp = np.zeros_like(xp)
    if is_max:
        taken = np.zeros(g.shape, dtype=bool)
        for i in range(k):
            for j in range(k):
                sl = (slice(None), slice(None), slice(i, i + hs, stride), slice(j, j + ws, stride))
                hit = (xp[sl] == out) & ~taken
                gp[sl] += g * hit
                taken |= hit
    else:
        share = g / (k * k)
        for i in range(k):
            for j in range(k):
                gp[:, :, i:i + hs:stride, j:j + ws:stride] += share
    return (_fold_pad(gp, x.shape[2], x.shape[3], lo, lo, replicate),)


register_op("pool2d", _pool_fwd, _pool_bwd)


def _pool(x, k, stride, padding, is_max):
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"pooling expects [N, C, H, W], got {x.shape}")
    if k < 1 or stride < 1:
        raise ConfigError(f"pool k={k}, stride={stride} must be >= 1", key="pool")
    if padding not in PADDING_MODES + ("none",):
        raise ConfigError(f"padding {padding!r}", key="padding_mode")
    lo, hi = _pool_pads(k, padding)
    if k > x.shape[2] + lo + hi or k > x.shape[3] + lo + hi:
        raise ShapeError(f"pool window {k} larger than padded extent of {x.shape}")
    return apply("pool2d", x, k=k, stride=stride, padding=padding, is_max=is_max)


def avg_pool2d(x, k, stride=1, padding="replicate"):
    """Window mean. ``padding`` is ``zero``/``replicate`` (same) or ``none``."""
    return _pool(x, k, stride, padding, False)


def max_pool2d(x, k, stride=1, padding="replicate"):
    return _pool(x, k, stride, padding, True)


def _gap_fwd(x):
    return x.mean(axis=(2, 3)), x.shape


def _gap_bwd(shape, g):
    hw = shape[2] * shape[3]
    return (np.broadcast_to((g / hw)[:, :, None, None], shape).copy(),)


register_op("global_avg_pool", _gap_fwd, _gap_bwd)


def global_avg_pool(x):
    """Per-channel spatial mean, [N, C, H, W] -> [N, C]."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects rank 4, got {x.shape}")
    return apply("global_avg_pool", x)


register_op(
    "channel_mean",
    lambda x: (x.mean(axis=1, keepdims=True), x.shape),
    lambda shape, g: (np.broadcast_to(g / shape[1], shape).copy(),),
)


def _cmax_fwd(x):
    idx = x.argmax(axis=1)[:, None]
    return np.take_along_axis(x, idx, axis=1), (x.shape, idx)


def _cmax_bwd(ctx, g):
    shape, idx = ctx
    gx = np.zeros(shape, dtype=g.dtype)
    np.put_along_axis(gx, idx, g, axis=1)
    return (gx,)


register_op("channel_max", _cmax_fwd, _cmax_bwd)


def spatial_descriptor_pool(x):
    """Stack the per-position channel mean and channel max: [N, 2, H, W]."""
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1] < 1:
        raise ShapeError(f"spatial_descriptor_pool expects [N, C>=1, H, W], got {x.shape}")
    return concat_channels(apply("channel_mean", x), apply("channel_max", x))


# ---------------------------------------------------------------- shape ops

def _slice_bwd_full(ctx, g):
    shape, start, stop = ctx
    gx = np.zeros(shape, dtype=g.dtype)
    gx[:, start:stop] = g
    return (gx,)


register_op(
    "channel_slice",
    lambda x, start, stop: (x[:, start:stop].copy(), (x.shape, start, stop)),
    _slice_bwd_full,
)


def channel_slice(x, start, stop):
    return apply("channel_slice", x, start=int(start), stop=int(stop))


def split_count(channels, e):
    """Leading-channel count routed to the frequency path: round-half-up of e*C."""
    if not (0.0 < e <= 1.0):
        raise ConfigError(f"split ratio e={e} outside (0, 1]", key="e")
    c1 = int(math.floor(e * channels + 0.5))
    if not 1 <= c1 <= channels:
        raise ConfigError(f"split ratio e={e} gives {c1} of {channels} channels", key="e")
    return c1


def split_channels(x, e):
    x = as_tensor(x)
    c = x.shape[1]
    c1 = split_count(c, e)
    return channel_slice(x, 0, c1), channel_slice(x, c1, c)


def _concat_fwd(*xs, axis=1):
    return np.concatenate(xs, axis=axis), ([a.shape[axis] for a in xs], axis)


def _concat_bwd(ctx, g):
    sizes, axis = ctx
    cuts = np.cumsum(sizes)[:-1]
    return tuple(np.ascontiguousarray(p) for p in np.split(g, cuts, axis=axis))


register_op("concat", _concat_fwd, _concat_bwd)


def concat_channels(*xs):
    xs = [as_tensor(x) for x in xs]
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != len(ref) or x.shape[0] != ref[0] or x.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels: {ref} vs {x.shape}")
    return apply("concat", *xs, axis=1)


register_op(
    "reshape",
    lambda x, shape: (x.reshape(shape), x.shape),
    lambda shape, g: (g.reshape(shape),),
)


def reshape(x, shape):
    return apply("reshape", x, shape=tuple(int(s) for s in shape))


register_op(
    "permute",
    lambda x, axes: (np.ascontiguousarray(np.transpose(x, axes)), axes),
    lambda axes, g: (np.ascontiguousarray(np.transpose(g, np.argsort(axes))),),
)


def permute(x, axes):
    return apply("permute", x, axes=tuple(axes))


def _up_fwd(x, factor):
    return x.repeat(factor, axis=2).repeat(factor, axis=3), factor


def _up_bwd(f, g):
    n, c, h, w = g.shape
    return (g.reshape(n, c, h // f, f, w // f, f).sum(axis=(3, 5)),)


register_op("upsample_nearest", _up_fwd, _up_bwd)


def upsample_nearest(x, factor=2):
    return apply("upsample_nearest", x, factor=int(factor))


# ---------------------------------------------------------------- normalization

def _ln_fwd(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv, gamma)


def _ln_bwd(ctx, g):
    xhat, inv, gamma = ctx
    d = xhat.shape[-1]
    gxhat = g * gamma
    gx = inv / d * (d * gxhat - gxhat.sum(-1, keepdims=True)
                    - xhat * (gxhat * xhat).sum(-1, keepdims=True))
    axes = tuple(range(g.ndim - 1))
    return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)


register_op("layer_norm", _ln_fwd, _ln_bwd)


def layer_norm(x, gamma, beta, eps=1e-5):
    return apply("layer_norm", x, gamma, beta, eps=eps)
