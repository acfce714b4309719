"""Pure numpy kernels, used when the compiled extension is unavailable.

API mirrors ``_kernels.pyx`` exactly; both operate on contiguous NCHW arrays
and return freshly allocated outputs of the input dtype.
"""
import numpy as np

NAME = "python"


def pad2d(x, top, bottom, left, right, replicate):
    if not (top or bottom or left or right):
        return x
    mode = "edge" if replicate else "constant"
    return np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)), mode=mode)


def conv2d(x, w, bias, stride, groups, replicate):
    """Grouped same-padded cross-correlation by shift-and-accumulate over taps."""
    n, cin, h, wd = x.shape
    cout, cig, kh, kw = w.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (wd + 2 * pw - kw) // stride + 1
    # f64 accumulation keeps f32 results within one rounding of the exact sum
    xp = pad2d(x, ph, ph, pw, pw, replicate).astype(np.float64, copy=False)
    cog = cout // groups
    xg = xp.reshape(n, groups, cig, xp.shape[2], xp.shape[3])
    wg = w.astype(np.float64, copy=False).reshape(groups, cog, cig, kh, kw)
    acc = np.zeros((n, groups, cog, ho, wo))
    hs = stride * (ho - 1) + 1
    ws = stride * (wo - 1) + 1
    depthwise = cig == 1 and cog == 1
    for i in range(kh):
        for j in range(kw):
            xs = xg[:, :, :, i:i + hs:stride, j:j + ws:stride]
            if depthwise:
                acc += xs * wg[None, :, :, 0, i, j, None, None]
            else:
                acc += np.einsum("ngchw,goc->ngohw", xs, wg[:, :, :, i, j], optimize=True)
    out = acc.reshape(n, cout, ho, wo)
    if bias is not None:
        out += bias.astype(np.float64, copy=False)[None, :, None, None]
    return out.astype(x.dtype)


def pool2d(x, k, stride, lo, hi, replicate, is_max):
    """k x k window mean or max with asymmetric same-padding (lo, hi)."""
    xp = pad2d(x, lo, hi, lo, hi, replicate)
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    hs = stride * (ho - 1) + 1
    ws = stride * (wo - 1) + 1
    if is_max:
        out = None
        for i in range(k):
            for j in range(k):
                xs = xp[:, :, i:i + hs:stride, j:j + ws:stride]
                out = xs.copy() if out is None else np.maximum(out, xs)
        return out
    acc = np.zeros(x.shape[:2] + (ho, wo))
    for i in range(k):
        for j in range(k):
            acc += xp[:, :, i:i + hs:stride, j:j + ws:stride]
    return (acc / (k * k)).astype(x.dtype)
