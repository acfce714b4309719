"""Fine-grained feature retention encoder.

A stride-2 convolutional stub stands in for the backbone and emits S1..S5 at
strides 2..32. The deepest level is refined by one self-attention encoder
layer, then a top-down pass merges 32 -> 16 -> 8 -> 4, with S1 injected into
the stride-4 node, and a bottom-up pass re-fuses 4 -> 8 -> 16. Outputs are
F2, F3 and F4; no stride-32 level is emitted. Two comparison wirings share
the same machinery: ``ffr_f5`` extends the bottom-up pass to stride 32, and
``rtdetr_baseline`` uses S3..S5 only and emits F3..F5.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import flops, ops
from .dyfusnet import DyFusNet, dyfusnet_apply, init_dyfusnet
from .errors import ConfigError, ShapeError
from .esfc import esfc_apply, init_esfc
from .params import ConvSpec, count_params, init_conv, uniform_fan_in
from .tensor import Tensor, as_tensor

STRIDES = {"S1": 2, "S2": 4, "S3": 8, "S4": 16, "S5": 32,
           "F2": 4, "F3": 8, "F4": 16, "F5": 32}
VARIANTS = ("ffr", "ffr_f5", "rtdetr_baseline")
FUSION_BLOCKS = ("conv", "dyfusnet")
STAGE_STRIDES = {"none": (), "S": (4,), "M": (8,), "D": (16,), "M&D": (8, 16)}


@dataclass
class PyramidFeatures:
    levels: dict
    strides: dict = field(default_factory=dict)

    def __post_init__(self):
        for tag in self.levels:
            self.strides.setdefault(tag, STRIDES[tag])

    def __getitem__(self, tag):
        return self.levels[tag]

    def __contains__(self, tag):
        return tag in self.levels

    def tags(self):
        return list(self.levels)

    def shapes(self):
        return {tag: tuple(t.shape) for tag, t in self.levels.items()}


@dataclass(frozen=True)
class FfrConfig:
    channels: tuple = (8, 16, 32, 64, 64)
    hidden: int = 32
    heads: int = 4
    ffn_dim: int = 64
    variant: str = "ffr"
    fusion_block: str = "conv"
    inject_s1: bool = True
    esfc_stage: str = "none"
    experts: int = 3
    n_blocks: int = 3
    e: float = 0.5
    r: int = 16
    fuse_1x1: bool = True
    high_band_init: str = "laplacian"
    eca_b: float = 1.0
    eca_gamma: float = 2.0
    ghost_ratio: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != 5 or min(self.channels) < 1:
            raise ConfigError(f"channels needs five positive widths, got {self.channels}", key="channels")
        if self.variant not in VARIANTS:
            raise ConfigError(f"ffr_variant {self.variant!r} not in {VARIANTS}", key="ffr_variant")
        if self.fusion_block not in FUSION_BLOCKS:
            raise ConfigError(f"fusion_block {self.fusion_block!r} not in {FUSION_BLOCKS}",
                              key="fusion_block")
        if self.esfc_stage not in STAGE_STRIDES:
            raise ConfigError(f"esfc_stage {self.esfc_stage!r} not in {tuple(STAGE_STRIDES)}",
                              key="esfc_stage")
        if self.heads < 1 or self.hidden % self.heads:
            raise ConfigError(f"embed dim {self.hidden} not divisible by heads={self.heads}", key="heads")
        if self.hidden % 4:
            raise ConfigError(f"embed dim {self.hidden} must be a multiple of 4 for 2-D sin-cos "
                              "position encoding", key="hidden")
        if self.variant == "rtdetr_baseline" and 4 in STAGE_STRIDES[self.esfc_stage]:
            raise ConfigError("rtdetr_baseline has no stride-4 node for esfc_stage S", key="esfc_stage")

    @property
    def lowest(self):
        return 8 if self.variant == "rtdetr_baseline" else 4

    @property
    def td_strides(self):
        """Top-down fusion nodes, coarse to fine."""
        return (16, 8) if self.variant == "rtdetr_baseline" else (16, 8, 4)

    @property
    def bu_strides(self):
        return {"ffr": (8, 16), "ffr_f5": (8, 16, 32), "rtdetr_baseline": (16, 32)}[self.variant]

    @property
    def outputs(self):
        return tuple(f"F{int(math.log2(s))}" for s in (self.lowest,) + self.bu_strides)

    @property
    def uses_s1(self):
        return self.inject_s1 and self.variant != "rtdetr_baseline"


def _tag_for(stride):
    return f"S{int(math.log2(stride))}"


# ---------------------------------------------------------------- backbone stub

@dataclass(frozen=True)
class BackboneStub:
    stages: tuple

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if len(self.stages) != 5 or any(s.stride != 2 for s in self.stages):
            raise ConfigError("backbone stub needs five stride-2 stages", key="channels")


def init_backbone(rng, channels, in_channels=3, dtype=np.float32):
    stages, cin = [], in_channels
    for c in channels:
        stages.append(init_conv(rng, cin, c, 3, stride=2, bias=True, dtype=dtype))
        cin = c
    return BackboneStub(tuple(stages))


def backbone_stub_forward(image, params):
    image = as_tensor(image)
    if image.ndim != 4 or image.shape[1] != params.stages[0].in_channels:
        raise ShapeError(f"backbone expects [N, {params.stages[0].in_channels}, H, W], got {image.shape}")
    h, w = image.shape[2:]
    if h % 32 or w % 32:
        raise ShapeError(f"input extents {h}x{w} must be multiples of 32")
    levels, x = {}, image
    for i, spec in enumerate(params.stages):
        x = ops.relu(ops.conv2d(x, spec))
        levels[f"S{i + 1}"] = x
    return PyramidFeatures(levels)


# ---------------------------------------------------------------- attention layer

@dataclass(frozen=True)
class AifiParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ff1_w: Tensor
    ff1_b: Tensor
    ff2_w: Tensor
    ff2_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    heads: int = 4

    def __post_init__(self):
        d = self.wq.shape[0]
        if self.heads < 1 or d % self.heads:
            raise ConfigError(f"embed dim {d} not divisible by heads={self.heads}", key="heads")

    @property
    def dim(self):
        return self.wq.shape[0]


def init_aifi(rng, dim, heads, ffn_dim, dtype=np.float32):
    if dim % heads:
        raise ConfigError(f"embed dim {dim} not divisible by heads={heads}", key="heads")

    def lin(o, i):
        return uniform_fan_in(rng, (o, i), i, dtype), Tensor(np.zeros(o, dtype=dtype))

    wq, bq = lin(dim, dim)
    wk, bk = lin(dim, dim)
    wv, bv = lin(dim, dim)
    wo, bo = lin(dim, dim)
    f1, fb1 = lin(ffn_dim, dim)
    f2, fb2 = lin(dim, ffn_dim)
    ones, zeros = np.ones(dim, dtype=dtype), np.zeros(dim, dtype=dtype)
    return AifiParams(wq, bq, wk, bk, wv, bv, wo, bo, Tensor(ones), Tensor(zeros),
                      f1, fb1, f2, fb2, Tensor(ones.copy()), Tensor(zeros.copy()), heads)


def sincos_position_2d(h, w, dim, temperature=10000.0):
    """Fixed [h*w, dim] encoding; tokens are row-major over (y, x)."""
    if dim % 4:
        raise ConfigError(f"embed dim {dim} must be a multiple of 4", key="hidden")
    quarter = dim // 4
    omega = 1.0 / temperature ** (np.arange(quarter) / quarter)
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    out_x = xs.reshape(-1)[:, None] * omega[None, :]
    out_y = ys.reshape(-1)[:, None] * omega[None, :]
    return np.concatenate([np.sin(out_x), np.cos(out_x), np.sin(out_y), np.cos(out_y)], axis=1)


def aifi_attention(tokens, pos, p):
    """Multi-head attention before the output projection.

    Returns ``(values_mixed [N, L, D], attn [N, heads, L, L])``. Position
    encoding is added to queries and keys only.
    """
    n, length, d = tokens.shape
    hd = d // p.heads
    qk_in = ops.add(tokens, pos)

    def heads(t):
        return ops.permute(ops.reshape(t, (n, length, p.heads, hd)), (0, 2, 1, 3))

    q = heads(ops.linear(qk_in, p.wq, p.bq))
    k = heads(ops.linear(qk_in, p.wk, p.bk))
    v = heads(ops.linear(tokens, p.wv, p.bv))
    scores = ops.scale(ops.matmul(q, ops.permute(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    attn = ops.softmax(scores)
    mixed = ops.reshape(ops.permute(ops.matmul(attn, v), (0, 2, 1, 3)), (n, length, d))
    return mixed, attn


def aifi_forward(s5, p, return_attention=False):
    s5 = as_tensor(s5)
    n, c, h, w = s5.shape
    if c != p.dim:
        raise ConfigError(f"aifi embed dim {p.dim} vs input channels {c}", key="hidden")
    length = h * w
    tokens = ops.permute(ops.reshape(s5, (n, c, length)), (0, 2, 1))
    pos = Tensor(sincos_position_2d(h, w, c).astype(s5.dtype))
    mixed, attn = aifi_attention(tokens, pos, p)
    t1 = ops.layer_norm(ops.add(tokens, ops.linear(mixed, p.wo, p.bo)), p.ln1_g, p.ln1_b)
    ff = ops.linear(ops.gelu(ops.linear(t1, p.ff1_w, p.ff1_b)), p.ff2_w, p.ff2_b)
    t2 = ops.layer_norm(ops.add(t1, ff), p.ln2_g, p.ln2_b)
    out = ops.reshape(ops.permute(t2, (0, 2, 1)), (n, c, h, w))
    return (out, attn) if return_attention else out


def aifi_cost(p, shape):
    n, d, h, w = shape
    length = h * w
    f = p.ff1_w.shape[0]
    macs = 4 * n * length * d * d + 2 * n * length * length * d + 2 * n * length * d * f
    params = 4 * (d * d + d) + 4 * d + (f * d + f) + (d * f + d)
    return macs, params


# ---------------------------------------------------------------- fusion blocks

@dataclass(frozen=True)
class FusionBlock:
    """concat(a, b) -> 1x1 reduce -> (3x3 conv | split/fuse block)."""

    reduce: ConvSpec
    refine: ConvSpec | None = None
    dyfus: DyFusNet | None = None

    def __post_init__(self):
        if (self.refine is None) == (self.dyfus is None):
            raise ConfigError("fusion block needs exactly one of refine / dyfus", key="fusion_block")

    @property
    def kind(self):
        return "conv" if self.refine is not None else "dyfusnet"


def init_fusion(rng, dim, cfg, dtype=np.float32):
    reduce = init_conv(rng, 2 * dim, dim, 1, bias=True, dtype=dtype)
    if cfg.fusion_block == "conv":
        return FusionBlock(reduce, refine=init_conv(rng, dim, dim, 3, bias=True, dtype=dtype))
    block = init_dyfusnet(rng, dim, cfg.e, cfg.r, cfg.fuse_1x1, cfg.high_band_init, dtype)
    return FusionBlock(reduce, dyfus=block)


def fusion_forward(a, b, block):
    y = ops.relu(ops.conv2d(ops.concat_channels(a, b), block.reduce))
    if block.refine is not None:
        return ops.relu(ops.conv2d(y, block.refine))
    return dyfusnet_apply(y, block.dyfus)


def fusion_cost(block, shape):
    n, c2, h, w = shape
    macs, params, mid = flops.conv_cost(block.reduce, shape)
    if block.refine is not None:
        m, q, _ = flops.conv_cost(block.refine, mid)
    else:
        m, q = flops.dyfusnet_cost(block.dyfus, mid)
    return macs + m, params + q


# ---------------------------------------------------------------- encoder

@dataclass(frozen=True)
class FfrParams:
    input_proj: dict
    aifi: AifiParams
    lateral: dict
    td: dict
    down: dict
    bu: dict
    inject: ConvSpec | None
    esfc: dict


def init_ffr(rng, cfg, dtype=np.float32):
    d = cfg.hidden
    used = range(3, 6) if cfg.variant == "rtdetr_baseline" else range(2, 6)
    input_proj = {f"S{i}": init_conv(rng, cfg.channels[i - 1], d, 1, bias=True, dtype=dtype)
                  for i in used}
    aifi = init_aifi(rng, d, cfg.heads, cfg.ffn_dim, dtype)
    lateral, td = {}, {}
    for s in cfg.td_strides:
        lateral[str(2 * s)] = init_conv(rng, d, d, 1, bias=True, dtype=dtype)
        td[str(s)] = init_fusion(rng, d, cfg, dtype)
    down, bu = {}, {}
    for s in cfg.bu_strides:
        down[str(s)] = init_conv(rng, d, d, 3, stride=2, bias=True, dtype=dtype)
        bu[str(s)] = init_fusion(rng, d, cfg, dtype)
    inject = None
    if cfg.uses_s1:
        inject = init_conv(rng, cfg.channels[0], d, 3, stride=2, bias=True, dtype=dtype)
    esfc = {str(s): init_esfc(rng, d, cfg.experts, cfg.n_blocks, cfg.esfc_stage, cfg.eca_b,
                              cfg.eca_gamma, cfg.ghost_ratio, dtype)
            for s in STAGE_STRIDES[cfg.esfc_stage]}
    return FfrParams(input_proj, aifi, lateral, td, down, bu, inject, esfc)


def ffr_encoder_forward(pyr, cfg, params):
    """Top-down then bottom-up fusion; returns a pyramid holding exactly ``cfg.outputs``."""
    need = ["S3", "S4", "S5"] if cfg.variant == "rtdetr_baseline" else ["S2", "S3", "S4", "S5"]
    if cfg.uses_s1:
        need = ["S1"] + need
    missing = [t for t in need if t not in pyr]
    if missing:
        raise ConfigError(f"pyramid missing levels {missing}", key="levels")
    proj = {int(STRIDES[t]): ops.conv2d(pyr[t], params.input_proj[t]) for t in params.input_proj}

    inner = {}
    high = aifi_forward(proj[32], params.aifi)
    for s in cfg.td_strides:
        high = ops.conv2d(high, params.lateral[str(2 * s)])
        inner[2 * s] = high
        high = fusion_forward(ops.upsample_nearest(high, 2), proj[s], params.td[str(s)])
        if s == 4 and params.inject is not None:
            high = ops.add(high, ops.conv2d(pyr["S1"], params.inject))
        if str(s) in params.esfc:
            high = esfc_apply(high, params.esfc[str(s)])
        inner[s] = high

    low = inner[cfg.lowest]
    outs = {cfg.lowest: low}
    for s in cfg.bu_strides:
        low = fusion_forward(ops.conv2d(low, params.down[str(s)]), inner[s], params.bu[str(s)])
        outs[s] = low
    return PyramidFeatures({f"F{int(math.log2(s))}": t for s, t in sorted(outs.items())})


# ---------------------------------------------------------------- shape / cost planning

def plan(cfg, extents, params=None, n=1):
    """Predicted shapes and per-stride costs without running a forward.

    Returns ``{"levels": {tag: (n, c, h, w)}, "rows": [...], "encoder": (macs, params),
    "backbone": (macs, params)}``. Every component's cost is attributed to the
    stride of its output.
    """
    h, w = extents
    if h % 32 or w % 32:
        raise ShapeError(f"input extents {h}x{w} must be multiples of 32")
    if params is None:
        params = init_ffr(np.random.default_rng(0), cfg)
    d = cfg.hidden
    levels = {f"S{i + 1}": (n, c, h >> (i + 1), w >> (i + 1)) for i, c in enumerate(cfg.channels)}
    for tag in cfg.outputs:
        s = STRIDES[tag]
        levels[tag] = (n, d, h // s, w // s)

    per = {s: [0, 0, 0, 0] for s in (2, 4, 8, 16, 32)}  # backbone macs/params, encoder macs/params

    def shape_at(s, c):
        return (n, c, h // s, w // s)

    cin_shape = (n, 3, h, w)
    bb = init_backbone(np.random.default_rng(0), cfg.channels)
    for i, spec in enumerate(bb.stages):
        m, q, cin_shape = flops.conv_cost(spec, cin_shape)
        per[2 << i][0] += m
        per[2 << i][1] += q

    def enc(s, mq):
        per[s][2] += mq[0]
        per[s][3] += mq[1]

    for tag, spec in params.input_proj.items():
        s = STRIDES[tag]
        enc(s, flops.conv_cost(spec, shape_at(s, spec.in_channels))[:2])
    enc(32, aifi_cost(params.aifi, shape_at(32, d)))
    for s in cfg.td_strides:
        enc(2 * s, flops.conv_cost(params.lateral[str(2 * s)], shape_at(2 * s, d))[:2])
        enc(s, fusion_cost(params.td[str(s)], shape_at(s, 2 * d)))
        if s == 4 and params.inject is not None:
            enc(4, flops.conv_cost(params.inject, shape_at(2, cfg.channels[0]))[:2])
        if str(s) in params.esfc:
            enc(s, flops.esfc_cost(params.esfc[str(s)], shape_at(s, d)))
    for s in cfg.bu_strides:
        enc(s, flops.conv_cost(params.down[str(s)], shape_at(s // 2, d))[:2])
        enc(s, fusion_cost(params.bu[str(s)], shape_at(s, 2 * d)))

    rows = []
    for i, s in enumerate((2, 4, 8, 16, 32)):
        stag = f"S{i + 1}"
        ftag = f"F{i + 1}"
        label = f"{stag} -> {ftag}" if ftag in cfg.outputs else stag
        out_c = d if ftag in cfg.outputs else cfg.channels[i]
        rows.append({
            "level": label, "stride": s, "channels": out_c, "height": h // s, "width": w // s,
            "params": per[s][1] + per[s][3], "macs": per[s][0] + per[s][2],
        })
    encoder = (sum(v[2] for v in per.values()), sum(v[3] for v in per.values()))
    backbone = (sum(v[0] for v in per.values()), sum(v[1] for v in per.values()))
    assert encoder[1] == count_params(params), "analytic and tree parameter counts disagree"
    return {"levels": levels, "rows": rows, "encoder": encoder, "backbone": backbone}


def shape_report(cfg, extents, params=None, n=1):
    """Text table: one row per stride plus a total row."""
    info = plan(cfg, extents, params, n)
    head = f"{'level':<10}{'stride':>7}{'channels':>10}{'extent':>10}{'params':>12}{'MACs':>14}"
    lines = [f"# variant={cfg.variant} input={extents[0]}x{extents[1]} outputs={','.join(cfg.outputs)}",
             head]
    for r in info["rows"]:
        lines.append(f"{r['level']:<10}{r['stride']:>7}{r['channels']:>10}"
                     f"{str(r['height']) + 'x' + str(r['width']):>10}{r['params']:>12}{r['macs']:>14}")
    tm = info["encoder"][0] + info["backbone"][0]
    tp = info["encoder"][1] + info["backbone"][1]
    lines.append(f"{'total':<10}{'':>7}{'':>10}{'':>10}{tp:>12}{tm:>14}")
    lines.append(f"# encoder output-path params={info['encoder'][1]} MACs={info['encoder'][0]}")
    return "\n".join(lines)
