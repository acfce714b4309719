"""Build, run and describe the module selected by a :class:`~freqsem.config.RunConfig`."""
from __future__ import annotations

import numpy as np

from . import dyfusnet as dy
from . import esfc as es
from . import ffr, flops
from .params import cast
from .tensor import Tensor


def _rng(seed):
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def init_weights(cfg, seed=None):
    """Seeded parameter tree for ``cfg.pipeline``; leaves use ``cfg.dtype``."""
    rng = _rng(cfg.seed if seed is None else seed)
    c = cfg.shape[1]
    kind = cfg.pipeline
    if kind == "dmsd":
        tree = dy.init_dmsd(rng, c, cfg.high_band_init)
    elif kind == "sfcm":
        tree = dy.init_sfcm(rng, c, cfg.r)
    elif kind == "dyfusnet":
        tree = dy.init_dyfusnet(rng, c, cfg.e, cfg.r, cfg.fuse_1x1, cfg.high_band_init)
    elif kind == "deconv":
        tree = es.init_deconv(rng, c, cfg.experts)
    elif kind == "egblock":
        tree = tuple(es.init_egblock(rng, c, c, cfg.ghost_ratio) for _ in range(cfg.n_blocks))
    elif kind == "dga":
        tree = es.init_dga(rng, c, cfg.eca_b, cfg.eca_gamma)
    elif kind == "esfc":
        tree = es.init_esfc(rng, c, cfg.experts, cfg.n_blocks, cfg.esfc_stage, cfg.eca_b,
                            cfg.eca_gamma, cfg.ghost_ratio)
    else:
        fcfg = cfg.ffr_config()
        tree = {"backbone": ffr.init_backbone(rng, fcfg.channels), "encoder": ffr.init_ffr(rng, fcfg)}
    return cast(tree, cfg.dtype) if cfg.dtype != np.float32 else tree


def make_input(cfg, seed=None):
    """Seeded standard-normal input of ``cfg.shape``; drawn from a stream separate from the weights."""
    rng = _rng((cfg.seed if seed is None else seed) ^ 0x5EED)
    return Tensor(rng.standard_normal(cfg.shape).astype(cfg.dtype))


def forward(cfg, tree, x):
    """Returns ``{tag: Tensor}``; single-output modules use the tag ``out``."""
    kind = cfg.pipeline
    if kind == "dmsd":
        return {"out": dy.dmsd_forward(x, tree)[0]}
    if kind == "sfcm":
        return {"out": dy.sfcm_forward(x, tree)[0]}
    if kind == "dyfusnet":
        return {"out": dy.dyfusnet_apply(x, tree)}
    if kind == "deconv":
        return {"out": es.deconv_forward(x, tree)[0]}
    if kind == "egblock":
        return {"out": es.egblock_chain(x, tree)}
    if kind == "dga":
        return {"out": es.dga_forward(x, tree)[0]}
    if kind == "esfc":
        return {"out": es.esfc_apply(x, tree)}
    pyr = ffr.backbone_stub_forward(x, tree["backbone"])
    return dict(ffr.ffr_encoder_forward(pyr, cfg.ffr_config(), tree["encoder"]).levels)


def report(cfg, tree):
    """Shape/cost table for the configured module."""
    if cfg.pipeline == "ffr":
        return ffr.shape_report(cfg.ffr_config(), cfg.shape[2:], tree["encoder"], cfg.shape[0])
    macs, params = flops.count_flops_params(tree, cfg.shape)
    n, c, h, w = cfg.shape
    head = f"{'module':<10}{'input':>18}{'output':>18}{'params':>10}{'MACs':>14}"
    shape = f"{n}x{c}x{h}x{w}"
    return "\n".join([head, f"{cfg.pipeline:<10}{shape:>18}{shape:>18}{params:>10}{macs:>14}"])
