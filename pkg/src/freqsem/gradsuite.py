"""Gradient checks for every parameterized module, plus a negative control."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import dyfusnet as dy
from . import esfc as es
from . import ffr
from .autograd import grad_check_report, weighted_sum_loss
from .params import named_tensors, replace_tensors
from .tensor import Tensor, apply, register_op

THRESHOLD = 1e-4
MODULES = ("dmsd", "sfcm", "dyfusnet", "deconv", "egblock", "dga", "esfc", "aifi", "fusion")
SUITES = {
    "dmsd": ("dmsd",),
    "sfcm": ("sfcm",),
    "dyfusnet": ("dmsd", "sfcm", "dyfusnet"),
    "deconv": ("deconv",),
    "egblock": ("egblock",),
    "dga": ("dga",),
    "esfc": ("deconv", "egblock", "dga", "esfc"),
    "ffr": ("aifi", "fusion"),
    "all": MODULES,
}


# Sigmoid whose backward drops the (1 - s) factor. Exists only so the suite
# can prove it notices a wrong derivative.
register_op("sigmoid_miswired", lambda x: (expit(x),) * 2, lambda s, g: (g * s,))


@dataclass(frozen=True)
class GradRow:
    module: str
    param: str
    error: float
    expect_fail: bool = False

    @property
    def passed(self):
        bad = not np.isfinite(self.error) or self.error >= THRESHOLD
        return bad if self.expect_fail else not bad

    @property
    def verdict(self):
        if self.expect_fail:
            return "DETECTED" if self.passed else "MISSED"
        return "PASS" if self.passed else "FAIL"


def _case(module, cfg, rng):
    n, c, h, w = cfg.gradcheck_shape
    x = rng.standard_normal((n, c, h, w))
    if module == "dmsd":
        return dy.init_dmsd(rng, c, cfg.high_band_init), x, lambda x, p: dy.dmsd_forward(x, p)[0]
    if module == "sfcm":
        return dy.init_sfcm(rng, c, cfg.r), x, lambda x, p: dy.sfcm_forward(x, p)[0]
    if module == "dyfusnet":
        p = dy.init_dyfusnet(rng, c, cfg.e, cfg.r, cfg.fuse_1x1, cfg.high_band_init)
        return p, x, dy.dyfusnet_apply
    if module == "deconv":
        return es.init_deconv(rng, c, cfg.experts), x, lambda x, p: es.deconv_forward(x, p)[0]
    if module == "egblock":
        p = tuple(es.init_egblock(rng, c, c, cfg.ghost_ratio) for _ in range(max(1, cfg.n_blocks)))
        return p, x, es.egblock_chain
    if module == "dga":
        return es.init_dga(rng, c, cfg.eca_b, cfg.eca_gamma), x, lambda x, p: es.dga_forward(x, p)[0]
    if module == "esfc":
        p = es.init_esfc(rng, c, cfg.experts, cfg.n_blocks, "D", cfg.eca_b, cfg.eca_gamma,
                         cfg.ghost_ratio)
        return p, x, es.esfc_apply
    if module == "aifi":
        p = ffr.init_aifi(rng, 8, 2, 16)
        return p, rng.standard_normal((1, 8, 2, 2)), ffr.aifi_forward
    if module == "fusion":
        fcfg = ffr.FfrConfig(hidden=4, heads=1, fusion_block=cfg.fusion_block, e=cfg.e, r=cfg.r,
                             fuse_1x1=cfg.fuse_1x1, high_band_init=cfg.high_band_init)
        block = ffr.init_fusion(rng, 4, fcfg)
        pair = (rng.standard_normal((1, 4, 4, 4)), rng.standard_normal((1, 4, 4, 4)))
        return block, pair, lambda xy, p: ffr.fusion_forward(xy[0], xy[1], p)
    raise KeyError(module)


def _randomize(tree, rng):
    """Replace zero-initialized biases and scalars so no gradient is trivially zero-weighted."""
    fresh = {k: rng.uniform(-0.5, 0.5, t.shape) for k, t in named_tensors(tree).items()
             if not np.any(t.data)}
    return replace_tensors(tree, fresh)


def check_module(module, cfg, seed=0):
    rng = np.random.default_rng(seed)
    params, x, fwd = _case(module, cfg, rng)
    params = _randomize(params, rng)
    inputs = tuple(Tensor(a) for a in x) if isinstance(x, tuple) else Tensor(x)
    point = {"input": inputs, "params": params}
    report = grad_check_report(lambda pt: weighted_sum_loss(fwd(pt["input"], pt["params"])), point)
    return [GradRow(module, name, err) for name, err in report.items()]


def negative_control(seed=0):
    x = np.random.default_rng(seed).standard_normal((2, 5))
    report = grad_check_report(lambda pt: weighted_sum_loss(apply("sigmoid_miswired", pt)), Tensor(x))
    return [GradRow("negative_control", name or "input", err, expect_fail=True)
            for name, err in report.items()]


def run_suite(cfg, modules=None, seed=0, control=True):
    modules = SUITES[cfg.pipeline] if modules is None else modules
    rows = []
    for m in modules:
        rows.extend(check_module(m, cfg, seed))
    if control:
        rows.extend(negative_control(seed))
    return rows


def format_rows(rows):
    out = [f"{'module':<18}{'parameter':<34}{'max_rel_err':>14}  verdict"]
    for r in rows:
        out.append(f"{r.module:<18}{r.param:<34}{r.error:>14.3e}  {r.verdict}")
    failed = sum(not r.passed for r in rows)
    out.append(f"# {len(rows)} rows, {failed} failed, threshold {THRESHOLD:g}")
    return "\n".join(out) + "\n"
