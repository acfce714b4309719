import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as O
from freqsem import instrument, ops
from freqsem.autograd import grad_check, weighted_sum_loss
from freqsem.errors import ConfigError, ShapeError
from freqsem.ffr import (FfrConfig, PyramidFeatures, aifi_attention, aifi_forward,
                         backbone_stub_forward, ffr_encoder_forward, init_aifi, init_backbone,
                         init_ffr, plan, shape_report, sincos_position_2d)
from freqsem.params import count_params
from freqsem.tensor import Tensor


def pyramid(rng, cfg, h=64, w=64, n=1):
    bb = init_backbone(rng, cfg.channels)
    image = rng.standard_normal((n, 3, h, w)).astype(np.float32)
    return backbone_stub_forward(image, bb)


# ---------------------------------------------------------------- backbone stub

def test_stub_extents(rng):
    pyr = pyramid(rng, FfrConfig(), 64, 96)
    assert pyr.shapes() == {"S1": (1, 8, 32, 48), "S2": (1, 16, 16, 24), "S3": (1, 32, 8, 12),
                            "S4": (1, 64, 4, 6), "S5": (1, 64, 2, 3)}
    assert [pyr.strides[t] for t in pyr.tags()] == [2, 4, 8, 16, 32]


def test_stub_rejects_misaligned(rng):
    bb = init_backbone(rng, FfrConfig().channels)
    with pytest.raises(ShapeError):
        backbone_stub_forward(np.zeros((1, 3, 60, 60), np.float32), bb)
    with pytest.raises(ShapeError):
        backbone_stub_forward(np.zeros((1, 4, 64, 64), np.float32), bb)


# ---------------------------------------------------------------- attention layer

def test_single_token_attention_is_value_projection(rng):
    p = init_aifi(rng, 8, 2, 16, dtype=np.float64)
    tok = rng.standard_normal((3, 1, 8))
    mixed, attn = aifi_attention(Tensor(tok), Tensor(rng.standard_normal((1, 8))), p)
    assert np.all(attn.data == 1.0)
    assert np.max(np.abs(mixed.data - ops.linear(tok, p.wv, p.bv).data)) < 1e-12


def test_attention_rows_normalized(rng):
    for _ in range(20):
        h, w = (int(v) for v in rng.integers(1, 5, 2))
        p = init_aifi(rng, 16, 4, 32)
        x = rng.standard_normal((2, 16, h, w)).astype(np.float32) * 3
        out, attn = aifi_forward(x, p, return_attention=True)
        assert out.shape == x.shape and attn.shape == (2, 4, h * w, h * w)
        assert np.max(np.abs(attn.data.sum(axis=-1) - 1)) < 1e-6


def test_aifi_matches_oracle(backend, rng):
    p = init_aifi(rng, 16, 4, 32)
    x = rng.standard_normal((2, 16, 3, 4)).astype(np.float32)
    out, attn = aifi_forward(x, p, return_attention=True)
    ref, ref_attn = O.aifi(x, p)
    assert O.rel_err(out, ref) < 1e-6 and O.rel_err(attn, ref_attn) < 1e-6


def test_position_encoding_matches_loops():
    assert np.max(np.abs(sincos_position_2d(3, 5, 8) - O.sincos_2d(3, 5, 8))) < 1e-14


def test_aifi_config_errors():
    with pytest.raises(ConfigError) as e:
        FfrConfig(hidden=30, heads=4)
    assert e.value.key == "heads"
    with pytest.raises(ConfigError) as e:
        FfrConfig(hidden=6, heads=3)
    assert e.value.key == "hidden"
    with pytest.raises(ConfigError):
        sincos_position_2d(2, 2, 6)


def test_aifi_gradient(rng):
    p = init_aifi(rng, 8, 2, 16, dtype=np.float64)
    point = {"x": rng.standard_normal((1, 8, 2, 2)), "p": p}
    assert grad_check(lambda pt: weighted_sum_loss(aifi_forward(pt["x"], pt["p"])), point) < 1e-4


# ---------------------------------------------------------------- encoder

@pytest.mark.parametrize("variant,outputs", [("ffr", ("F2", "F3", "F4")),
                                             ("ffr_f5", ("F2", "F3", "F4", "F5")),
                                             ("rtdetr_baseline", ("F3", "F4", "F5"))])
def test_output_levels(rng, variant, outputs):
    cfg = FfrConfig(variant=variant, inject_s1=variant != "rtdetr_baseline")
    out = ffr_encoder_forward(pyramid(rng, cfg), cfg, init_ffr(rng, cfg))
    assert tuple(out.tags()) == outputs
    for tag in outputs:
        s = int(tag[1])
        assert out[tag].shape == (1, cfg.hidden, 64 >> s, 64 >> s)


def _fusion_ref(a, b, block):
    y = O.relu(O.conv_spec(np.concatenate([a, b], axis=1), block.reduce))
    return O.relu(O.conv_spec(y, block.refine))


def test_unrolled_top_down_and_bottom_up(backend, rng):
    cfg = FfrConfig(inject_s1=False, fusion_block="conv")
    params = init_ffr(rng, cfg)
    pyr = pyramid(rng, cfg)
    out = ffr_encoder_forward(pyr, cfg, params)

    proj = {t: O.conv_spec(pyr[t].data, params.input_proj[t]) for t in ("S2", "S3", "S4", "S5")}
    a5, _ = O.aifi(proj["S5"], params.aifi)
    lat32 = O.conv_spec(a5, params.lateral["32"])
    i16 = _fusion_ref(O.upsample2(lat32), proj["S4"], params.td["16"])
    lat16 = O.conv_spec(i16, params.lateral["16"])
    i8 = _fusion_ref(O.upsample2(lat16), proj["S3"], params.td["8"])
    lat8 = O.conv_spec(i8, params.lateral["8"])
    f2 = _fusion_ref(O.upsample2(lat8), proj["S2"], params.td["4"])
    # bottom-up consumes the lateral-projected inner maps
    f3 = _fusion_ref(O.conv_spec(f2, params.down["8"]), lat8, params.bu["8"])
    f4 = _fusion_ref(O.conv_spec(f3, params.down["16"]), lat16, params.bu["16"])
    assert O.rel_err(out["F2"], f2) < 1e-6
    assert O.rel_err(out["F3"], f3) < 1e-6
    assert O.rel_err(out["F4"], f4) < 1e-6


def test_s1_injection_is_additive(rng):
    cfg = FfrConfig(inject_s1=True)
    params = init_ffr(rng, cfg)
    pyr = pyramid(rng, cfg)
    with_s1 = ffr_encoder_forward(pyr, cfg, params)["F2"].data
    off = dataclasses.replace(cfg, inject_s1=False)
    without = ffr_encoder_forward(pyr, off, dataclasses.replace(params, inject=None))["F2"].data
    inj = O.conv_spec(pyr["S1"].data, params.inject)
    assert O.rel_err(with_s1, without + inj) < 1e-5


def test_missing_level(rng):
    cfg = FfrConfig()
    pyr = pyramid(rng, cfg)
    levels = {t: pyr[t] for t in pyr.tags() if t != "S2"}
    with pytest.raises(ConfigError) as e:
        ffr_encoder_forward(PyramidFeatures(levels), cfg, init_ffr(rng, cfg))
    assert e.value.key == "levels"


@settings(max_examples=12, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.sampled_from(["ffr", "ffr_f5", "rtdetr_baseline"]),
       st.sampled_from(["conv", "dyfusnet"]), st.sampled_from(["none", "M", "D"]))
def test_plan_matches_forward(a, b, variant, fusion, stage):
    cfg = FfrConfig(variant=variant, fusion_block=fusion, esfc_stage=stage,
                    inject_s1=variant != "rtdetr_baseline")
    rng = np.random.default_rng(a * 7 + b)
    params = init_ffr(rng, cfg)
    info = plan(cfg, (32 * a, 32 * b), params)
    pyr = pyramid(rng, cfg, 32 * a, 32 * b)
    with instrument.counting() as counter:
        out = ffr_encoder_forward(pyr, cfg, params)
    assert {t: info["levels"][t] for t in cfg.outputs} == out.shapes()
    assert {t: info["levels"][t] for t in pyr.tags()} == pyr.shapes()
    assert counter.macs == info["encoder"][0]
    assert count_params(params) == info["encoder"][1]


def test_plan_rejects_misaligned():
    with pytest.raises(ShapeError):
        plan(FfrConfig(), (64, 50))


@pytest.mark.parametrize("fusion", ["conv", "dyfusnet"])
def test_fewer_levels_cost_less(fusion):
    a = plan(FfrConfig(variant="ffr", fusion_block=fusion), (64, 64))["encoder"]
    b = plan(FfrConfig(variant="ffr_f5", fusion_block=fusion), (64, 64))["encoder"]
    assert a[0] < b[0] and a[1] < b[1]


def test_shape_table():
    cfg = FfrConfig()
    text = shape_report(cfg, (64, 64))
    rows = [ln for ln in text.splitlines() if not ln.startswith("#")][1:]
    assert len(rows) == 6 and rows[-1].startswith("total")
    assert [r.split()[0] for r in rows[:5]] == ["S1", "S2", "S3", "S4", "S5"]
    assert "F5" not in text.split("\n", 1)[1].replace("outputs", "")
    small = plan(cfg, (64, 64))["rows"]
    big = plan(cfg, (128, 128))["rows"]
    for s, b in zip(small, big):
        assert (b["height"], b["width"]) == (2 * s["height"], 2 * s["width"])
        assert b["params"] == s["params"]


def test_variant_rules():
    with pytest.raises(ConfigError) as e:
        FfrConfig(variant="rtdetr_baseline", esfc_stage="S")
    assert e.value.key == "esfc_stage"
    with pytest.raises(ConfigError) as e:
        FfrConfig(variant="yolo")
    assert e.value.key == "ffr_variant"
    assert not FfrConfig(variant="rtdetr_baseline").uses_s1
