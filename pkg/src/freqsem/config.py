"""Run configuration: INI sections per module, validated into a frozen :class:`RunConfig`."""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError

PIPELINES = ("dmsd", "sfcm", "dyfusnet", "deconv", "egblock", "dga", "esfc", "ffr")
PRECISIONS = ("f32", "f64")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    shape: tuple = (1, 16, 32, 32)
    pipeline: str = "dyfusnet"
    precision: str = "f32"
    # dyfusnet
    e: float = 0.5
    r: int = 16
    fuse_1x1: bool = True
    high_band_init: str = "laplacian"
    # esfc
    experts: int = 3
    n_blocks: int = 3
    esfc_stage: str = "D"
    ghost_ratio: float = 0.5
    eca_b: float = 1.0
    eca_gamma: float = 2.0
    # ffr
    ffr_variant: str = "ffr"
    fusion_block: str = "conv"
    inject_s1: bool = True
    channels: tuple = (8, 16, 32, 64, 64)
    hidden: int = 32
    heads: int = 4
    ffn_dim: int = 64
    # spectral
    band_r1: float = math.pi / 3
    band_r2: float = 2 * math.pi / 3
    # bench
    warmup_iters: int = 20
    measure_iters: int = 200
    # gradcheck
    gradcheck_shape: tuple = (1, 8, 6, 6)

    def __post_init__(self):
        validate(self)

    @property
    def dtype(self):
        import numpy as np

        return np.float64 if self.precision == "f64" else np.float32

    def ffr_config(self):
        from .ffr import FfrConfig

        return FfrConfig(
            channels=self.channels, hidden=self.hidden, heads=self.heads, ffn_dim=self.ffn_dim,
            variant=self.ffr_variant, fusion_block=self.fusion_block, inject_s1=self.inject_s1,
            esfc_stage=self.esfc_stage,
            experts=self.experts, n_blocks=self.n_blocks, e=self.e, r=self.r,
            fuse_1x1=self.fuse_1x1, high_band_init=self.high_band_init, eca_b=self.eca_b,
            eca_gamma=self.eca_gamma, ghost_ratio=self.ghost_ratio,
        )

    def with_overrides(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


# section -> {ini key: attribute}
SECTIONS = {
    "run": {"seed": "seed", "shape": "shape", "pipeline": "pipeline", "precision": "precision"},
    "dyfusnet": {"e": "e", "r": "r", "fuse_1x1": "fuse_1x1", "high_band_init": "high_band_init"},
    "esfc": {"experts": "experts", "n_blocks": "n_blocks", "esfc_stage": "esfc_stage",
             "ghost_ratio": "ghost_ratio", "eca_b": "eca_b", "eca_gamma": "eca_gamma"},
    "ffr": {"ffr_variant": "ffr_variant", "fusion_block": "fusion_block", "inject_s1": "inject_s1",
            "channels": "channels", "hidden": "hidden", "heads": "heads", "ffn_dim": "ffn_dim"},
    "spectral": {"band_r1": "band_r1", "band_r2": "band_r2"},
    "bench": {"warmup_iters": "warmup_iters", "measure_iters": "measure_iters"},
    "gradcheck": {"shape": "gradcheck_shape"},
}

_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _parse_value(attr, key, raw):
    kind = _TYPES[attr]
    text = raw.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is tuple:
            return tuple(int(t) for t in text.replace(",", " ").replace("x", " ").split())
        if kind is int:
            return int(text, 0)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key} = {raw!r} is not a valid {kind.__name__}", key=key) from None


def _need(cond, key, msg):
    if not cond:
        raise ConfigError(f"{key}: {msg}", key=key)


def validate(c):
    from .esfc import STAGES
    from .ffr import FUSION_BLOCKS, VARIANTS

    _need(0 <= c.seed < 2 ** 64, "seed", f"{c.seed} outside unsigned 64-bit range")
    _need(len(c.shape) == 4 and min(c.shape) >= 1, "shape", f"need four positive extents, got {c.shape}")
    _need(c.pipeline in PIPELINES, "pipeline", f"{c.pipeline!r} not in {PIPELINES}")
    _need(c.precision in PRECISIONS, "precision", f"{c.precision!r} not in {PRECISIONS}")
    _need(0.0 < c.e <= 1.0, "e", f"split ratio {c.e} outside (0, 1]")
    _need(c.r >= 1, "r", f"reduction ratio {c.r} must be >= 1")
    _need(c.high_band_init in ("laplacian", "random"), "high_band_init",
          f"{c.high_band_init!r} not in (laplacian, random)")
    _need(c.experts >= 2, "experts", f"{c.experts} must be >= 2")
    _need(c.n_blocks >= 0, "n_blocks", f"{c.n_blocks} must be >= 0")
    _need(c.esfc_stage in STAGES + ("none",), "esfc_stage", f"{c.esfc_stage!r} not in {STAGES + ('none',)}")
    _need(c.ghost_ratio == 0.5, "ghost_ratio", f"{c.ghost_ratio}; only 0.5 is supported")
    _need(c.eca_gamma > 0, "eca_gamma", f"{c.eca_gamma} must be > 0")
    _need(c.ffr_variant in VARIANTS, "ffr_variant", f"{c.ffr_variant!r} not in {VARIANTS}")
    _need(c.fusion_block in FUSION_BLOCKS, "fusion_block", f"{c.fusion_block!r} not in {FUSION_BLOCKS}")
    _need(len(c.channels) == 5 and min(c.channels) >= 1, "channels",
          f"need five positive widths, got {c.channels}")
    _need(c.heads >= 1 and c.hidden % c.heads == 0, "heads",
          f"embed dim {c.hidden} not divisible by {c.heads}")
    _need(c.hidden % 4 == 0, "hidden", f"{c.hidden} must be a multiple of 4")
    _need(c.ffn_dim >= 1, "ffn_dim", f"{c.ffn_dim} must be >= 1")
    _need(0 < c.band_r1 < c.band_r2, "band_r1", f"need 0 < band_r1 < band_r2, got {c.band_r1}, {c.band_r2}")
    _need(c.warmup_iters >= 0, "warmup_iters", f"{c.warmup_iters} must be >= 0")
    _need(c.measure_iters >= 1, "measure_iters", f"{c.measure_iters} must be >= 1")
    _need(len(c.gradcheck_shape) == 4 and min(c.gradcheck_shape) >= 1, "shape",
          f"[gradcheck] shape needs four positive extents, got {c.gradcheck_shape}")
    n, ch, h, w = c.shape
    if c.pipeline == "ffr":
        _need(h % 32 == 0 and w % 32 == 0, "shape", f"ffr needs H, W multiples of 32, got {h}x{w}")
        _need(ch == 3, "shape", f"ffr consumes 3-channel images, got C={ch}")
    else:
        _need(math.floor(c.e * ch + 0.5) >= 1, "e", f"split ratio {c.e} routes no channels of C={ch}")


def parse_config(text, source="<string>"):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}", key="syntax") from None
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", key=section)
        for key, raw in parser.items(section):
            attr = SECTIONS[section].get(key)
            if attr is None:
                raise ConfigError(f"unknown key {key!r} in [{section}]", key=key)
            values[attr] = _parse_value(attr, key, raw)
    return RunConfig(**values)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", key="config") from None
    return parse_config(text, str(path))


def dump_config(c):
    """INI text that :func:`parse_config` maps back to ``c``."""
    out = []
    for section, keys in SECTIONS.items():
        out.append(f"[{section}]")
        for key, attr in keys.items():
            v = getattr(c, attr)
            if isinstance(v, tuple):
                v = " ".join(str(t) for t in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{key} = {v}")
        out.append("")
    return "\n".join(out)
