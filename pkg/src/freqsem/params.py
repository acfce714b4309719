"""Parameter containers and tree utilities.

Every learned quantity lives in a frozen dataclass whose leaves are
:class:`~freqsem.tensor.Tensor` objects. :func:`named_tensors` flattens any
such tree (dataclasses, lists, tuples and dicts nest freely) into dotted
names; :func:`replace_tensors` rebuilds it with new leaves. Gradient checks,
dtype casts and weight files all go through these two functions.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, as_tensor


@dataclass(frozen=True)
class ConvSpec:
    """Convolution hyperparameters plus weight [Cout, Cin/groups, kh, kw]."""

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    weight: Tensor
    bias: Tensor | None = None
    stride: int = 1
    groups: int = 1
    padding_mode: str = "zero"

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.stride, self.groups) < 1:
            raise ConfigError(f"non-positive count in {self.describe()}", key="conv")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError(
                f"groups={self.groups} must divide in={self.in_channels} and out={self.out_channels}",
                key="groups",
            )
        if self.kernel_h % 2 == 0 or self.kernel_w % 2 == 0:
            raise ConfigError(f"kernel {self.kernel_h}x{self.kernel_w} must be odd", key="kernel")
        if self.padding_mode not in ("zero", "replicate"):
            raise ConfigError(f"padding_mode {self.padding_mode!r}", key="padding_mode")
        object.__setattr__(self, "weight", as_tensor(self.weight))
        want = (self.out_channels, self.in_channels // self.groups, self.kernel_h, self.kernel_w)
        if self.weight.shape != want:
            raise ShapeError(f"conv weight {self.weight.shape}, expected {want}")
        if self.bias is not None:
            object.__setattr__(self, "bias", as_tensor(self.bias))
            if self.bias.shape != (self.out_channels,):
                raise ShapeError(f"conv bias {self.bias.shape}, expected ({self.out_channels},)")

    @property
    def depthwise(self):
        return self.groups == self.in_channels == self.out_channels

    def describe(self):
        return (f"conv {self.in_channels}->{self.out_channels} "
                f"{self.kernel_h}x{self.kernel_w}/s{self.stride} g{self.groups}")


def conv_spec(weight, bias=None, stride=1, groups=1, padding_mode="zero"):
    """Build a :class:`ConvSpec` with channel counts read off ``weight``."""
    w = as_tensor(weight)
    cout, cig, kh, kw = w.shape
    return ConvSpec(cig * groups, cout, kh, kw, w, bias, stride, groups, padding_mode)


# ---------------------------------------------------------------- trees

def _children(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return [(f.name, getattr(obj, f.name)) for f in dataclasses.fields(obj)]
    if isinstance(obj, (list, tuple)):
        return [(str(i), v) for i, v in enumerate(obj)]
    if isinstance(obj, dict):
        return list(obj.items())
    return []


def named_tensors(obj, prefix=""):
    """Ordered ``{dotted.name: Tensor}`` for every tensor leaf in ``obj``."""
    if isinstance(obj, (Tensor, np.ndarray)):
        return {prefix: as_tensor(obj)}
    out = {}
    for key, child in _children(obj):
        name = f"{prefix}.{key}" if prefix else str(key)
        out.update(named_tensors(child, name))
    return out


def replace_tensors(obj, mapping, prefix=""):
    """Copy of ``obj`` with each leaf named in ``mapping`` swapped in."""
    if isinstance(obj, (Tensor, np.ndarray)):
        if prefix in mapping:
            new = as_tensor(mapping[prefix])
            if new.shape != obj.shape:
                raise ShapeError(f"{prefix}: shape {new.shape} != {obj.shape}")
            return new
        return obj
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        changes = {}
        for f in dataclasses.fields(obj):
            name = f"{prefix}.{f.name}" if prefix else f.name
            old = getattr(obj, f.name)
            new = replace_tensors(old, mapping, name)
            if new is not old:
                changes[f.name] = new
        return dataclasses.replace(obj, **changes) if changes else obj
    if isinstance(obj, (list, tuple)):
        items = [replace_tensors(v, mapping, f"{prefix}.{i}" if prefix else str(i))
                 for i, v in enumerate(obj)]
        if all(a is b for a, b in zip(items, obj)):
            return obj
        return type(obj)(items)
    if isinstance(obj, dict):
        return {k: replace_tensors(v, mapping, f"{prefix}.{k}" if prefix else str(k))
                for k, v in obj.items()}
    return obj


def cast(obj, dtype):
    """Same tree with every leaf converted to ``dtype``."""
    return replace_tensors(obj, {k: t.data.astype(dtype) for k, t in named_tensors(obj).items()})


def count_params(obj):
    return sum(t.size for t in named_tensors(obj).values())


# ---------------------------------------------------------------- init

def uniform_fan_in(rng, shape, fan_in, dtype=np.float32):
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the default for every learned kernel."""
    bound = 1.0 / math.sqrt(max(1, fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype))


def init_conv(rng, cin, cout, k, *, groups=1, stride=1, bias=False,
              padding_mode="zero", dtype=np.float32):
    fan_in = (cin // groups) * k * k
    w = uniform_fan_in(rng, (cout, cin // groups, k, k), fan_in, dtype)
    b = Tensor(np.zeros(cout, dtype=dtype)) if bias else None
    return ConvSpec(cin, cout, k, k, w, b, stride, groups, padding_mode)


def identity_conv1x1(channels, dtype=np.float64):
    return ConvSpec(channels, channels, 1, 1,
                    Tensor(np.eye(channels, dtype=dtype).reshape(channels, channels, 1, 1)))


def zero_conv(cin, cout, k, groups=1, dtype=np.float64):
    return ConvSpec(cin, cout, k, k, Tensor(np.zeros((cout, cin // groups, k, k), dtype=dtype)),
                    groups=groups)
