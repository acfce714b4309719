"""Dense tensors, the primitive-op registry and the gradient tape.

Every primitive is registered as an :class:`Op` with a pure ``forward`` over
numpy arrays and a ``backward`` mapping the output cotangent to input
cotangents. :func:`apply` runs a forward and, when a :class:`GradTape` is
active on the current context, appends a node to it.
"""
from __future__ import annotations

import contextvars
import itertools
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import instrument
from .errors import ContractError, ShapeError

_ids = itertools.count()
_FLOAT_TYPES = (np.float32, np.float64)


class Tensor:
    """Thin wrapper over a contiguous float32/float64 ndarray.

    Layout is batch-channel-height-width for rank 4. Rank 3 appears only for
    token sequences inside attention. A zero extent is tolerated on axis 1
    (the empty half of a degenerate channel split).
    """

    __slots__ = ("data", "tid")
    __array_priority__ = 100

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _FLOAT_TYPES:
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim > 4:
            raise ShapeError(f"rank {arr.ndim} tensors are not supported")
        for axis, extent in enumerate(arr.shape):
            if extent < 1 and not (axis == 1 and arr.ndim >= 2):
                raise ShapeError(f"extent {extent} on axis {axis} in shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.tid = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype))

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def __len__(self):
        return self.shape[0]

    # Arithmetic sugar; the real work lives in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def sum(self):
        from . import ops
        return ops.sum_all(self)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        if dtype is not None and x.dtype != dtype:
            return Tensor(x.data.astype(dtype))
        return x
    return Tensor(x, dtype=dtype)


@dataclass(frozen=True)
class Op:
    name: str
    forward: Callable[..., tuple[np.ndarray, Any]]
    backward: Callable[[Any, np.ndarray], tuple]
    macs: Callable[..., int] | None = None


OPS: dict[str, Op] = {}


def register_op(name, forward, backward, macs=None):
    """Add a primitive to the registry; returns the :class:`Op`."""
    op = Op(name, forward, backward, macs)
    OPS[name] = op
    return op


_ACTIVE_TAPE: contextvars.ContextVar["GradTape | None"] = contextvars.ContextVar(
    "freqsem_tape", default=None
)


def apply(name, *inputs, **params):
    op = OPS[name]
    tensors = [as_tensor(t) for t in inputs]
    out, ctx = op.forward(*(t.data for t in tensors), **params)
    result = Tensor(out)
    if instrument.active():
        macs = op.macs(*(t.data for t in tensors), **params) if op.macs else 0
        instrument.note(macs, result.data.nbytes)
    tape = _ACTIVE_TAPE.get()
    if tape is not None:
        tape._record(name, tensors, params, result, ctx)
    return result


@dataclass
class TapeNode:
    op: str
    inputs: tuple[int, ...]
    params: dict
    output: int
    ctx: Any = field(repr=False)


class GradTape:
    """Records primitive applications for reverse-mode differentiation.

    Single-stream: use one tape per thread of execution.

    >>> with GradTape() as tape:
    ...     y = ops.sum_all(ops.sigmoid(x))
    >>> (gx,) = tape.gradient(y, [x])
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.values: dict[int, np.ndarray] = {}
        self._token = None

    def __enter__(self):
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    def _record(self, name, inputs, params, output, ctx):
        for t in inputs:
            self.values.setdefault(t.tid, t.data)
        self.values[output.tid] = output.data
        self.nodes.append(
            TapeNode(name, tuple(t.tid for t in inputs), dict(params), output.tid, ctx)
        )

    def gradient(self, target, sources):
        """Cotangents of scalar ``target`` with respect to each source tensor."""
        if target.size != 1:
            raise ContractError(f"gradient needs a scalar target, got shape {target.shape}")
        grads = {target.tid: np.ones_like(target.data)}
        for node in reversed(self.nodes):
            g = grads.get(node.output)
            if g is None:
                continue
            in_grads = OPS[node.op].backward(node.ctx, g)
            for tid, gi in zip(node.inputs, in_grads):
                if gi is None:
                    continue
                if tid in grads:
                    grads[tid] = grads[tid] + gi
                else:
                    grads[tid] = gi
        return [grads.get(s.tid, np.zeros_like(s.data)) for s in sources]

    def leaves(self):
        produced = {n.output for n in self.nodes}
        return [tid for tid in self.values if tid not in produced]

    def replay(self):
        """Re-run every node from the recorded leaf values."""
        vals = {tid: self.values[tid] for tid in self.leaves()}
        for node in self.nodes:
            out, _ = OPS[node.op].forward(*(vals[i] for i in node.inputs), **node.params)
            vals[node.output] = out
        return vals

    def replay_matches(self):
        """True when replay reproduces every recorded output bit for bit."""
        vals = self.replay()
        return all(
            vals[n.output].dtype == self.values[n.output].dtype
            and vals[n.output].tobytes() == self.values[n.output].tobytes()
            for n in self.nodes
        )
