"""Opt-in counters for multiply-accumulates and buffer allocations.

Only multiply-accumulate style primitives (convolutions, linear maps, matrix
products, butterflies) contribute MACs. Pooling, elementwise gating and
reductions contribute allocations but no MACs.
"""
from __future__ import annotations

import contextvars
from contextlib import contextmanager
from dataclasses import dataclass

_ACTIVE: contextvars.ContextVar["Counters | None"] = contextvars.ContextVar(
    "freqsem_counters", default=None
)


@dataclass
class Counters:
    macs: int = 0
    allocs: int = 0
    alloc_bytes: int = 0


@contextmanager
def counting():
    counters = Counters()
    token = _ACTIVE.set(counters)
    try:
        yield counters
    finally:
        _ACTIVE.reset(token)


def note(macs=0, nbytes=None, count=1):
    """Record ``macs`` MACs and, if ``nbytes`` is given, ``count`` buffers totalling it."""
    c = _ACTIVE.get()
    if c is None:
        return
    c.macs += int(macs)
    if nbytes is not None:
        c.allocs += count
        c.alloc_bytes += int(nbytes)


def active():
    return _ACTIVE.get() is not None
