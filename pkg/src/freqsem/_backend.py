"""Kernel backend selection.

The compiled extension is preferred at import. Set ``FREQSEM_BACKEND=python``
to force the numpy fallback, or call :func:`use` at runtime (tests and the
backend benchmark do this).
"""
import os
import warnings

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _fallback}
if _compiled is not None:
    BACKENDS["cython"] = _compiled


def _initial():
    want = os.environ.get("FREQSEM_BACKEND", "auto")
    if want == "auto":
        return BACKENDS.get("cython", _fallback)
    if want not in BACKENDS:
        warnings.warn(f"backend {want!r} unavailable, using numpy fallback", RuntimeWarning)
        return _fallback
    return BACKENDS[want]


kernels = _initial()


def use(name):
    """Switch the active backend; returns the previous backend name."""
    global kernels
    prev = kernels.NAME
    if name not in BACKENDS:
        raise KeyError(f"backend {name!r} not available (have {sorted(BACKENDS)})")
    kernels = BACKENDS[name]
    return prev


def name():
    return kernels.NAME
