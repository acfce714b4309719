"""Finite-difference verification of taped reverse-mode gradients."""
from __future__ import annotations

import numpy as np

from .errors import ContractError
from .params import named_tensors, replace_tensors
from .tensor import GradTape, Tensor


def grad_check_report(f, point, eps=1e-5):
    """Per-leaf max relative gradient error of scalar map ``f`` at ``point``.

    ``point`` is any parameter tree; every leaf is promoted to float64 and
    differentiated. The error for one scalar coordinate is
    ``|analytic - numeric| / max(1, |numeric|)`` with the numeric value from
    central differences of step ``eps``. Non-finite gradients score ``inf``.
    """
    leaves = {k: Tensor(t.data.astype(np.float64)) for k, t in named_tensors(point).items()}
    if not leaves:
        raise ContractError("grad_check point has no tensor leaves")
    pt = replace_tensors(point, leaves)
    with GradTape() as tape:
        out = f(pt)
    if not isinstance(out, Tensor) or out.size != 1:
        shape = getattr(out, "shape", type(out).__name__)
        raise ContractError(f"grad_check needs a scalar-valued map, got {shape}")
    names = list(leaves)
    analytic = tape.gradient(out, [leaves[n] for n in names])

    report = {}
    for name, g in zip(names, analytic):
        arr = leaves[name].data
        worst = 0.0
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            fp = f(pt).item()
            arr[idx] = orig - eps
            fm = f(pt).item()
            arr[idx] = orig
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(g[idx] - numeric) / max(1.0, abs(numeric))
            if not np.isfinite(err):
                err = float("inf")
            worst = max(worst, float(err))
        report[name] = worst
    return report


def grad_check(f, point, eps=1e-5):
    """Max relative error over all parameters; see :func:`grad_check_report`."""
    report = grad_check_report(f, point, eps)
    return max(report.values()) if report else 0.0


def weighted_sum_loss(y, seed=0):
    """Scalar probe ``sum(y * r)`` with a fixed random ``r``.

    A plain sum hides errors in normalized outputs (softmax rows always sum
    to one), so checks use a random projection instead.
    """
    from . import ops

    r = np.random.default_rng(seed).standard_normal(y.shape)
    return ops.sum_all(ops.mul(y, Tensor(r.astype(y.dtype))))
