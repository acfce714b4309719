import os
import subprocess
import sys

import numpy as np
import pytest

from freqsem import _backend, ops
from freqsem.esfc import esfc_apply, init_esfc

pytestmark = pytest.mark.skipif("cython" not in _backend.BACKENDS, reason="extension not built")


def both(fn):
    out = {}
    prev = _backend.use("python")
    try:
        for name in ("python", "cython"):
            _backend.use(name)
            out[name] = fn()
    finally:
        _backend.use(prev)
    return out["python"], out["cython"]


def close(a, b, tol):
    a = np.asarray(getattr(a, "data", a), np.float64)
    b = np.asarray(getattr(b, "data", b), np.float64)
    return a.shape == b.shape and np.max(np.abs(a - b)) <= tol * max(1.0, np.max(np.abs(a)))


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-6), (np.float64, 1e-12)])
def test_conv_variants_agree(rng, dtype, tol):
    for _ in range(60):
        groups = int(rng.choice([1, 2, 4]))
        cin, cout = groups * int(rng.integers(1, 4)), groups * int(rng.integers(1, 4))
        k = int(rng.choice([1, 3, 5, 7]))
        stride = int(rng.integers(1, 3))
        pad = str(rng.choice(["zero", "replicate"]))
        h, w = (int(v) for v in rng.integers(1, 12, 2))
        x = rng.standard_normal((2, cin, h, w)).astype(dtype)
        wt = rng.standard_normal((cout, cin // groups, k, k)).astype(dtype)
        b = rng.standard_normal(cout).astype(dtype)
        a, c = both(lambda: ops.conv2d_raw(x, wt, b, stride, groups, pad))
        assert close(a, c, tol), (groups, k, stride, pad, h, w)


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-6), (np.float64, 1e-12)])
def test_pools_agree(rng, dtype, tol):
    for _ in range(60):
        k = int(rng.choice([1, 3, 5]))
        stride = int(rng.integers(1, 3))
        pad = str(rng.choice(["zero", "replicate"]))
        x = rng.standard_normal((1, 3, *(int(v) for v in rng.integers(1, 10, 2)))).astype(dtype)
        for fn in (ops.avg_pool2d, ops.max_pool2d):
            a, c = both(lambda: fn(x, k, stride, pad))
            assert close(a, c, tol)


def test_module_forward_agrees(rng):
    m = init_esfc(rng, 8)
    x = rng.standard_normal((2, 8, 7, 9)).astype(np.float32)
    a, c = both(lambda: esfc_apply(x, m))
    assert close(a, c, 1e-6)


def test_environment_forces_fallback():
    env = dict(os.environ, FREQSEM_BACKEND="python")
    code = "from freqsem import _backend; print(_backend.name())"
    r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert r.stdout.strip() == "python"
    env["FREQSEM_BACKEND"] = "auto"
    r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert r.stdout.strip() == "cython"


def test_unknown_backend():
    with pytest.raises(KeyError):
        _backend.use("fortran")
