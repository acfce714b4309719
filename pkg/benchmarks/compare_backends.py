"""Time the compiled kernels against the numpy fallback.

    python benchmarks/compare_backends.py [--iters N]

Both backends run round-robin on identical inputs so slow host phases hit
them equally; the ratio column is fallback median / compiled median.
"""
import argparse
import time

import numpy as np

from freqsem import _backend, ops
from freqsem.dyfusnet import dmsd_forward, init_dmsd


def cases(rng):
    x = rng.standard_normal((1, 16, 64, 64)).astype(np.float32)
    w3 = rng.standard_normal((16, 16, 3, 3)).astype(np.float32)
    dw = rng.standard_normal((16, 1, 3, 3)).astype(np.float32)
    p = init_dmsd(rng, 16)
    return {
        "conv2d 3x3": lambda: ops.conv2d_raw(x, w3),
        "conv2d depthwise": lambda: ops.conv2d_raw(x, dw, groups=16, padding="replicate"),
        "avg_pool2d 3x3": lambda: ops.avg_pool2d(x, 3),
        "max_pool2d 3x3": lambda: ops.max_pool2d(x, 3),
        "dmsd forward": lambda: dmsd_forward(x, p),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iters", type=int, default=50)
    ap.add_argument("--warmup", type=int, default=5)
    args = ap.parse_args(argv)
    if "cython" not in _backend.BACKENDS:
        raise SystemExit("compiled extension not built; run pip install -e . --no-build-isolation")
    names = ("cython", "python")
    prev = _backend.name()
    print(f"{'kernel':<18} {'cython_us':>10} {'python_us':>10} {'ratio':>7}")
    try:
        for label, fn in cases(np.random.default_rng(0)).items():
            us = {n: [] for n in names}
            for i in range(args.warmup + args.iters):
                for n in names:
                    _backend.use(n)
                    t0 = time.perf_counter()
                    fn()
                    if i >= args.warmup:
                        us[n].append((time.perf_counter() - t0) * 1e6)
            c, p = (float(np.median(us[n])) for n in names)
            print(f"{label:<18} {c:>10.0f} {p:>10.0f} {p / c:>7.2f}")
    finally:
        _backend.use(prev)


if __name__ == "__main__":
    main()
