"""Latency harness: spatial band proxies versus an explicit FFT band split.

Both paths receive the same input and the same band weights. The proxy path
is ``dmsd_forward``; the baseline transforms every plane, applies three
radial masks, inverts each band and recombines with the gate's weights.
"""
from __future__ import annotations

import csv
import ctypes
import ctypes.util
import gc
import io
import time
import tracemalloc
from dataclasses import dataclass, field

import numpy as np

from . import _backend, instrument, spectral
from .dyfusnet import dmsd_alpha, dmsd_bands, dmsd_forward, init_dmsd, mix_bands
from .errors import ContractError, ShapeError
from .flops import count_flops_params, dmsd_cost
from .tensor import Tensor

# a whole-call measurement should span at least this many timer ticks
MIN_TICKS = 1000

# glibc mallopt parameters
_M_TRIM_THRESHOLD, _M_MMAP_THRESHOLD = -1, -3


def pin_allocator():
    """Fix glibc's mmap and trim thresholds for the rest of the process.

    With the default dynamic thresholds, large temporaries switch between
    mmap-backed and heap-backed storage partway through a run. The page-fault
    phases that follow move the median by over 50% from run to run.
    Returns the setting recorded in the report.
    """
    try:
        mallopt = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6").mallopt
    except (OSError, AttributeError):
        return "platform default"
    if mallopt(_M_MMAP_THRESHOLD, 32 << 20) and mallopt(_M_TRIM_THRESHOLD, 256 << 20):
        return "glibc thresholds pinned (mmap 32 MiB, trim 256 MiB)"
    return "platform default"


@dataclass
class PathRow:
    path: str
    median_us: float
    p95_us: float
    min_us: float
    macs: int
    macs_analytic: int
    allocs: int
    alloc_bytes: int
    peak_bytes: int

    @property
    def macs_match(self):
        return self.macs == self.macs_analytic


@dataclass
class BenchReport:
    shape: tuple
    warmup_iters: int
    measure_iters: int
    backend: str
    parallelism: str
    allocator: str
    rows: list
    band_energy: dict
    timer_resolution_ns: float
    warnings: list = field(default_factory=list)

    COLUMNS = ("path", "median_us", "p95_us", "min_us", "macs", "macs_analytic", "macs_match",
               "allocs", "alloc_bytes", "peak_bytes")

    def row(self, path):
        for r in self.rows:
            if r.path == path:
                return r
        raise KeyError(path)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([r.path, f"{r.median_us:.3f}", f"{r.p95_us:.3f}", f"{r.min_us:.3f}", r.macs,
                        r.macs_analytic, int(r.macs_match), r.allocs, r.alloc_bytes, r.peak_bytes])
        return buf.getvalue()

    def crosscheck_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("band", "dmsd_energy", "dmsd_fraction", "fft_energy", "fft_fraction"))
        for band in ("low", "mid", "high"):
            d, f = self.band_energy["dmsd"][band], self.band_energy["fft"][band]
            w.writerow((band, f"{d[0]:.9g}", f"{d[1]:.6f}", f"{f[0]:.9g}", f"{f[1]:.6f}"))
        return buf.getvalue()

    def to_text(self):
        n, c, h, wd = self.shape
        out = [f"# bench input={n}x{c}x{h}x{wd} warmup={self.warmup_iters} "
               f"measure={self.measure_iters} backend={self.backend} parallelism={self.parallelism}",
               f"# allocator: {self.allocator}",
               f"{'path':<16}{'median_us':>12}{'p95_us':>12}{'min_us':>12}{'MACs':>12}"
               f"{'analytic':>12}{'allocs':>8}{'peak_bytes':>12}"]
        for r in self.rows:
            out.append(f"{r.path:<16}{r.median_us:>12.1f}{r.p95_us:>12.1f}{r.min_us:>12.1f}"
                       f"{r.macs:>12}{r.macs_analytic:>12}{r.allocs:>8}{r.peak_bytes:>12}")
        fast = min(self.rows, key=lambda r: r.median_us)
        slow = max(self.rows, key=lambda r: r.median_us)
        out.append(f"# ordering (informative): {fast.path} faster by "
                   f"{slow.median_us / max(fast.median_us, 1e-9):.2f}x on this host")
        out.append("# cross-check: per-band energy (sum of squares) and share of the band total")
        out.append(f"{'band':<8}{'dmsd':>14}{'share':>9}{'fft':>14}{'share':>9}")
        for band in ("low", "mid", "high"):
            d, f = self.band_energy["dmsd"][band], self.band_energy["fft"][band]
            out.append(f"{band:<8}{d[0]:>14.6g}{d[1]:>9.4f}{f[0]:>14.6g}{f[1]:>9.4f}")
        out.extend(f"# warning: {msg}" for msg in self.warnings)
        return "\n".join(out) + "\n"


def _energies(bands):
    e = [float(np.square(b.data.astype(np.float64)).sum()) for b in bands]
    total = sum(e) or 1.0
    return {name: (v, v / total) for name, v in zip(("low", "mid", "high"), e)}


def fft_path(x, p, masks):
    """Explicit-transform counterpart: FFT band split recombined with the DMSD gate's weights."""
    alpha = dmsd_alpha(x, p)
    return mix_bands(spectral.band_split_fft(x, masks), alpha)


def fft_path_macs(p, shape):
    """Gate MACs (shared with the proxy path) plus the transforms; masking and mixing are free."""
    total, _ = dmsd_cost(p, shape)
    conv, _ = count_flops_params(p.high_band, shape)
    return total - conv + spectral.fft_band_split_macs(shape)


def _time(fns, warmup, iters):
    """Per-call microseconds for each of ``fns``, sampled round-robin.

    Interleaving spreads every path's samples over the whole measurement
    window, so slow phases of the host hit all paths alike instead of
    landing on whichever path happened to be running.
    """
    for _ in range(warmup):
        for fn in fns:
            fn()
    samples = np.empty((len(fns), iters))
    enabled = gc.isenabled()
    gc.disable()
    try:
        for i in range(iters):
            for k, fn in enumerate(fns):
                t0 = time.perf_counter_ns()
                fn()
                samples[k, i] = time.perf_counter_ns() - t0
    finally:
        if enabled:
            gc.enable()
    return samples / 1000.0


def _footprint(fn):
    """Instrumented MACs and allocations of one call, plus its tracemalloc peak."""
    with instrument.counting() as counters:
        fn()
    tracemalloc.start()
    try:
        fn()
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return counters, int(peak)


def _row(path, us, counters, peak, analytic):
    return PathRow(path, float(np.median(us)), float(np.percentile(us, 95)), float(us.min()),
                   counters.macs, analytic, counters.allocs, counters.alloc_bytes, peak)


def run_bench(shape=(1, 16, 64, 64), seed=0, warmup_iters=20, measure_iters=200,
              r1=np.pi / 3, r2=2 * np.pi / 3, high_band_init="laplacian"):
    """Benchmark both paths on one seeded f32 input and return a :class:`BenchReport`."""
    n, c, h, w = shape
    if not (spectral._is_pow2(h) and spectral._is_pow2(w)):
        raise ShapeError(f"bench needs power-of-two extents, got {h}x{w}")
    if measure_iters < 1:
        raise ContractError("measure_iters must be >= 1")
    allocator = pin_allocator()
    rng = np.random.default_rng(seed)
    p = init_dmsd(rng, c, high_band_init)
    x = Tensor(rng.standard_normal(shape).astype(np.float32))
    masks = spectral.band_masks(h, w, r1, r2)

    paths = {"dmsd": (lambda: dmsd_forward(x, p), count_flops_params(p, shape)[0]),
             "fft_band_split": (lambda: fft_path(x, p, masks), fft_path_macs(p, shape))}
    footprints = {name: _footprint(fn) for name, (fn, _) in paths.items()}
    timings = _time([fn for fn, _ in paths.values()], warmup_iters, measure_iters)
    rows = [_row(name, us, *footprints[name], analytic)
            for (name, (_, analytic)), us in zip(paths.items(), timings)]
    energy = {"dmsd": _energies(dmsd_bands(x, p)), "fft": _energies(spectral.band_split_fft(x, masks))}

    res = time.get_clock_info("perf_counter").resolution * 1e9
    warnings = []
    for row in rows:
        if row.min_us * 1000.0 < MIN_TICKS * res:
            warnings.append(f"{row.path}: min {row.min_us:.3f} us is under {MIN_TICKS} timer ticks "
                            f"({res:.0f} ns each); enlarge extents or iterations")
        if not row.macs_match:
            warnings.append(f"{row.path}: instrumented MACs {row.macs} != analytic {row.macs_analytic}")
    return BenchReport(tuple(shape), warmup_iters, measure_iters, _backend.name(),
                       "disabled (single stream)", allocator, rows, energy, res, warnings)
