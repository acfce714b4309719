"""``freqsem`` command-line driver.

Exit codes: 0 ok, 2 configuration error, 3 contract or shape violation,
4 numeric failure (non-finite values, failed gradient checks).
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import bench, gradsuite, pipeline, spectral
from .config import RunConfig, load_config
from .dyfusnet import dmsd_band_response, init_dmsd
from .errors import ConfigError, ContractError, IntegrityError, NumericError, ShapeError
from .weights import dump_tensor, load_weights, save_weights

EXIT_OK, EXIT_CONFIG, EXIT_CONTRACT, EXIT_NUMERIC = 0, 2, 3, 4


def _seed(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed {v} outside unsigned 64-bit range")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration (defaults apply when omitted)")
    common.add_argument("--weights", help="weight manifest JSON to load (init: to write)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=_seed, help="override [run] seed")
    common.add_argument("--precision", choices=("f32", "f64"), help="override [run] precision")

    parser = argparse.ArgumentParser(prog="freqsem", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("forward", parents=[common], help="run the configured module on a seeded input")
    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient table")
    g.add_argument("--modules", help="comma list overriding the pipeline's suite, or 'all'")
    sub.add_parser("bench", parents=[common], help="band proxies vs FFT band split")
    f = sub.add_parser("freqresp", parents=[common], help="band transfer magnitudes as CSV")
    f.add_argument("--grid", type=int, default=33, help="samples per axis over [-pi, pi]")
    sub.add_parser("shapes", parents=[common], help="per-level shape and cost table")
    sub.add_parser("init", parents=[common], help="write seeded weights")
    return parser


def _load(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(seed=args.seed, precision=args.precision)


def _weights(cfg, args):
    tree = pipeline.init_weights(cfg)
    if args.weights:
        tree = load_weights(args.weights, tree, cfg.dtype)
    return tree


def _write(out, name, text):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def cmd_forward(cfg, args, out):
    tree = _weights(cfg, args)
    outputs = pipeline.forward(cfg, tree, pipeline.make_input(cfg))
    bad = [tag for tag, t in outputs.items() if not np.all(np.isfinite(t.data))]
    if bad:
        raise NumericError(f"non-finite values in outputs {bad}")
    for tag, t in outputs.items():
        _write(out, f"{tag}.txt", dump_tensor(t))
    report = pipeline.report(cfg, tree)
    _write(out, "shapes.txt", report + "\n")
    print(report)
    print("# outputs: " + " ".join(f"{tag}={'x'.join(map(str, t.shape))}" for tag, t in outputs.items()))
    return EXIT_OK


def cmd_gradcheck(cfg, args, out):
    cfg = cfg.with_overrides(precision="f64")
    modules = None
    if args.modules:
        modules = gradsuite.MODULES if args.modules == "all" else tuple(args.modules.split(","))
        unknown = [m for m in modules if m not in gradsuite.MODULES]
        if unknown:
            raise ConfigError(f"unknown modules {unknown}; choose from {gradsuite.MODULES}", key="modules")
    rows = gradsuite.run_suite(cfg, modules, cfg.seed)
    text = gradsuite.format_rows(rows)
    _write(out, "gradcheck.txt", text)
    print(text, end="")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_NUMERIC


def cmd_bench(cfg, args, out):
    rep = bench.run_bench(cfg.shape, cfg.seed, cfg.warmup_iters, cfg.measure_iters,
                          cfg.band_r1, cfg.band_r2, cfg.high_band_init)
    _write(out, "bench.csv", rep.to_csv())
    _write(out, "bench_crosscheck.csv", rep.crosscheck_csv())
    _write(out, "bench.txt", rep.to_text())
    print(rep.to_text(), end="")
    return EXIT_OK


def cmd_freqresp(cfg, args, out):
    if args.grid < 2:
        raise ConfigError(f"grid must be >= 2, got {args.grid}", key="grid")
    p = init_dmsd(np.random.default_rng(cfg.seed), 1, cfg.high_band_init)
    maps = {band: dmsd_band_response(p, band, args.grid) for band in ("low", "mid", "high")}
    w = spectral.frequency_grid(args.grid)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "freqresp.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(("w1", "w2", "low", "mid", "high"))
        for i in range(args.grid):
            for j in range(args.grid):
                wr.writerow([f"{w[i]:.9g}", f"{w[j]:.9g}"] + [f"{maps[b][i, j]:.12g}" for b in maps])
    c = args.grid // 2
    print(f"# grid={args.grid} written {out / 'freqresp.csv'}")
    for band, m in maps.items():
        print(f"{band:<5} dc={m[c, c]:.6f} corner={m[0, 0]:.6f} max={m.max():.6f}")
    return EXIT_OK


def cmd_shapes(cfg, args, out):
    tree = _weights(cfg, args)
    report = pipeline.report(cfg, tree)
    _write(out, "shapes.txt", report + "\n")
    print(report)
    return EXIT_OK


def cmd_init(cfg, args, out):
    tree = pipeline.init_weights(cfg)
    path = Path(args.weights) if args.weights else out / "weights.json"
    manifest = save_weights(tree, path)
    print(f"# wrote {len(manifest.entries)} tensors, {manifest.total_bytes} bytes -> {path}")
    return EXIT_OK


COMMANDS = {"forward": cmd_forward, "gradcheck": cmd_gradcheck, "bench": cmd_bench,
            "freqresp": cmd_freqresp, "shapes": cmd_shapes, "init": cmd_init}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        return COMMANDS[args.command](cfg, args, Path(args.out))
    except ConfigError as exc:
        key = f" [key: {exc.key}]" if exc.key else ""
        print(f"config error{key}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ShapeError, ContractError, IntegrityError) as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
