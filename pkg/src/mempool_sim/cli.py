"""Command-line experiment runner.

Subcommands: sweep-network, sweep-scramble, dma-util, kernel,
icache-sim, double-buffer.  Every run is deterministic for a given
--seed; re-running writes byte-identical CSV.  --plot renders a figure
next to the CSV.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 internal
invariant violation.
"""

import argparse
import sys

from . import experiments
from .configfile import load_config
from .engine import ConservationError, DrainTimeout
from .geometry import ConfigError
from .icache import VARIANTS, FetchTrace
from .pe import KERNEL_PRESETS
from .topology import UnsupportedGeometry

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INTERNAL = 4


def _floats(raw):
    return [float(x) for x in raw.split(",") if x.strip()]


def _ints(raw):
    return [int(x, 0) for x in raw.split(",") if x.strip()]


def _common(sub):
    sub.add_argument("--config", metavar="PATH",
                     help="INI config file ([geometry]/[timing]/[workload]/[sweep])")
    sub.add_argument("--seed", type=int, default=experiments.DEFAULT_SEED,
                     help="experiment seed (default %(default)s)")
    sub.add_argument("--out", metavar="PATH", default="-",
                     help="output CSV path ('-' for stdout)")
    sub.add_argument("--jobs", type=int, default=1,
                     help="concurrent sweep-point workers")
    sub.add_argument("--plot", action="store_true",
                     help="also render a PNG figure next to the CSV")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mempool-sim",
        description="Cycle-level simulator of a shared-L1 manycore cluster")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("sweep-network", help="throughput/latency vs load")
    _common(p)
    p.add_argument("--topology", choices=("one", "four", "hybrid"),
                   default="hybrid")
    p.add_argument("--loads", type=_floats, metavar="L1,L2,...",
                   help="injected-load sweep points")
    p.add_argument("--warmup", type=int, help="override warmup cycles")
    p.add_argument("--window", type=int, help="override measurement window")

    p = subs.add_parser("sweep-scramble",
                        help="hybrid addressing benefit vs p_local")
    _common(p)
    p.add_argument("--loads", type=_floats, metavar="L1,L2,...")
    p.add_argument("--p-locals", type=_floats, metavar="P1,P2,...",
                   dest="p_locals")
    p.add_argument("--warmup", type=int)
    p.add_argument("--window", type=int)

    p = subs.add_parser("dma-util", help="system-bus utilization vs size")
    _common(p)
    p.add_argument("--sizes", type=_ints, metavar="B1,B2,...",
                   help="transfer sizes in bytes")
    p.add_argument("--backends", type=_ints, metavar="N1,N2,...",
                   help="DMA backends per group")

    p = subs.add_parser("kernel", help="kernel access-pattern run")
    _common(p)
    p.add_argument("--preset", choices=sorted(KERNEL_PRESETS), default=None)
    p.add_argument("--topology", choices=("one", "four", "hybrid"),
                   default="hybrid")
    p.add_argument("--iterations", type=int)

    p = subs.add_parser("icache-sim", help="instruction-cache trace replay")
    _common(p)
    p.add_argument("--trace", required=True, metavar="PATH",
                   help="fetch trace: '<pc> [B|J <target>]' per line")
    p.add_argument("--variant", choices=sorted(VARIANTS), action="append",
                   help="cache organization (repeatable; default all)")
    p.add_argument("--cores", type=int, default=1,
                   help="replay the trace on N cores in lockstep")

    p = subs.add_parser("double-buffer", help="double-buffered phase timing")
    _common(p)
    p.add_argument("--preset", choices=sorted(KERNEL_PRESETS), default=None)
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--iterations", type=int)
    return parser


def _sweep_overrides(fc, args):
    if getattr(args, "warmup", None) is not None:
        fc.sweep.warmup = args.warmup
    if getattr(args, "window", None) is not None:
        fc.sweep.window = args.window


def run(args) -> tuple:
    fc = load_config(args.config)
    _sweep_overrides(fc, args)
    if args.command == "sweep-network":
        rows = experiments.run_network_sweep(fc, args.topology, args.seed,
                                             jobs=args.jobs, loads=args.loads)
        return "sweep-network", experiments.NETWORK_COLUMNS, rows
    if args.command == "sweep-scramble":
        rows = experiments.run_scramble_sweep(fc, args.seed, jobs=args.jobs,
                                              loads=args.loads,
                                              p_locals=args.p_locals)
        return "sweep-scramble", experiments.NETWORK_COLUMNS, rows
    if args.command == "dma-util":
        rows = experiments.run_dma_util(fc, args.seed, jobs=args.jobs,
                                        sizes=args.sizes,
                                        backends=args.backends)
        return "dma-util", experiments.DMA_COLUMNS, rows
    if args.command == "kernel":
        preset = args.preset or fc.workload.preset
        rows = experiments.run_kernel(fc, preset, args.seed,
                                      topology=args.topology,
                                      iterations=args.iterations)
        return "kernel", experiments.KERNEL_COLUMNS, rows
    if args.command == "icache-sim":
        trace = FetchTrace.load(args.trace)
        variants = args.variant or sorted(VARIANTS)
        rows = []
        for v in variants:
            rows.extend(experiments.run_icache_sim(trace, v, cores=args.cores))
        return "icache-sim", experiments.ICACHE_COLUMNS, rows
    if args.command == "double-buffer":
        preset = args.preset or fc.workload.preset
        rows = experiments.run_double_buffer(fc, preset, args.seed,
                                             rounds=args.rounds,
                                             iterations=args.iterations)
        return "double-buffer", experiments.DOUBLE_BUFFER_COLUMNS, rows
    raise ValueError(f"unhandled command {args.command}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        experiment, columns, rows = run(args)
    except (ConfigError, UnsupportedGeometry, ValueError) as exc:
        print(f"mempool-sim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"mempool-sim: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConservationError, DrainTimeout, AssertionError) as exc:
        print(f"mempool-sim: internal invariant violation: {exc}",
              file=sys.stderr)
        return EXIT_INTERNAL
    try:
        experiments.write_csv(args.out, experiment, columns, rows)
        if args.plot and args.out != "-":
            from . import plotting

            png = str(args.out)
            png = png[:-4] + ".png" if png.endswith(".csv") else png + ".png"
            plotting.render(experiment, rows, png)
    except OSError as exc:
        print(f"mempool-sim: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
