"""Experiment runners: build simulators from configs, execute sweeps
(optionally across worker processes), and emit deterministic CSV.

Every sweep point runs in its own simulator with a seed derived from
the experiment seed and the point index, so results do not depend on
--jobs or completion order; records are emitted in point order and all
floats are formatted with fixed precision, making re-runs byte-identical.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .configfile import FileConfig
from .engine import Simulator
from .geometry import ClusterGeometry, TimingParams, ValidatedConfig, validate
from .icache import VARIANTS, FetchTrace, replay
from .pe import (
    KERNEL_PRESETS,
    KernelDriver,
    TrafficConfig,
    TrafficDriver,
    build_program,
)
from .topology import TopologyKind, build
from .uplink import DmaRequest, L2_BASE, dma_run

DEFAULT_SEED = 20


def point_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(index,))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_csv(path, experiment: str, columns, rows):
    lines = [f"# mempool-sim v{__version__} {experiment}"]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(row.get(c)) for c in columns))
    text = "\n".join(lines) + "\n"
    if path == "-":
        print(text, end="")
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _run_points(worker, points, jobs):
    if jobs <= 1 or len(points) <= 1:
        return [worker(p) for p in points]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, points))


# -- network / scramble sweeps ---------------------------------------------

@dataclass(frozen=True)
class _NetPoint:
    geometry: ClusterGeometry
    timing: TimingParams
    queue_depth: int
    topology: str
    kind: str
    load: float
    p_local: float
    max_outstanding: int
    warmup: int
    window: int
    seed: int
    index: int


def _net_point_worker(pt: _NetPoint) -> dict:
    cfg = validate(pt.geometry, pt.timing, pt.queue_depth)
    net = build(TopologyKind(pt.topology), cfg)
    traffic = TrafficConfig(kind=pt.kind, load=pt.load, p_local=pt.p_local,
                            max_outstanding=pt.max_outstanding)
    seed = point_seed(pt.seed, pt.index)
    driver = TrafficDriver(cfg, traffic, seed)
    sim = Simulator(cfg, net, [driver])
    sim.run(pt.warmup)
    sim.reset_window()
    sim.run(pt.window)
    st = sim.stats
    cores = cfg.total_cores
    denom = cores * pt.window
    row = {
        "topology": pt.topology,
        "load": pt.load,
        "p_local": pt.p_local,
        "throughput": st.completed / denom,
        "offered": driver.generated / denom,
        "injected": st.injected / denom,
        "latency_mean": st.mean_latency(),
        "latency_p50": st.latency_percentile(0.50),
        "latency_p95": st.latency_percentile(0.95),
        "latency_p99": st.latency_percentile(0.99),
        "completed": st.completed,
        "local_tile_latency": st.class_mean_latency(0),
        "local_group_latency": st.class_mean_latency(1),
        "remote_group_latency": st.class_mean_latency(2),
        "bank_conflicts": sum(st.bank_conflicts),
        "warmup": pt.warmup,
        "window": pt.window,
        "seed": pt.seed,
    }
    return row


NETWORK_COLUMNS = ("topology", "load", "p_local", "throughput", "offered",
                   "injected", "latency_mean", "latency_p50", "latency_p95",
                   "latency_p99", "completed", "local_tile_latency",
                   "local_group_latency", "remote_group_latency",
                   "bank_conflicts", "warmup", "window", "seed")


def run_network_sweep(fc: FileConfig, topology: str, seed: int,
                      jobs: int = 1, loads=None) -> list:
    sweep = fc.sweep
    loads = list(loads if loads is not None else sweep.loads)
    if not loads:
        raise ValueError("empty load sweep")
    points = [
        _NetPoint(fc.geometry, fc.timing, fc.queue_depth, topology,
                  "uniform", load, 0.0, fc.workload.max_outstanding,
                  sweep.warmup, sweep.window, seed, i)
        for i, load in enumerate(loads)
    ]
    return _run_points(_net_point_worker, points, jobs)


def run_scramble_sweep(fc: FileConfig, seed: int, jobs: int = 1,
                       loads=None, p_locals=None) -> list:
    sweep = fc.sweep
    loads = list(loads if loads is not None else sweep.loads)
    p_locals = list(p_locals if p_locals is not None else sweep.p_locals)
    points = []
    for p in p_locals:
        for load in loads:
            points.append(_NetPoint(
                fc.geometry, fc.timing, fc.queue_depth, "hybrid",
                "hybrid_local", load, p, fc.workload.max_outstanding,
                sweep.warmup, sweep.window, seed, len(points)))
    return _run_points(_net_point_worker, points, jobs)


# -- DMA utilization ---------------------------------------------------------

@dataclass(frozen=True)
class _DmaPoint:
    geometry: ClusterGeometry
    timing: TimingParams
    queue_depth: int
    backends: int
    size: int


def _dma_point_worker(pt: _DmaPoint) -> dict:
    cfg = validate(pt.geometry, pt.timing, pt.queue_depth)
    # bulk transfers target the interleaved region, spreading the lines
    # across every tile; the sequential region is for per-core data
    base = cfg.seq_region_bytes
    if base + pt.size > cfg.l1_bytes:
        base = 0
    req = DmaRequest(src=L2_BASE, dst=base, len_bytes=pt.size)
    stats = dma_run(req, cfg, backends_per_group=pt.backends)
    return {
        "backends": pt.backends,
        "bytes": pt.size,
        "cycles": stats.cycles,
        "utilization": stats.utilization,
    }


DMA_COLUMNS = ("backends", "bytes", "cycles", "utilization")


def run_dma_util(fc: FileConfig, seed: int, jobs: int = 1,
                 sizes=None, backends=None) -> list:
    sweep = fc.sweep
    sizes = list(sizes if sizes is not None else sweep.sizes)
    backends = list(backends if backends is not None else sweep.backends)
    points = [_DmaPoint(fc.geometry, fc.timing, fc.queue_depth, b, s)
              for b in backends for s in sizes]
    return _run_points(_dma_point_worker, points, jobs)


# -- kernel runs --------------------------------------------------------------

def kernel_icaches(cfg: ValidatedConfig, preset, variant: str = "2way"):
    """Per-tile instruction caches with the kernel's loop annotation."""
    from .icache import TileICache

    l0cfg, l1cfg = VARIANTS[variant]
    template, tail = build_program(preset)
    branch_pc = (len(template) - 1) * 4
    annotations = {branch_pc: ("B", 0)}
    return [TileICache(l0cfg, l1cfg, cfg.geometry.cores_per_tile, annotations)
            for _ in range(cfg.total_tiles)]


def run_kernel_sim(fc: FileConfig, preset_name: str, seed: int,
                   topology: str = "hybrid", iterations=None,
                   icache_variant: str = "2way"):
    """Run one kernel across all cores; returns (cycles, StallBreakdown,
    aggregated IcacheStats)."""
    if preset_name not in KERNEL_PRESETS:
        raise ValueError(f"unknown kernel preset {preset_name!r}; "
                         f"choose from {sorted(KERNEL_PRESETS)}")
    preset = KERNEL_PRESETS[preset_name]
    cfg = validate(fc.geometry, fc.timing, fc.queue_depth)
    net = build(TopologyKind(topology), cfg)
    icaches = kernel_icaches(cfg, preset, icache_variant)
    driver = KernelDriver(cfg, preset, point_seed(seed, 0),
                          iterations=iterations,
                          mac_depth=fc.workload.mac_depth,
                          max_outstanding=fc.workload.max_outstanding,
                          icaches=icaches)
    sim = Simulator(cfg, net, [driver])
    limit = 4_000_000
    while not driver.all_done:
        sim.step()
        if sim.cycle > limit:
            raise RuntimeError("kernel run exceeded the cycle limit")
    sim.drain()
    from .icache import IcacheStats

    istats = IcacheStats()
    for cache in icaches:
        istats.add(cache.stats)
    return driver.finished_at, driver.breakdown(), istats


KERNEL_COLUMNS = ("preset", "topology", "cores", "iterations", "cycles",
                  "compute_cycles", "control_cycles", "synchronization_cycles",
                  "icache_stall_cycles", "lsu_stall_cycles", "raw_stall_cycles",
                  "ipc", "seed")


def run_kernel(fc: FileConfig, preset_name: str, seed: int,
               topology: str = "hybrid", iterations=None) -> list:
    cycles, bd, _ = run_kernel_sim(fc, preset_name, seed, topology, iterations)
    preset = KERNEL_PRESETS[preset_name]
    iters = iterations if iterations is not None else preset.iterations
    cfg = validate(fc.geometry, fc.timing, fc.queue_depth)
    return [{
        "preset": preset_name,
        "topology": topology,
        "cores": cfg.total_cores,
        "iterations": iters,
        "cycles": cycles,
        "compute_cycles": bd.compute_cycles,
        "control_cycles": bd.control_cycles,
        "synchronization_cycles": bd.synchronization_cycles,
        "icache_stall_cycles": bd.icache_stall_cycles,
        "lsu_stall_cycles": bd.lsu_stall_cycles,
        "raw_stall_cycles": bd.raw_stall_cycles,
        "ipc": bd.ipc(),
        "seed": seed,
    }]


# -- icache trace simulation ---------------------------------------------------

ICACHE_COLUMNS = ("variant", "cores", "fetches", "cycles", "l0_hits",
                  "l0_misses", "l1_hits", "l1_misses", "refills_coalesced",
                  "stall_cycles", "tag_reads", "data_way_reads", "refill_beats")


def run_icache_sim(trace: FetchTrace, variant: str, cores: int = 1) -> list:
    if variant not in VARIANTS:
        raise ValueError(f"unknown icache variant {variant!r}; "
                         f"choose from {sorted(VARIANTS)}")
    l0cfg, l1cfg = VARIANTS[variant]
    stats, _ = replay(l0cfg, l1cfg, trace, cores=cores)
    return [{
        "variant": variant,
        "cores": cores,
        "fetches": len(trace) * cores,
        "cycles": len(trace) + stats.stall_cycles,
        "l0_hits": stats.l0_hits,
        "l0_misses": stats.l0_misses,
        "l1_hits": stats.l1_hits,
        "l1_misses": stats.l1_misses,
        "refills_coalesced": stats.refills_coalesced,
        "stall_cycles": stats.stall_cycles,
        "tag_reads": stats.tag_reads,
        "data_way_reads": stats.data_way_reads,
        "refill_beats": stats.refill_beats,
    }]


# -- double buffering ----------------------------------------------------------

DOUBLE_BUFFER_COLUMNS = ("round", "phase", "compute_cycles", "dma_cycles",
                         "overlap_cycles", "duration_cycles")


def run_double_buffer(fc: FileConfig, preset_name: str, seed: int,
                      rounds: int, iterations=None) -> list:
    """Compose per-round timing from one steady-round kernel run and the
    DMA model: round r's compute overlaps the write-back of round r-1
    and the fetch of round r+1."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if preset_name not in KERNEL_PRESETS:
        raise ValueError(f"unknown kernel preset {preset_name!r}")
    preset = KERNEL_PRESETS[preset_name]
    iters = iterations if iterations is not None else preset.iterations
    cfg = validate(fc.geometry, fc.timing, fc.queue_depth)
    compute, _, _ = run_kernel_sim(fc, preset_name, seed, "hybrid", iters)

    setup = cfg.timing.dma_setup
    in_bytes = preset.dma_in_bytes_per_iter * iters * cfg.total_cores
    out_bytes = preset.dma_out_bytes_per_iter * iters * cfg.total_cores

    def transfer_cycles(nbytes):
        if nbytes == 0:
            return 0
        base = cfg.seq_region_bytes  # buffers live in the interleaved map
        nbytes = min(nbytes, (cfg.l1_bytes - base) // 2)  # half of L1 each
        stats = dma_run(DmaRequest(src=L2_BASE, dst=base, len_bytes=nbytes), cfg)
        return setup + stats.cycles

    d_in = transfer_cycles(in_bytes)
    d_out = transfer_cycles(out_bytes)

    rows = [{
        "round": 0, "phase": "load_in", "compute_cycles": 0,
        "dma_cycles": d_in, "overlap_cycles": 0, "duration_cycles": d_in,
    }]
    for r in range(rounds):
        dma = 0
        if r > 0:
            dma += d_out  # write back the previous round's results
        if r + 1 < rounds:
            dma += d_in   # fetch the next round's inputs
        rows.append({
            "round": r + 1,
            "phase": "compute",
            "compute_cycles": compute,
            "dma_cycles": dma,
            "overlap_cycles": min(compute, dma),
            "duration_cycles": max(compute, dma),
        })
    rows.append({
        "round": rounds + 1, "phase": "write_back", "compute_cycles": 0,
        "dma_cycles": d_out, "overlap_cycles": 0, "duration_cycles": d_out,
    })
    return rows


def total_cycles(rows) -> int:
    return sum(r["duration_cycles"] for r in rows)
