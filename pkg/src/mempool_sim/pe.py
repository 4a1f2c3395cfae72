"""Processing-element models feeding the engine.

Two kinds of agents drive the cluster: traffic generators (per-cycle
Bernoulli emission toward random banks, closed-loop) and kernel cores
(an abstract instruction stream with loads, stores, pipelined compute,
and a final barrier).  Both respect a bounded scoreboard of outstanding
memory requests; an emission or instruction that cannot issue is held,
never dropped.

A core offers at most one new request per cycle.  The per-cycle
Bernoulli draw realises a Poisson arrival process at rates <= 1 while
matching single-issue hardware.
"""

import enum
from collections import deque
from dataclasses import dataclass

import numpy as np

from .engine import OP_AMO, OP_READ, OP_WRITE, AmoKind

DEFAULT_MAX_OUTSTANDING = 8
INF = 1 << 60


@dataclass(frozen=True)
class TrafficConfig:
    """Synthetic traffic: 'uniform' sprays all banks; 'hybrid_local'
    targets the core's own sequential region with probability p_local."""

    kind: str = "uniform"  # "uniform" | "hybrid_local"
    load: float = 0.1  # emission probability per core per cycle
    p_local: float = 0.0
    max_outstanding: int = DEFAULT_MAX_OUTSTANDING

    def __post_init__(self):
        if not 0.0 <= self.load <= 1.0:
            raise ValueError("load must be within [0, 1]")
        if not 0.0 <= self.p_local <= 1.0:
            raise ValueError("p_local must be within [0, 1]")
        if self.kind not in ("uniform", "hybrid_local"):
            raise ValueError(f"unknown traffic kind {self.kind!r}")


class _Gen:
    """Per-core generator state: scoreboard occupancy, the request
    currently presented to the interconnect, and the source queue of
    drawn-but-not-yet-injected emissions."""

    __slots__ = ("tile", "slot", "core", "outstanding", "max_outstanding",
                 "pending", "backlog")

    def __init__(self, core, tile, slot, max_outstanding):
        self.core = core
        self.tile = tile
        self.slot = slot
        self.outstanding = 0
        self.max_outstanding = max_outstanding
        self.pending = None
        self.backlog = deque()  # (draw cycle, logical address)

    def on_accept(self, req, cycle):
        self.pending = None
        self.outstanding += 1

    def on_reject(self, req, cycle):
        pass  # stays pending, retried next cycle

    def on_response(self, req, value, cycle):
        self.outstanding -= 1


class TrafficDriver:
    """Stages emissions for every core each cycle.

    The Poisson arrival process is one Bernoulli(load) draw per core per
    cycle.  Arrivals the core cannot inject yet (port backpressure or a
    full scoreboard) wait in a small source queue, so below saturation
    the accepted load catches up to the offered load, and round-trip
    latency, measured from the draw cycle, blows up once the network
    congests.  Draws pause while the source queue is full; nothing is
    ever dropped.  All randomness comes from one seeded stream, so runs
    are reproducible.
    """

    BUF = 8192
    BACKLOG_DEPTH = 16

    def __init__(self, cfg, traffic: TrafficConfig, seed, active_cores=None):
        self.cfg = cfg
        self.traffic = traffic
        self.rng = np.random.default_rng(seed)
        g = cfg.geometry
        n = g.total_cores
        per_tile = g.cores_per_tile
        self.gens = [
            _Gen(core, core // per_tile, core % per_tile, traffic.max_outstanding)
            for core in range(n)
        ]
        if active_cores is not None:
            active = set(active_cores)
            self.active = [gen for gen in self.gens if gen.core in active]
        else:
            self.active = list(self.gens)
        self._busy = []  # gens with a pending request or a backlog
        self._fbuf = self.rng.random(self.BUF)
        self._fpos = 0
        self.generated = 0
        # address-space constants
        self.total_words = cfg.l1_bytes // 4
        self.tile_seq_bytes = cfg.tile_seq_bytes
        self.tile_seq_words = self.tile_seq_bytes // 4

    def reset_window(self):
        self.generated = 0

    def _next_float(self):
        pos = self._fpos
        if pos == self.BUF:
            self._fbuf = self.rng.random(self.BUF)
            pos = 0
        self._fpos = pos + 1
        return self._fbuf[pos]

    def _draw_addr(self, gen):
        tr = self.traffic
        if tr.kind == "uniform":
            return int(self._next_float() * self.total_words) * 4
        # hybrid_local
        own_base = gen.tile * self.tile_seq_bytes
        if self._next_float() < tr.p_local:
            return own_base + int(self._next_float() * self.tile_seq_words) * 4
        addr = int(self._next_float() * (self.total_words - self.tile_seq_words)) * 4
        if addr >= own_base:
            addr += self.tile_seq_bytes
        return addr

    def _present(self, sim, gen):
        """Materialise the backlog head and present it if a scoreboard
        slot is free; latency counts from the draw cycle."""
        if gen.pending is None:
            drawn_cycle, addr = gen.backlog.popleft()
            req = sim.new_request(gen, OP_READ, addr)
            req.issue_cycle = drawn_cycle
            gen.pending = req
        if gen.outstanding < gen.max_outstanding:
            sim.stage_request(gen.pending)

    def stage(self, sim, cycle):
        busy = self._busy
        if busy:
            still = []
            for gen in busy:
                if gen.pending is not None or gen.backlog:
                    self._present(sim, gen)
                    still.append(gen)
            busy[:] = still
        load = self.traffic.load
        if load <= 0.0:
            return
        if load >= 1.0:
            emitters = self.active
        else:
            draws = self.rng.random(len(self.active))
            emitters = [gen for gen, d in zip(self.active, draws) if d < load]
        cap = self.BACKLOG_DEPTH
        for gen in emitters:
            if len(gen.backlog) >= cap or (gen.pending is not None and
                                           len(gen.backlog) >= cap - 1):
                continue  # source queue full: draws pause, nothing dropped
            idle = gen.pending is None and not gen.backlog
            gen.backlog.append((cycle, self._draw_addr(gen)))
            self.generated += 1
            if idle:
                self._present(sim, gen)
                busy.append(gen)

    @property
    def in_flight(self):
        return sum(gen.outstanding for gen in self.gens)


class LoadStreamAgent:
    """One core issuing an endless stream of independent loads to a fixed
    set of word addresses; used to measure issue-rate and latency hiding."""

    __slots__ = ("tile", "slot", "core", "max_outstanding", "outstanding",
                 "pending", "addrs", "pos", "created", "issued", "completed",
                 "limit", "issue_cycles")

    def __init__(self, core, tile, slot, addrs, max_outstanding, limit=None):
        self.core = core
        self.tile = tile
        self.slot = slot
        self.addrs = list(addrs)
        self.pos = 0
        self.max_outstanding = max_outstanding
        self.outstanding = 0
        self.pending = None
        self.created = 0
        self.issued = 0
        self.completed = 0
        self.limit = limit
        self.issue_cycles = []

    def stage(self, sim, cycle):
        if self.pending is None:
            if self.limit is not None and self.created >= self.limit:
                return
            if self.outstanding >= self.max_outstanding:
                return
            addr = self.addrs[self.pos % len(self.addrs)]
            self.pos += 1
            self.pending = sim.new_request(self, OP_READ, addr)
            self.created += 1
        if self.outstanding < self.max_outstanding:
            sim.stage_request(self.pending)

    def on_accept(self, req, cycle):
        self.pending = None
        self.outstanding += 1
        self.issued += 1
        self.issue_cycles.append(cycle)

    def on_reject(self, req, cycle):
        pass

    def on_response(self, req, value, cycle):
        self.outstanding -= 1
        self.completed += 1

    def reset_window(self):
        self.issued = 0
        self.completed = 0
        self.issue_cycles.clear()


def barrier_resume_cycle(arrival_cycles, wakeup_latency: int) -> int:
    """All cores resume together once the last one arrives."""
    arrivals = list(arrival_cycles)
    if not arrivals:
        raise ValueError("barrier needs at least one arrival")
    return max(arrivals) + wakeup_latency


class Barrier:
    """Central barrier: arrivals are counted by an atomic increment on a
    barrier word; the last arrival triggers one wake-up pulse."""

    def __init__(self, expected: int, wakeup_latency: int):
        self.expected = expected
        self.wakeup_latency = wakeup_latency
        self.arrivals = 0
        self.resume_at = None

    def arrive(self, cycle: int):
        self.arrivals += 1
        if self.arrivals == self.expected:
            self.resume_at = cycle + self.wakeup_latency

    def reset(self):
        self.arrivals = 0
        self.resume_at = None


@dataclass(frozen=True)
class KernelPreset:
    """Access-pattern generator for one kernel: per-iteration instruction
    mix plus the fraction of memory traffic kept in the core's own
    sequential region.  Operand values are irrelevant to timing."""

    name: str
    loads_per_iter: int
    stores_per_iter: int
    compute_per_iter: int
    local_fraction: float
    iterations: int
    reduction: bool = False  # final atomic accumulate before the barrier
    dma_in_bytes_per_iter: int = 0  # per core, for double buffering
    dma_out_bytes_per_iter: int = 0


KERNEL_PRESETS = {
    # matmul: 4x4 output tile, 8 loads per 16 MACs, shared inputs spread
    # over the interleaved region
    "matmul": KernelPreset("matmul", 8, 0, 16, 0.0, 64,
                           dma_in_bytes_per_iter=32, dma_out_bytes_per_iter=8),
    # conv: 3x3 window over tile-mapped pixels, edges leave the tile
    "conv": KernelPreset("conv", 3, 1, 12, 0.9, 64,
                         dma_in_bytes_per_iter=12, dma_out_bytes_per_iter=4),
    # dct: 8x8 blocks with stack-resident intermediates
    "dct": KernelPreset("dct", 8, 8, 16, 1.0, 48,
                        dma_in_bytes_per_iter=32, dma_out_bytes_per_iter=32),
    # axpy: 2 loads + 1 store per MAC, purely local
    "axpy": KernelPreset("axpy", 2, 1, 1, 1.0, 256,
                         dma_in_bytes_per_iter=8, dma_out_bytes_per_iter=4),
    # dotp: like axpy without the store, plus a final atomic reduction
    "dotp": KernelPreset("dotp", 2, 0, 1, 1.0, 256, reduction=True,
                         dma_in_bytes_per_iter=8),
}


@dataclass
class StallBreakdown:
    """Where core cycles went; the six buckets partition cycles * cores."""

    compute_cycles: int = 0
    control_cycles: int = 0
    synchronization_cycles: int = 0
    icache_stall_cycles: int = 0
    lsu_stall_cycles: int = 0
    raw_stall_cycles: int = 0

    @property
    def total(self) -> int:
        return (self.compute_cycles + self.control_cycles
                + self.synchronization_cycles + self.icache_stall_cycles
                + self.lsu_stall_cycles + self.raw_stall_cycles)

    def ipc(self) -> float:
        issued = self.compute_cycles + self.control_cycles
        return issued / self.total if self.total else 0.0

    def add(self, other: "StallBreakdown"):
        self.compute_cycles += other.compute_cycles
        self.control_cycles += other.control_cycles
        self.synchronization_cycles += other.synchronization_cycles
        self.icache_stall_cycles += other.icache_stall_cycles
        self.lsu_stall_cycles += other.lsu_stall_cycles
        self.raw_stall_cycles += other.raw_stall_cycles


class CoreState(enum.Enum):
    RUNNING = "running"
    SLEEPING_AT_BARRIER = "sleeping"
    STALLED_RAW = "stalled_raw"
    STALLED_LSU = "stalled_lsu"


# abstract instruction kinds
I_LOAD = 0    # a = destination register
I_STORE = 1
I_COMPUTE = 2  # a = source registers, b = destination register or None
I_BRANCH = 3   # loop back-edge, 1 control cycle
I_AMO_RED = 4  # atomic accumulate into the reduction word
I_BARRIER = 5  # atomic arrival increment, then sleep


def build_program(preset: KernelPreset):
    """Per-iteration template plus tail. Loads are hoisted to the top of
    the iteration and computes consume them in order, mirroring a
    compiler that schedules loads early to hide latency."""
    template = []
    regs = min(max(preset.loads_per_iter, 1), 16)
    for i in range(preset.loads_per_iter):
        template.append((I_LOAD, i % 16, None))
    for i in range(preset.compute_per_iter):
        if preset.loads_per_iter >= 2:
            srcs = ((2 * i) % regs, (2 * i + 1) % regs)
        elif preset.loads_per_iter == 1:
            srcs = (0,)
        else:
            srcs = ()
        template.append((I_COMPUTE, srcs, 16 + (i % 8)))
    for _ in range(preset.stores_per_iter):
        template.append((I_STORE, None, None))
    template.append((I_BRANCH, None, None))
    tail = []
    if preset.reduction:
        tail.append((I_AMO_RED, None, None))
    tail.append((I_BARRIER, None, None))
    return template, tail


class KernelCore:
    """Single-issue core walking an abstract instruction stream with a
    bounded scoreboard; every cycle lands in exactly one stall-breakdown
    bucket."""

    __slots__ = ("core", "tile", "slot", "max_outstanding", "outstanding",
                 "pending", "pending_kind", "pending_reg", "state", "regs_ready",
                 "template", "tail", "idx", "in_tail", "iters_left", "mac_depth",
                 "breakdown", "inflight_regs", "done", "resume_at", "barrier",
                 "barrier_rid")

    def __init__(self, core, tile, slot, template, tail, iterations,
                 max_outstanding, mac_depth, barrier):
        self.core = core
        self.tile = tile
        self.slot = slot
        self.max_outstanding = max_outstanding
        self.outstanding = 0
        self.pending = None
        self.pending_kind = None
        self.pending_reg = None
        self.state = CoreState.RUNNING
        self.regs_ready = [0] * 32
        self.template = template
        self.tail = tail
        self.idx = 0
        self.in_tail = False
        self.iters_left = iterations
        self.mac_depth = mac_depth
        self.breakdown = StallBreakdown()
        self.inflight_regs = {}
        self.done = False
        self.resume_at = None
        self.barrier = barrier
        self.barrier_rid = None

    # -- engine callbacks ---------------------------------------------

    def on_accept(self, req, cycle):
        self.breakdown.control_cycles += 1
        self.pending = None
        self.outstanding += 1
        if self.pending_kind == I_LOAD:
            self.inflight_regs[req.rid] = self.pending_reg
            self.regs_ready[self.pending_reg] = INF
            self._advance()
        elif self.pending_kind == I_BARRIER:
            # stay on the barrier instruction and sleep; the wake-up
            # pulse finishes the program
            self.barrier_rid = req.rid
            self.state = CoreState.SLEEPING_AT_BARRIER
        else:
            self._advance()

    def on_reject(self, req, cycle):
        self.breakdown.lsu_stall_cycles += 1
        self.state = CoreState.STALLED_LSU

    def on_response(self, req, value, cycle):
        self.outstanding -= 1
        reg = self.inflight_regs.pop(req.rid, None)
        if reg is not None:
            self.regs_ready[reg] = cycle
        if req.rid == self.barrier_rid:
            self.barrier.arrive(cycle)

    # -- program sequencing --------------------------------------------

    def _advance(self):
        self.idx += 1
        seq = self.tail if self.in_tail else self.template
        if self.idx >= len(seq):
            if self.in_tail:
                self.done = True
            else:
                self.iters_left -= 1
                if self.iters_left > 0:
                    self.idx = 0
                else:
                    self.in_tail = True
                    self.idx = 0

    def current_pc(self):
        if self.in_tail:
            return (len(self.template) + self.idx) * 4
        return self.idx * 4


class KernelDriver:
    """Runs one preset across every core, with per-tile instruction
    caches and a final barrier; collects the cluster stall breakdown."""

    def __init__(self, cfg, preset: KernelPreset, seed, iterations=None,
                 mac_depth=2, max_outstanding=DEFAULT_MAX_OUTSTANDING,
                 icaches=None):
        self.cfg = cfg
        self.preset = preset
        self.rng = np.random.default_rng(seed)
        g = cfg.geometry
        n = g.total_cores
        iters = iterations if iterations is not None else preset.iterations
        template, tail = build_program(preset)
        self.barrier = Barrier(n, cfg.timing.wakeup_latency)
        per_tile = g.cores_per_tile
        self.cores = [
            KernelCore(c, c // per_tile, c % per_tile, template, tail, iters,
                       max_outstanding, mac_depth, self.barrier)
            for c in range(n)
        ]
        self.icaches = icaches  # list per tile or None
        self._fbuf = self.rng.random(TrafficDriver.BUF)
        self._fpos = 0
        self.total_words = cfg.l1_bytes // 4
        self.tile_seq_bytes = cfg.tile_seq_bytes
        self.tile_seq_words = self.tile_seq_bytes // 4
        seq_span = cfg.seq_region_bytes
        # barrier and reduction words live in the interleaved region
        self.barrier_addr = seq_span
        self.reduction_addr = seq_span + 64
        self.finished_at = None

    def _next_float(self):
        pos = self._fpos
        if pos == TrafficDriver.BUF:
            self._fbuf = self.rng.random(TrafficDriver.BUF)
            pos = 0
        self._fpos = pos + 1
        return self._fbuf[pos]

    def _data_addr(self, core):
        if self._next_float() < self.preset.local_fraction:
            base = core.tile * self.tile_seq_bytes
            # leave the lowest words to the stack, spread over the rest
            return base + int(self._next_float() * self.tile_seq_words) * 4
        addr = int(self._next_float() * (self.total_words - self.tile_seq_words)) * 4
        if addr >= core.tile * self.tile_seq_bytes:
            addr += self.tile_seq_bytes
        return addr

    @property
    def all_done(self):
        return all(c.done for c in self.cores)

    def stage(self, sim, cycle):
        barrier = self.barrier
        for core in self.cores:
            if core.done:
                continue
            state = core.state
            if state is CoreState.SLEEPING_AT_BARRIER:
                if barrier.resume_at is not None and cycle >= barrier.resume_at:
                    core.state = CoreState.RUNNING
                    core.done = True
                    self.finished_at = barrier.resume_at
                    continue
                core.breakdown.synchronization_cycles += 1
                continue
            if core.pending is not None:
                # retry a request the interconnect refused last cycle
                sim.stage_request(core.pending)
                continue
            if self.icaches is not None:
                ready = self.icaches[core.tile].fetch(core.slot,
                                                      core.current_pc(), cycle)
                if ready > cycle:
                    core.breakdown.icache_stall_cycles += 1
                    continue
            seq = core.tail if core.in_tail else core.template
            kind, a, b = seq[core.idx]
            if kind == I_COMPUTE:
                ready = core.regs_ready
                for r in a:
                    if ready[r] > cycle:
                        core.breakdown.raw_stall_cycles += 1
                        core.state = CoreState.STALLED_RAW
                        break
                else:
                    core.breakdown.compute_cycles += 1
                    core.state = CoreState.RUNNING
                    if b is not None:
                        ready[b] = cycle + core.mac_depth
                    core._advance()
                continue
            if kind == I_BRANCH:
                core.breakdown.control_cycles += 1
                core.state = CoreState.RUNNING
                core._advance()
                continue
            # memory instructions need a scoreboard slot
            if core.outstanding >= core.max_outstanding:
                core.breakdown.lsu_stall_cycles += 1
                core.state = CoreState.STALLED_LSU
                continue
            if kind == I_LOAD:
                req = sim.new_request(core, OP_READ, self._data_addr(core))
                core.pending_reg = a
            elif kind == I_STORE:
                req = sim.new_request(core, OP_WRITE, self._data_addr(core), 0)
            elif kind == I_AMO_RED:
                req = sim.new_request(core, OP_AMO + AmoKind.ADD,
                                      self.reduction_addr, 1)
            else:  # I_BARRIER
                req = sim.new_request(core, OP_AMO + AmoKind.ADD,
                                      self.barrier_addr, 1)
            core.pending = req
            core.pending_kind = kind
            core.state = CoreState.RUNNING
            sim.stage_request(req)

    def breakdown(self) -> StallBreakdown:
        total = StallBreakdown()
        for core in self.cores:
            total.add(core.breakdown)
        return total
