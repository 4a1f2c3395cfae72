"""System interconnect: hierarchical AXI tree, read-only cache, and the
distributed DMA engine.

The DMA is programmed through a single frontend.  A splitter cuts the
transfer at L1-line boundaries (one word across every bank) into serial
chunks; a distributor fans each chunk out across the backends, one per
contiguous range of tiles, as maximal contiguous bursts within each
backend's interleaved stripe.  Backends move their bursts over the AXI
tree, one 512-bit full-duplex channel per group toward system memory.

L1-side DMA addresses are logical and pass through the scrambler before
distribution, so a transfer into a tile's sequential region lands
entirely in that tile.
"""

import math
from dataclasses import dataclass, field

from .addrmap import AddressLayout, scramble
from .geometry import ValidatedConfig

L2_BASE = 0x8000_0000
L2_SIZE = 256 << 20

READ = "read"    # L2 -> L1
WRITE = "write"  # L1 -> L2


class RangeOutOfMemory(Exception):
    """Transfer range leaves its address space."""


@dataclass(frozen=True)
class DmaRequest:
    """One transfer between L1 and L2; exactly one side is in L1."""

    src: int
    dst: int
    len_bytes: int

    def __post_init__(self):
        if self.len_bytes < 0:
            raise ValueError("negative transfer length")


@dataclass(frozen=True)
class BackendRegion:
    """Tiles one DMA backend is responsible for."""

    backend: int
    tile_lo: int  # inclusive
    tile_hi: int  # exclusive


@dataclass(frozen=True)
class Burst:
    """One AXI burst issued by a backend."""

    id: int
    addr: int       # L1-side logical byte address
    len_bytes: int
    direction: str  # READ or WRITE
    backend: int
    l2_addr: int


@dataclass(frozen=True)
class AxiParams:
    """Per-group AXI channel and L2 behaviour."""

    channel_bytes: int = 64        # 512-bit data channels
    max_outstanding: int = 8       # bursts in flight per top port
    radix: int = 16                # children merged per tree node


@dataclass
class TransferStats:
    bytes: int
    cycles: int          # bus-active window (first command to last beat)
    setup_cycles: int
    utilization: float   # bytes / (cycles * active ports * channel bytes)
    active_ports: int
    bursts: int
    beats: int

    @property
    def total_cycles(self) -> int:
        return self.setup_cycles + self.cycles


def _l1_side(req: DmaRequest, cfg: ValidatedConfig):
    """Returns (l1_addr, l2_addr, direction); validates both ranges."""
    l1 = cfg.l1_bytes
    src_in_l1 = 0 <= req.src < l1
    dst_in_l1 = 0 <= req.dst < l1
    if src_in_l1 == dst_in_l1:
        raise RangeOutOfMemory("transfer must touch L1 on exactly one side")
    if src_in_l1:
        l1_addr, l2_addr, direction = req.src, req.dst, WRITE
    else:
        l1_addr, l2_addr, direction = req.dst, req.src, READ
    if l1_addr + req.len_bytes > l1:
        raise RangeOutOfMemory(f"L1 range [{l1_addr:#x}, +{req.len_bytes}) "
                               f"exceeds {l1:#x}")
    if not (L2_BASE <= l2_addr and l2_addr + req.len_bytes <= L2_BASE + L2_SIZE):
        raise RangeOutOfMemory(f"L2 range [{l2_addr:#x}, +{req.len_bytes}) "
                               f"outside system memory")
    return l1_addr, l2_addr, direction


def dma_split(req: DmaRequest, cfg: ValidatedConfig) -> list:
    """Cut a transfer at L1-line boundaries into ordered serial chunks.

    An L1 line is one word in every bank (total banks x 4 bytes); chunks
    never span two lines and concatenate to the original range.
    """
    if req.len_bytes == 0:
        return []
    l1_addr, l2_addr, direction = _l1_side(req, cfg)
    line = cfg.l1_line_bytes
    chunks = []
    remaining = req.len_bytes
    while remaining > 0:
        take = min(remaining, line - (l1_addr % line))
        if direction == WRITE:
            chunks.append(DmaRequest(src=l1_addr, dst=l2_addr, len_bytes=take))
        else:
            chunks.append(DmaRequest(src=l2_addr, dst=l1_addr, len_bytes=take))
        l1_addr += take
        l2_addr += take
        remaining -= take
    return chunks


def backend_regions(cfg: ValidatedConfig, backends_per_group: int) -> list:
    """Partition the tiles into contiguous per-backend ranges."""
    tiles = cfg.total_tiles
    per_group = cfg.geometry.tiles_per_group
    if backends_per_group < 1 or per_group % backends_per_group:
        raise ValueError(f"{backends_per_group} backends do not evenly divide "
                         f"{per_group} tiles per group")
    span = per_group // backends_per_group
    return [BackendRegion(i, i * span, (i + 1) * span)
            for i in range(tiles // span)]


def dma_distribute(chunk: DmaRequest, cfg: ValidatedConfig, regions,
                   id_base: int = 0) -> list:
    """Fan one chunk out across backends as maximal contiguous bursts.

    Walks the chunk word by word through the scrambler and emits a new
    burst whenever the owning backend changes.
    """
    if chunk.len_bytes == 0:
        return []
    l1_addr, l2_addr, direction = _l1_side(chunk, cfg)
    if chunk.len_bytes > cfg.l1_line_bytes:
        raise ValueError("distribute expects a single-line chunk; run "
                         "dma_split first")
    layout = AddressLayout.from_config(cfg)
    span = regions[0].tile_hi - regions[0].tile_lo
    tile_field_shift = 2 + cfg.bank_bits

    def backend_of(byte_addr):
        tile = (scramble(byte_addr, layout) >> tile_field_shift) \
            & ((1 << cfg.tile_bits) - 1)
        return tile // span

    bursts = []
    start = l1_addr
    end = l1_addr + chunk.len_bytes
    cur_backend = backend_of(start)
    pos = start
    # advance in word steps; sub-word head/tail stay with their word
    while pos < end:
        word_end = min((pos // 4 + 1) * 4, end)
        nxt = backend_of(word_end) if word_end < end else None
        if nxt is not None and nxt == cur_backend:
            pos = word_end
            continue
        bursts.append(Burst(id=id_base + len(bursts), addr=start,
                            len_bytes=word_end - start, direction=direction,
                            backend=cur_backend,
                            l2_addr=l2_addr + (start - l1_addr)))
        start = word_end
        pos = word_end
        if nxt is not None:
            cur_backend = nxt
    return bursts


@dataclass
class AxiTree:
    """Structure of one group's AXI tree plus byte-conservation counters.

    Leaves are the group's tiles and DMA backends; neighbouring children
    merge at each level until one top port remains per group.
    """

    cfg: ValidatedConfig
    params: AxiParams
    backends_per_group: int
    leaf_bytes: dict = field(default_factory=dict)
    port_bytes: dict = field(default_factory=dict)

    @property
    def leaves_per_group(self) -> int:
        return self.cfg.geometry.tiles_per_group + self.backends_per_group

    @property
    def levels(self) -> int:
        return max(1, math.ceil(math.log(self.leaves_per_group,
                                         self.params.radix)))

    def port_of_backend(self, backend: int) -> int:
        span = self.cfg.geometry.tiles_per_group // self.backends_per_group
        return backend * span // self.cfg.geometry.tiles_per_group

    def record(self, backend: int, nbytes: int):
        self.leaf_bytes[backend] = self.leaf_bytes.get(backend, 0) + nbytes
        port = self.port_of_backend(backend)
        self.port_bytes[port] = self.port_bytes.get(port, 0) + nbytes

    def conserved(self) -> bool:
        return sum(self.leaf_bytes.values()) == sum(self.port_bytes.values())


def dma_run(req: DmaRequest, cfg: ValidatedConfig, backends_per_group: int = 4,
            params: AxiParams = AxiParams()) -> TransferStats:
    """Model one full transfer: frontend setup, split, distribute, and
    concurrent backend bursts over the per-group AXI channels.

    A port issues one command per cycle, keeps a bounded number of
    bursts in flight, and streams one data beat per cycle; reads wait
    out the L2 latency between command and first beat.  Utilization is
    measured per active port over the bus window, so a transfer
    confined to one group is judged against that group's bandwidth.
    """
    regions = backend_regions(cfg, backends_per_group)
    chunks = dma_split(req, cfg)
    bursts = []
    for chunk in chunks:
        bursts.extend(dma_distribute(chunk, cfg, regions, id_base=len(bursts)))
    setup = cfg.timing.dma_setup
    if not bursts:
        return TransferStats(bytes=0, cycles=0, setup_cycles=setup,
                             utilization=0.0, active_ports=0, bursts=0, beats=0)

    tree = AxiTree(cfg, params, backends_per_group)
    per_port = {}
    for b in bursts:
        per_port.setdefault(tree.port_of_backend(b.backend), []).append(b)
        tree.record(b.backend, b.len_bytes)

    chan = params.channel_bytes
    latency = cfg.timing.l2_latency
    window_start = None
    window_end = 0
    total_beats = 0
    for port, plist in sorted(per_port.items()):
        cmd_t = 0  # command channel: one burst command per cycle
        data_free = 0
        inflight = []  # completion cycles, bounded by max_outstanding
        first_cmd = None
        for b in plist:
            if len(inflight) >= params.max_outstanding:
                inflight.sort()
                cmd_t = max(cmd_t, inflight.pop(0))
            if first_cmd is None:
                first_cmd = cmd_t
            beats = (b.len_bytes + chan - 1) // chan
            total_beats += beats
            if b.direction == READ:
                start = max(cmd_t + latency, data_free)
            else:
                start = max(cmd_t + 1, data_free)
            data_free = start + beats
            inflight.append(data_free)
            cmd_t += 1
        window_start = first_cmd if window_start is None \
            else min(window_start, first_cmd)
        window_end = max(window_end, data_free)
    window = window_end - window_start
    active = len(per_port)
    util = req.len_bytes / (window * active * chan) if window else 0.0
    assert tree.conserved()
    return TransferStats(bytes=req.len_bytes, cycles=window,
                         setup_cycles=setup, utilization=util,
                         active_ports=active, bursts=len(bursts),
                         beats=total_beats)


@dataclass(frozen=True)
class RoCacheConfig:
    size_bytes: int = 8192
    line_bytes: int = 32
    ways: int = 4
    stages: int = 4  # axi-to-cache, lookup, handler, response
    l2_latency: int = 12
    channel_bytes: int = 64

    @property
    def sets(self) -> int:
        s = self.size_bytes // (self.ways * self.line_bytes)
        if s == 0 or s & (s - 1):
            raise ValueError("sets must be a power of two")
        return s


class RoCache:
    """Read-only, software-flushed cache in the AXI tree.

    Requests pipeline one per cycle.  Hits answer after the four-stage
    pipeline; misses refill from L2, coalescing with an in-flight refill
    of the same line.  AXI same-ID ordering holds: a hit response for a
    master with an older pending miss is held until that miss returns.
    """

    def __init__(self, config: RoCacheConfig = RoCacheConfig(),
                 cacheable=((0, 1 << 62),)):
        self.config = config
        self.cacheable = tuple(cacheable)
        self.sets = [[] for _ in range(config.sets)]
        self.inflight = {}  # line -> data-ready cycle
        self.last_response = {}  # master -> last response cycle
        self.hits = 0
        self.misses = 0
        self.refills = 0
        self.coalesced = 0
        self.bypasses = 0

    def flush(self):
        self.sets = [[] for _ in range(self.config.sets)]
        self.inflight.clear()
        self.last_response.clear()

    def _cacheable(self, addr) -> bool:
        return any(lo <= addr < hi for lo, hi in self.cacheable)

    def _line_ready(self, line, t):
        cfg = self.config
        s = self.sets[line % cfg.sets]
        if line in s:
            self.hits += 1
            pending = self.inflight.get(line)
            if pending is not None and pending > t:
                self.coalesced += 1
                return pending
            return t + cfg.stages
        self.misses += 1
        self.refills += 1
        if len(s) >= cfg.ways:
            s.pop(0)
        s.append(line)
        beats = (cfg.line_bytes + cfg.channel_bytes - 1) // cfg.channel_bytes
        ready = t + cfg.stages + cfg.l2_latency + beats - 1
        self.inflight[line] = ready
        return ready

    def access(self, burst: Burst, cycle: int):
        """Serve one read burst; returns [(line_addr, response_cycle)].

        Write bursts and non-cacheable reads bypass straight to memory.
        """
        cfg = self.config
        if burst.direction != READ or not self._cacheable(burst.l2_addr):
            self.bypasses += 1
            beats = (burst.len_bytes + cfg.channel_bytes - 1) // cfg.channel_bytes
            return [(burst.l2_addr, cycle + cfg.l2_latency + beats)]
        first = burst.l2_addr // cfg.line_bytes
        last = (burst.l2_addr + burst.len_bytes - 1) // cfg.line_bytes
        out = []
        master = burst.backend
        floor = self.last_response.get(master, -1)
        for k, line in enumerate(range(first, last + 1)):
            ready = self._line_ready(line, cycle + k)
            ready = max(ready, floor + 1)  # same-ID responses stay in order
            floor = ready
            out.append((line * cfg.line_bytes, ready))
        self.last_response[master] = floor
        return out
