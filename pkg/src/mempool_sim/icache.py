"""Behavioral instruction-cache model: per-core L0 with prefetch, and a
shared per-tile L1 in its configurable organizations.

The L0 is tiny and fully associative with replace-oldest eviction.  Its
prefetcher hides the L1 lookup latency: on entering a cache line it
scans the line for a backward branch (a loop) or a predictable direct
jump and requests that target's line, falling back to the next
sequential line.  The shared L1 does a parallel or serial
tag/data lookup; the serial organization reads only the hitting data
way at the cost of one extra cycle, which prefetching hides.

Energy is represented by access-count proxies (tag reads, data-way
reads, refill beats) rather than absolute power numbers.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class L0Config:
    lines: int = 4
    line_instrs: int = 8  # instructions per line (8 = 256-bit lines)
    prefetch: bool = True

    @property
    def capacity_instrs(self) -> int:
        return self.lines * self.line_instrs


PARALLEL = "parallel"
SERIAL = "serial"


@dataclass(frozen=True)
class L1IcacheConfig:
    size_bytes: int = 2048
    ways: int = 2
    line_bytes: int = 32
    lookup: str = PARALLEL
    tag_store: str = "sram"   # proxy accounting tag only
    data_store: str = "sram"
    hit_cycles: int = 1       # stall cycles for an L0 miss that hits L1
    refill_cycles: int = 6    # extra cycles for an L1 miss served by the
                              # group's read-only cache; short enough for
                              # one-line-ahead prefetch to hide behind an
                              # 8-instruction line in either organization

    @property
    def sets(self) -> int:
        sets = self.size_bytes // (self.ways * self.line_bytes)
        if sets & (sets - 1) or sets == 0:
            raise ValueError("sets must be a power of two")
        return sets

    @property
    def lookup_penalty(self) -> int:
        return self.hit_cycles + (1 if self.lookup == SERIAL else 0)


# The three organizations evaluated for the tile instruction path.
VARIANTS = {
    # register L0 of 16 instructions, 2 KiB 4-way parallel L1, 128-bit lines
    "baseline": (L0Config(lines=4, line_instrs=4),
                 L1IcacheConfig(ways=4, line_bytes=16, lookup=PARALLEL)),
    # 256-bit lines double the L0, associativity drops to keep L1 size
    "2way": (L0Config(lines=4, line_instrs=8),
             L1IcacheConfig(ways=2, line_bytes=32, lookup=PARALLEL)),
    # serial tag-then-data lookup, latch tags, single shared data bank
    "serial-l1": (L0Config(lines=4, line_instrs=8),
                  L1IcacheConfig(ways=2, line_bytes=32, lookup=SERIAL,
                                 tag_store="latch")),
}


@dataclass
class IcacheStats:
    l0_hits: int = 0
    l0_misses: int = 0  # fill requests: demand misses plus prefetches
    l1_hits: int = 0
    l1_misses: int = 0
    refills_coalesced: int = 0  # fills joining another core's fill in flight
    stall_cycles: int = 0
    tag_reads: int = 0
    data_way_reads: int = 0
    refill_beats: int = 0

    def add(self, other: "IcacheStats"):
        for name in self.__dataclass_fields__:
            setattr(self, name, getattr(self, name) + getattr(other, name))


@dataclass(frozen=True)
class TraceEntry:
    pc: int
    kind: str = ""  # "" | "B" (backward branch) | "J" (direct jump)
    target: int = 0


class FetchTrace:
    """A replayable fetch stream: word-aligned PCs with branch/jump
    markers. File format: one entry per line, `<pc>` or `<pc> B <target>`
    or `<pc> J <target>`, decimal or hex."""

    def __init__(self, entries):
        self.entries = list(entries)
        for e in self.entries:
            if e.pc % 4:
                raise ValueError(f"pc {e.pc:#x} is not word-aligned")
        # static annotation map used by the prefetcher
        self.annotations = {e.pc: (e.kind, e.target)
                            for e in self.entries if e.kind}

    @classmethod
    def parse(cls, text: str) -> "FetchTrace":
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                pc = int(parts[0], 0)
            except ValueError as exc:
                raise ValueError(f"trace line {lineno}: bad pc {parts[0]!r}") from exc
            if len(parts) == 1:
                entries.append(TraceEntry(pc))
            elif len(parts) == 3 and parts[1] in ("B", "J"):
                entries.append(TraceEntry(pc, parts[1], int(parts[2], 0)))
            else:
                raise ValueError(f"trace line {lineno}: expected "
                                 f"'<pc> [B|J <target>]', got {line!r}")
        return cls(entries)

    @classmethod
    def load(cls, path) -> "FetchTrace":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def __len__(self):
        return len(self.entries)


class _L0:
    """Fully associative, replace-oldest line store for one core.

    A line's slot is allocated when its fill is requested, so residency
    depends only on the request order, never on fill latency; readiness
    is tracked separately for stall accounting.
    """

    __slots__ = ("capacity", "resident", "order", "last_line")

    def __init__(self, lines):
        self.capacity = lines
        self.resident = set()
        self.order = []  # fill-request order for replace-oldest
        self.last_line = -1

    def install(self, line):
        """Allocate a slot; returns the evicted line or None."""
        if line in self.resident:
            return None
        evicted = None
        if len(self.order) >= self.capacity:
            evicted = self.order.pop(0)
            self.resident.discard(evicted)
        self.resident.add(line)
        self.order.append(line)
        return evicted


class TileICache:
    """Shared L1 plus one L0 per core; refills of the same L1 line from
    several cores coalesce into a single event."""

    def __init__(self, l0cfg: L0Config, l1cfg: L1IcacheConfig, cores: int,
                 annotations=None):
        self.l0cfg = l0cfg
        self.l1cfg = l1cfg
        self.l0 = [_L0(l0cfg.lines) for _ in range(cores)]
        self.l0_pending = [{} for _ in range(cores)]  # l0 line -> ready cycle
        self.sets = [[] for _ in range(l1cfg.sets)]   # FIFO tag lists
        self.l2_pending = {}  # l1 line -> ready cycle (refill in flight)
        self.fill_pending = {}  # (l1 line) -> ready cycle at the L1 interface
        self.annotations = annotations or {}
        self.stats = IcacheStats()
        self._line_shift = (l0cfg.line_instrs * 4).bit_length() - 1
        self._l1_shift = l1cfg.line_bytes.bit_length() - 1

    # -- L1 ---------------------------------------------------------------

    def _l1_lookup(self, l1_line, cycle):
        """One tag/data lookup; returns the cycle the line's words are
        available at the L1 interface.

        Lines are allocated at miss time, so the hit/miss outcome of a
        trace depends only on the access order, never on lookup timing;
        serial and parallel organizations classify identically.
        """
        st = self.stats
        cfg = self.l1cfg
        st.tag_reads += cfg.ways
        s = self.sets[l1_line % cfg.sets]
        if l1_line in s:
            st.l1_hits += 1
            st.data_way_reads += cfg.ways if cfg.lookup == PARALLEL else 1
            ready = cycle + cfg.lookup_penalty
            refill = self.l2_pending.get(l1_line)
            if refill is not None:
                if refill > ready:
                    ready = refill  # words still arriving from the refill
                else:
                    del self.l2_pending[l1_line]
            return ready
        st.l1_misses += 1
        if cfg.lookup == PARALLEL:
            st.data_way_reads += cfg.ways
        st.refill_beats += cfg.line_bytes // 4
        if len(s) >= cfg.ways:
            s.pop(0)  # replace-oldest
        s.append(l1_line)
        ready = cycle + cfg.lookup_penalty + cfg.refill_cycles
        self.l2_pending[l1_line] = ready
        return ready

    def refill(self, l1_line, requesters, cycle):
        """One refill event regardless of how many cores requested it;
        all requesters are unblocked at the returned cycle."""
        n = len(requesters) if hasattr(requesters, "__len__") else len(list(requesters))
        if n < 1:
            raise ValueError("refill needs at least one requester")
        ready = self._l1_lookup(l1_line, cycle)
        self.stats.refills_coalesced += n - 1
        return ready

    # -- core-facing fetch -------------------------------------------------

    def _request_fill(self, core, l0_line, cycle):
        """Issue or join a fill of one L0 line; returns the ready cycle.
        The L0 slot is allocated right away (request order drives
        replacement)."""
        st = self.stats
        st.l0_misses += 1
        evicted = self.l0[core].install(l0_line)
        pend = self.l0_pending[core]
        if evicted is not None:
            pend.pop(evicted, None)
        l1_line = (l0_line << self._line_shift) >> self._l1_shift
        shared = self.fill_pending.get(l1_line)
        if shared is not None:
            if shared > cycle:
                # another core's fill of the same line is in flight: one
                # refill, both L0s served in parallel
                st.refills_coalesced += 1
                pend[l0_line] = shared
                return shared
            del self.fill_pending[l1_line]
        ready = self._l1_lookup(l1_line, cycle)
        if ready > cycle:
            self.fill_pending[l1_line] = ready
            pend[l0_line] = ready
        return ready

    def _prefetch_scan(self, core, line, cycle):
        """On entering a line, request the loop target or the next line."""
        li = self.l0cfg.line_instrs
        base = line * li * 4
        nxt = line + 1
        for pc in range(base, base + li * 4, 4):
            ann = self.annotations.get(pc)
            if ann is None:
                continue
            kind, target = ann
            if kind == "B" and target <= pc:
                nxt = target // (li * 4)
                break
            if kind == "J":
                nxt = target // (li * 4)
                break
        l0 = self.l0[core]
        if nxt not in l0.resident and nxt >= 0:
            self._request_fill(core, nxt, cycle)

    def fetch(self, core, pc, cycle):
        """Fetch one instruction; returns the cycle it can issue
        (== cycle on an L0 hit).

        A fetch that lands on a fill already in flight counts as an L0
        hit (it starts no fill of its own) but still waits the fill out,
        so hit/miss outcomes are independent of lookup timing.
        """
        st = self.stats
        l0 = self.l0[core]
        line = pc // (self.l0cfg.line_instrs * 4)
        pend = self.l0_pending[core]
        ready = pend.get(line)
        if ready is not None and ready <= cycle:
            del pend[line]
            ready = None
        entering = line != l0.last_line
        l0.last_line = line
        if line in l0.resident:
            st.l0_hits += 1
            if ready is not None:  # words still arriving from the fill
                st.stall_cycles += ready - cycle
            if entering and self.l0cfg.prefetch:
                self._prefetch_scan(core, line, cycle)
            return ready if ready is not None else cycle
        ready = self._request_fill(core, line, cycle)
        st.stall_cycles += ready - cycle
        if entering and self.l0cfg.prefetch:
            self._prefetch_scan(core, line, cycle)
        return ready


def replay(l0cfg: L0Config, l1cfg: L1IcacheConfig, trace: FetchTrace,
           cores: int = 1, record=False):
    """Replay a fetch trace on each core in lockstep; returns
    (IcacheStats, outcome list). Outcomes record per-fetch L0/L1 results
    for core 0 when record=True."""
    cache = TileICache(l0cfg, l1cfg, cores, trace.annotations)
    outcomes = [] if record else None
    cycle = 0
    for entry in trace.entries:
        before = (cache.stats.l0_hits, cache.stats.l1_hits,
                  cache.stats.l1_misses)
        ready = cycle
        for core in range(cores):
            ready = max(ready, cache.fetch(core, entry.pc, cycle))
        if record:
            after = (cache.stats.l0_hits, cache.stats.l1_hits,
                     cache.stats.l1_misses)
            outcomes.append((entry.pc,
                             after[0] - before[0],
                             after[1] - before[1],
                             after[2] - before[2]))
        cycle = ready + 1
    stats = cache.stats
    return stats, outcomes


def proxy_counts(variant: str, trace: FetchTrace, cores: int = 1) -> IcacheStats:
    """Replay a trace under a named cache organization and return its
    hit/miss and SRAM-access proxy counters."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown icache variant {variant!r}; "
                         f"choose from {sorted(VARIANTS)}")
    l0cfg, l1cfg = VARIANTS[variant]
    stats, _ = replay(l0cfg, l1cfg, trace, cores=cores)
    return stats
