"""Deterministic cycle-by-cycle simulation kernel.

Requests move through a fixed sequence of sub-phases each cycle; every
contention point grants at most one request per cycle by round-robin.
The phase order makes zero-load round trips come out to exactly the
configured local-tile / local-group / remote-group latencies:

  1. deliver responses scheduled for this cycle to their cores
  2. response network moves one hop (final grants first, then pipes)
  3. cores present at most one new request each (staging)
  4. request network moves one hop: crossbar/butterfly output grants
     feed per-bank admission (cores, incoming ports, and DMA share one
     round-robin per bank), then pipeline registers shift, then staged
     remote requests enter their tile's tx FIFOs
  5. banks execute one operation each; responses enter the response
     FIFOs (one push per tile port per cycle) or, for local-tile
     requests, are scheduled for direct delivery

All grant decisions at a point depend only on that point's round-robin
pointer and the competing heads, never on set or dict iteration order,
so a run is bit-reproducible for a given seed and injection schedule.
Conservation (injected == completed + in flight) is audited against the
actual queue contents at a fixed interval and on drain.
"""

import enum
from collections import deque
from dataclasses import dataclass

from .topology import (
    NetworkModel,
    RouteKind,
    TopologyKind,
    UnsupportedGeometry,
    butterfly_path,
    hop_split,
)

MASK32 = 0xFFFFFFFF

OP_READ = 0
OP_WRITE = 1
OP_LR = 2
OP_SC = 3
OP_AMO = 4  # op - OP_AMO is the AmoKind


class AmoKind(enum.IntEnum):
    ADD = 0
    MAX = 1
    MAXU = 2
    MIN = 3
    MINU = 4
    AND = 5
    OR = 6
    XOR = 7
    SWAP = 8


def _signed(x: int) -> int:
    return x - 0x100000000 if x & 0x80000000 else x


def amo_apply(kind: AmoKind, old: int, operand: int) -> int:
    """New memory value for an atomic, per standard 32-bit semantics.

    The response always carries the old value; this returns what gets
    written back.
    """
    old &= MASK32
    operand &= MASK32
    if kind == AmoKind.ADD:
        return (old + operand) & MASK32
    if kind == AmoKind.MAX:
        return old if _signed(old) >= _signed(operand) else operand
    if kind == AmoKind.MAXU:
        return max(old, operand)
    if kind == AmoKind.MIN:
        return old if _signed(old) <= _signed(operand) else operand
    if kind == AmoKind.MINU:
        return min(old, operand)
    if kind == AmoKind.AND:
        return old & operand
    if kind == AmoKind.OR:
        return old | operand
    if kind == AmoKind.XOR:
        return old ^ operand
    if kind == AmoKind.SWAP:
        return operand
    raise ValueError(f"unknown AMO kind {kind}")


class Request:
    """One memory request in flight. Routing fields are precomputed at
    creation so the hot loops only read attributes."""

    __slots__ = ("rid", "owner", "op", "row", "operand", "addr", "cls", "dirn",
                 "path", "dst_tile", "bank", "tx_port", "resp_port",
                 "issue_cycle", "value")

    def __init__(self, rid, owner, op, row, operand, addr, cls, dirn, path,
                 dst_tile, bank, tx_port, resp_port):
        self.rid = rid
        self.owner = owner
        self.op = op
        self.row = row
        self.operand = operand
        self.addr = addr
        self.cls = cls
        self.dirn = dirn
        self.path = path
        self.dst_tile = dst_tile
        self.bank = bank
        self.tx_port = tx_port
        self.resp_port = resp_port
        self.issue_cycle = -1
        self.value = 0

    def __repr__(self):
        return (f"Request(rid={self.rid}, op={self.op}, addr={self.addr:#x}, "
                f"cls={self.cls}, dst_tile={self.dst_tile}, bank={self.bank})")


@dataclass(frozen=True)
class Response:
    req_id: int
    value: int
    complete_cycle: int


class BankState:
    """One SRAM bank: word storage plus the reservation register."""

    __slots__ = ("words", "reservation")

    def __init__(self, n_words: int):
        self.words = [0] * n_words
        self.reservation = None  # reserved row, valid until that word changes

    def execute(self, op: int, row: int, operand: int) -> int:
        """Apply one operation; returns the response value."""
        words = self.words
        if op == OP_READ:
            return words[row]
        if op == OP_WRITE:
            words[row] = operand & MASK32
            if self.reservation == row:
                self.reservation = None
            return 0
        if op == OP_LR:
            self.reservation = row
            return words[row]
        if op == OP_SC:
            if self.reservation == row:
                words[row] = operand & MASK32
                self.reservation = None
                return 0
            self.reservation = None
            return 1
        old = words[row]
        words[row] = amo_apply(AmoKind(op - OP_AMO), old, operand)
        if self.reservation == row:
            self.reservation = None
        return old


def lrsc(bank: BankState, req: Request, cycle: int = 0) -> Response:
    """Execute a load-reserved or store-conditional on a bank."""
    if req.op not in (OP_LR, OP_SC):
        raise ValueError("lrsc handles LR/SC requests only")
    value = bank.execute(req.op, req.row, req.operand)
    return Response(req.rid, value, cycle)


class DrainTimeout(Exception):
    """In-flight requests outlived the worst-case drain bound (engine bug)."""


class ConservationError(Exception):
    """Queue audit disagreed with the injected/completed counters."""


N_CLASSES = 3


class SimStats:
    """Per-window counters; conservation totals live on the Simulator."""

    def __init__(self, n_banks: int):
        self.bank_conflicts = [0] * n_banks
        self.reset()

    def reset(self):
        self.cycles_run = 0
        self.injected = 0
        self.completed = 0
        self.class_count = [0] * N_CLASSES
        self.class_lat_sum = [0] * N_CLASSES
        self.class_hist = [{}, {}, {}]  # latency -> count per route class
        self.bank_conflicts = [0] * len(self.bank_conflicts)

    @property
    def latency_hist(self) -> dict:
        merged = {}
        for h in self.class_hist:
            for lat, n in h.items():
                merged[lat] = merged.get(lat, 0) + n
        return merged

    def class_mean_latency(self, cls: int) -> float:
        n = self.class_count[cls]
        return self.class_lat_sum[cls] / n if n else float("nan")

    def mean_latency(self) -> float:
        n = sum(self.class_count)
        return sum(self.class_lat_sum) / n if n else float("nan")

    def latency_percentile(self, q: float) -> float:
        hist = self.latency_hist
        total = sum(hist.values())
        if not total:
            return float("nan")
        need = q * total
        seen = 0
        for lat in sorted(hist):
            seen += hist[lat]
            if seen >= need:
                return float(lat)
        return float(max(hist))


class _HybridNet:
    """Mutable queue state for the hybrid topology: one local crossbar
    per group plus one crossbar per ordered group pair.

    Ports are indexed by group offset: port 0 is the local crossbar,
    port d reaches group (g + d) mod G.  Remote ports have a pipeline
    register chain between the tx FIFO and the crossbar, so a remote
    request takes two hops where a local-group one takes one.
    """

    def __init__(self, sim):
        self.sim = sim
        cfg = sim.cfg
        g = cfg.geometry
        self.groups = g.groups
        self.tpg = g.tiles_per_group
        self.depth = cfg.queue_depth
        if cfg.timing.latency_local_group < 3 or cfg.timing.latency_remote_group < 3:
            raise UnsupportedGeometry(
                TopologyKind.HYBRID,
                "crossbar paths need at least one hop each way (latency >= 3)")
        req_hops, resp_hops = hop_split(cfg.timing.latency_remote_group)
        lg_req, lg_resp = hop_split(cfg.timing.latency_local_group)
        nt = g.total_tiles
        nports = self.groups  # port 0 local, port d = group offset d
        self.nports = nports

        def make_chains(local_len, remote_len):
            chains = []
            for _t in range(nt):
                for p in range(nports):
                    n = local_len if p == 0 else remote_len
                    chains.append([deque() for _ in range(n)])
            return chains

        self.req_out = [deque() for _ in range(nt * nports)]
        self.resp_out = [deque() for _ in range(nt * nports)]
        self.req_chain = make_chains(lg_req - 1, req_hops - 1)
        self.resp_chain = make_chains(lg_resp - 1, resp_hops - 1)
        # tiles whose arbitration input holds a request, per port
        self.req_ready = [set() for _ in range(nports)]
        self.resp_ready = [set() for _ in range(nports)]
        # (tile, port) pairs whose tx FIFO or non-tail chain stages hold requests
        self.req_pipe_busy = set()
        self.resp_pipe_busy = set()
        self.rr = {}

    # -- bank side ------------------------------------------------------

    def push_response(self, req, tile):
        """One response enters the (tile, port) response FIFO."""
        idx = tile * self.nports + req.resp_port
        self.resp_out[idx].append(req)
        if self.resp_chain[idx]:
            self.resp_pipe_busy.add((tile, req.resp_port))
        else:
            self.resp_ready[req.resp_port].add(tile)

    def response_fifo_free(self, tile, port):
        return len(self.resp_out[tile * self.nports + port]) < self.depth

    def stage_ok(self, tile, port):
        return len(self.req_out[tile * self.nports + port]) < self.depth

    def enqueue_request(self, req, tile, port):
        idx = tile * self.nports + port
        self.req_out[idx].append(req)
        if self.req_chain[idx]:
            self.req_pipe_busy.add((tile, port))
        else:
            self.req_ready[port].add(tile)

    # -- per-cycle moves --------------------------------------------------

    def _arb_input(self, chains, out, idx):
        chain = chains[idx]
        return chain[-1] if chain else out[idx]

    def _grants(self, port, ready, chains, out, tag):
        """One round-robin grant per crossbar output (destination tile);
        yields (winning tile, its queue, head request, rr key, next ptr)."""
        tpg = self.tpg
        nports = self.nports
        buckets = {}
        for tile in ready:
            q = self._arb_input(chains, out, tile * nports + port)
            buckets.setdefault(q[0].dst_tile, []).append((tile, q))
        rr = self.rr
        out_list = []
        for dst, cands in buckets.items():
            key = (tag, port, dst)
            if len(cands) == 1:
                tile, q = cands[0]
            else:
                ptr = rr.get(key, 0)
                bestd = 1 << 30
                for ctile, cq in cands:
                    d = (ctile % tpg - ptr) % tpg
                    if d < bestd:
                        bestd = d
                        tile, q = ctile, cq
            out_list.append((tile, q, q[0], key, (tile % tpg + 1) % tpg))
        return out_list

    def _shift_pipes(self, busy, chains, out, ready):
        # inter-group pipeline stages are single registers, not FIFOs
        nports = self.nports
        done = []
        for tile, port in busy:
            idx = tile * nports + port
            chain = chains[idx]
            for j in range(len(chain) - 1, 0, -1):
                if chain[j - 1] and not chain[j]:
                    chain[j].append(chain[j - 1].popleft())
            fifo = out[idx]
            if fifo and not chain[0]:
                chain[0].append(fifo.popleft())
            if chain[-1]:
                ready[port].add(tile)
            if not fifo and not any(chain[:-1]):
                done.append((tile, port))
        for key in done:
            busy.discard(key)

    def move_responses(self):
        sim = self.sim
        deliver = sim._ring[(sim.cycle + 1) % sim._ring_len]
        claim = sim.claim_resp_port
        for port in range(self.nports):
            ready = self.resp_ready[port]
            if not ready:
                continue
            for tile, q, head, key, nptr in self._grants(
                    port, tuple(ready), self.resp_chain, self.resp_out, "rs"):
                if not claim(head.owner):
                    continue  # core retires one response per cycle
                deliver.append(head)
                q.popleft()
                self.rr[key] = nptr
                if not q:
                    ready.discard(tile)
        if self.resp_pipe_busy:
            self._shift_pipes(self.resp_pipe_busy, self.resp_chain,
                              self.resp_out, self.resp_ready)

    def gather_rx(self, rx):
        """Crossbar output grants become per-tile bank-admission candidates."""
        ncores = self.sim.cores_per_tile
        for port in range(self.nports):
            ready = self.req_ready[port]
            if not ready:
                continue
            for tile, q, head, key, nptr in self._grants(
                    port, tuple(ready), self.req_chain, self.req_out, "rq"):
                rx.setdefault(head.dst_tile, []).append(
                    (ncores + port, head, (q, key, nptr, ready, tile)))

    def commit_rx(self, info):
        q, key, nptr, ready, tile = info
        q.popleft()
        self.rr[key] = nptr
        if not q:
            ready.discard(tile)

    def after_admission(self):
        if self.req_pipe_busy:
            self._shift_pipes(self.req_pipe_busy, self.req_chain,
                              self.req_out, self.req_ready)

    def occupancy(self) -> int:
        n = 0
        for q in self.req_out:
            n += len(q)
        for q in self.resp_out:
            n += len(q)
        for chains in (self.req_chain, self.resp_chain):
            for chain in chains:
                for q in chain:
                    n += len(q)
        return n


class _ButterflyNet:
    """Mutable state for the radix-4 butterfly topologies (one lane for
    topology one, one lane per core slot for topology four).

    The midway register file splits the switch layers into two halves;
    a request crosses one half per cycle, winning a round-robin grant
    at every switch output on the way (head-of-line blocking included).
    """

    def __init__(self, sim, lanes: int):
        self.sim = sim
        cfg = sim.cfg
        if cfg.timing.latency_remote_group != 5:
            raise UnsupportedGeometry(
                sim.network.kind,
                "the butterfly model is the fixed 2+1+2 pipeline; "
                "latency_remote_group must be 5")
        self.lanes = lanes
        self.nt = cfg.geometry.total_tiles
        self.depth = cfg.queue_depth
        net: NetworkModel = sim.network
        self.layers = net.layers
        self.mid_at = net.midpoint_layer  # layers [0, mid_at) are the first half
        nt = self.nt
        self.req_out = [deque() for _ in range(nt * lanes)]
        self.resp_out = [deque() for _ in range(nt * lanes)]
        self.req_mid = [deque() for _ in range(nt * lanes)]
        self.resp_mid = [deque() for _ in range(nt * lanes)]
        self.req_ready = [set() for _ in range(lanes)]    # tiles with tx head
        self.resp_ready = [set() for _ in range(lanes)]
        self.req_mid_busy = [set() for _ in range(lanes)]  # occupied mid nodes
        self.resp_mid_busy = [set() for _ in range(lanes)]
        self.rr = {}

    def push_response(self, req, tile):
        lane = req.resp_port
        req.path = butterfly_path(tile, req.owner.tile, self.layers)
        self.resp_out[tile * self.lanes + lane].append(req)
        self.resp_ready[lane].add(tile)

    def response_fifo_free(self, tile, port):
        return len(self.resp_out[tile * self.lanes + port]) < self.depth

    def stage_ok(self, tile, port):
        return len(self.req_out[tile * self.lanes + port]) < self.depth

    def enqueue_request(self, req, tile, port):
        self.req_out[tile * self.lanes + port].append(req)
        self.req_ready[port].add(tile)

    def _half(self, lane, items, layer_range, tag):
        """Greedy layer-by-layer arbitration: one winner per switch output.

        items are (cyclic_key, queue, head) triples; survivors of all
        layers in layer_range are returned.
        """
        rr = self.rr
        nt = self.nt
        survivors = items
        for layer in layer_range:
            buckets = {}
            for item in survivors:
                buckets.setdefault(item[2].path[layer], []).append(item)
            survivors = []
            for node, cands in buckets.items():
                if len(cands) == 1:
                    survivors.append(cands[0])
                    continue
                ptr = rr.get((tag, lane, layer, node), 0)
                best = None
                bestd = 1 << 30
                for item in cands:
                    d = (item[0] - ptr) % nt
                    if d < bestd:
                        bestd = d
                        best = item
                survivors.append(best)
        return survivors

    def _advance(self, lane, item, layer_range, tag):
        key, _q, head = item
        nxt = (key + 1) % self.nt
        for layer in layer_range:
            self.rr[(tag, lane, layer, head.path[layer])] = nxt

    def move_responses(self):
        sim = self.sim
        deliver = sim._ring[(sim.cycle + 1) % sim._ring_len]
        claim = sim.claim_resp_port
        for lane in range(self.lanes):
            busy = self.resp_mid_busy[lane]
            if busy:  # second half: midway registers -> requesting tiles
                items = [(node, self.resp_mid[node * self.lanes + lane],
                          self.resp_mid[node * self.lanes + lane][0])
                         for node in busy]
                rng = range(self.mid_at, self.layers)
                for item in self._half(lane, items, rng, "rs"):
                    node, q, head = item
                    if not claim(head.owner):
                        continue
                    deliver.append(head)
                    q.popleft()
                    self._advance(lane, item, rng, "rs")
                    if not q:
                        busy.discard(node)
            ready = self.resp_ready[lane]
            if ready:  # first half: response FIFOs -> midway registers
                items = [(tile, self.resp_out[tile * self.lanes + lane],
                          self.resp_out[tile * self.lanes + lane][0])
                         for tile in ready]
                rng = range(self.mid_at)
                for item in self._half(lane, items, rng, "rf"):
                    tile, q, head = item
                    node = head.path[self.mid_at - 1]
                    mid = self.resp_mid[node * self.lanes + lane]
                    if len(mid) < self.depth:
                        mid.append(head)
                        q.popleft()
                        self._advance(lane, item, rng, "rf")
                        self.resp_mid_busy[lane].add(node)
                        if not q:
                            ready.discard(tile)

    def gather_rx(self, rx):
        ncores = self.sim.cores_per_tile
        for lane in range(self.lanes):
            busy = self.req_mid_busy[lane]
            if not busy:
                continue
            items = [(node, self.req_mid[node * self.lanes + lane],
                      self.req_mid[node * self.lanes + lane][0])
                     for node in busy]
            rng = range(self.mid_at, self.layers)
            for item in self._half(lane, items, rng, "qs"):
                node, q, head = item
                rx.setdefault(head.dst_tile, []).append(
                    (ncores + lane, head, (q, None, lane, node, item, rng)))

    def commit_rx(self, info):
        q, _none, lane, node, item, rng = info
        q.popleft()
        self._advance(lane, item, rng, "qs")
        if not q:
            self.req_mid_busy[lane].discard(node)

    def after_admission(self):
        for lane in range(self.lanes):
            ready = self.req_ready[lane]
            if not ready:
                continue
            items = [(tile, self.req_out[tile * self.lanes + lane],
                      self.req_out[tile * self.lanes + lane][0])
                     for tile in ready]
            rng = range(self.mid_at)
            for item in self._half(lane, items, rng, "qf"):
                tile, q, head = item
                node = head.path[self.mid_at - 1]
                mid = self.req_mid[node * self.lanes + lane]
                if len(mid) < self.depth:
                    mid.append(head)
                    q.popleft()
                    self._advance(lane, item, rng, "qf")
                    self.req_mid_busy[lane].add(node)
                    if not q:
                        ready.discard(tile)

    def occupancy(self) -> int:
        n = 0
        for group in (self.req_out, self.resp_out, self.req_mid, self.resp_mid):
            for q in group:
                n += len(q)
        return n


class Simulator:
    """One deterministic simulation instance over a validated config, a
    network model, and a list of agents (traffic or kernel drivers).

    Agents implement stage(sim, cycle) and create requests through
    new_request() / stage_request(); request owners get on_accept,
    on_reject, and on_response callbacks.  One instance is
    single-threaded; run independent instances for concurrent sweeps.
    """

    AUDIT_INTERVAL = 1024

    def __init__(self, cfg, network: NetworkModel, agents=(), audit: bool = True):
        from .addrmap import AddressLayout

        self.cfg = cfg
        self.network = network
        self.agents = list(agents)
        self.layout = AddressLayout.from_config(cfg)
        self.audit = audit

        g = cfg.geometry
        self.n_tiles = g.total_tiles
        self.cores_per_tile = g.cores_per_tile
        self.banks_per_tile = g.banks_per_tile
        self.tiles_per_group = g.tiles_per_group
        self.groups = g.groups
        nb = g.total_banks
        self.bank_state = [BankState(g.bank_words) for _ in range(nb)]
        self.bank_q = [deque() for _ in range(nb)]
        self.bank_rr = [0] * nb
        self.active_banks = set()
        self.queue_depth = cfg.queue_depth

        if network.kind is TopologyKind.HYBRID:
            self.net = _HybridNet(self)
            self._tx_ports = self.groups
        else:
            self.net = _ButterflyNet(self, network.lanes)
            self._tx_ports = network.lanes
        self._rx_rank_count = self.cores_per_tile + self._tx_ports + 1
        self._dma_rank = self._rx_rank_count - 1

        self.cycle = 0
        self.rid = 0
        self.injected_total = 0
        self.completed_total = 0
        self.in_flight = 0
        self._ring_len = max(cfg.timing.latency_local_tile, 1) + 2
        self._ring = [[] for _ in range(self._ring_len)]
        self._local_delay = cfg.timing.latency_local_tile
        self._resp_taken = {}
        self.stats = SimStats(nb)
        nt = self.n_tiles
        self._staged_local = [[] for _ in range(nt)]
        self._staged_tiles = []
        self._staged_port = [[] for _ in range(nt * self._tx_ports)]
        self._staged_port_keys = []
        self._staged_dma = [[] for _ in range(nt)]

        lay = self.layout
        self._lo = lay.byte_bits + lay.bank_bits
        self._bmask = (1 << lay.bank_bits) - 1
        self._tmask = (1 << lay.tile_bits) - 1
        self._span = lay.seq_span_bytes
        self._smask = (1 << lay.seq_bits) - 1

    # -- request construction -------------------------------------------

    def new_request(self, owner, op, logical_addr, operand=0):
        """Build a fully routed request from a logical byte address."""
        addr = logical_addr
        if addr < self._span:  # scramble into the physical map
            lo = self._lo
            s = self.layout.seq_bits
            keep = (1 << lo) - 1
            addr = ((addr & keep)
                    | (((addr >> (lo + s)) & self._tmask) << lo)
                    | (((addr >> lo) & self._smask) << (lo + self.layout.tile_bits)))
        bank = (addr >> 2) & self._bmask
        dst_tile = (addr >> self._lo) & self._tmask
        row = addr >> (self._lo + self.layout.tile_bits)
        src_tile = owner.tile
        kind = self.network.kind
        if dst_tile == src_tile:
            cls, dirn, path, tx, resp = RouteKind.LOCAL_TILE, 0, None, -1, None
        else:
            src_g = src_tile // self.tiles_per_group
            dst_g = dst_tile // self.tiles_per_group
            cls = RouteKind.LOCAL_GROUP if src_g == dst_g else RouteKind.REMOTE_GROUP
            if kind is TopologyKind.HYBRID:
                dirn = (dst_g - src_g) % self.groups
                path = None
                tx = dirn  # port 0 is the local crossbar
                resp = (self.groups - dirn) % self.groups
            else:
                lane = owner.slot if kind is TopologyKind.FOUR else 0
                dirn = lane
                path = butterfly_path(src_tile, dst_tile, self.network.layers)
                tx = lane
                resp = lane
        self.rid += 1
        return Request(self.rid, owner, op, row, operand, addr,
                       int(cls), dirn, path, dst_tile, bank, tx, resp)

    def stage_request(self, req):
        """Present a request for injection this cycle (phase 3)."""
        if req.resp_port is None:
            lst = self._staged_local[req.dst_tile]
            if not lst:
                self._staged_tiles.append(req.dst_tile)
            lst.append((req.owner.slot, req))
        else:
            key = req.owner.tile * self._tx_ports + req.tx_port
            lst = self._staged_port[key]
            if not lst:
                self._staged_port_keys.append(key)
            lst.append((req.owner.slot, req))

    def stage_dma(self, req, tile):
        """Present a DMA word operation at a tile's bank crossbar."""
        if not self._staged_dma[tile]:
            self._staged_tiles.append(tile)
        self._staged_dma[tile].append(req)

    # -- cycle loop -------------------------------------------------------

    def claim_resp_port(self, owner) -> bool:
        """Reserve a core's remote-response retire slot for this cycle.

        A core retires at most one crossbar response per cycle; the
        local-tile path uses the second register-file write port and is
        not limited.  DMA backends (core < 0) are never limited.
        """
        core = owner.core
        if core < 0:
            return True
        taken = self._resp_taken
        if core in taken:
            return False
        taken[core] = True
        return True

    def step(self, inject: bool = True):
        cycle = self.cycle
        stats = self.stats
        self._resp_taken.clear()

        # 1. deliver
        deliver = self._ring[cycle % self._ring_len]
        if deliver:
            completed = len(deliver)
            stats.completed += completed
            self.completed_total += completed
            self.in_flight -= completed
            class_count = stats.class_count
            class_sum = stats.class_lat_sum
            for req in deliver:
                lat = cycle - req.issue_cycle
                cls = req.cls
                class_count[cls] += 1
                class_sum[cls] += lat
                hist = stats.class_hist[cls]
                hist[lat] = hist.get(lat, 0) + 1
                req.owner.on_response(req, req.value, cycle)
            deliver.clear()

        # 2. response network
        self.net.move_responses()

        # 3. PE staging
        if inject:
            for agent in self.agents:
                agent.stage(self, cycle)

        # 4. request network + admissions
        rx = {}
        self.net.gather_rx(rx)
        if rx or self._staged_tiles:
            self._admit_banks(rx, cycle)
        self.net.after_admission()
        if self._staged_port_keys:
            self._admit_tx(cycle)

        # 5. banks
        if self.active_banks:
            self._execute_banks(cycle)

        stats.cycles_run += 1
        self.cycle = cycle + 1
        if self.audit and self.cycle % self.AUDIT_INTERVAL == 0:
            self.check_conservation()

    def _admit_banks(self, rx, cycle):
        B = self.banks_per_tile
        depth = self.queue_depth
        nranks = self._rx_rank_count
        for tile in self._staged_tiles:
            if tile not in rx:
                rx[tile] = []
        self._staged_tiles.clear()
        for tile, cands in rx.items():
            staged = self._staged_local[tile]
            if staged:
                cands.extend(staged)
                staged.clear()
            dma = self._staged_dma[tile]
            if dma:
                rank = self._dma_rank
                cands.extend((rank, req) for req in dma)
                dma.clear()
            if len(cands) == 1:
                buckets = {cands[0][1].bank: cands}
            else:
                buckets = {}
                for cand in cands:
                    buckets.setdefault(cand[1].bank, []).append(cand)
            base = tile * B
            for bank, blist in buckets.items():
                idx = base + bank
                q = self.bank_q[idx]
                space = depth - len(q)
                ptr = self.bank_rr[idx]
                if len(blist) > 1:
                    blist.sort(key=lambda c: (c[0] - ptr) % nranks)
                for cand in blist:
                    req = cand[1]
                    if space > 0:
                        space -= 1
                        q.append(req)
                        if len(q) == 1:
                            self.active_banks.add(idx)
                        self.bank_rr[idx] = (cand[0] + 1) % nranks
                        if len(cand) == 2:  # staged by a core or a DMA agent
                            if req.issue_cycle < 0:
                                req.issue_cycle = cycle
                            self.injected_total += 1
                            self.stats.injected += 1
                            self.in_flight += 1
                            req.owner.on_accept(req, cycle)
                        else:  # network rx: pop the input queue it came from
                            self.net.commit_rx(cand[2])
                    elif len(cand) == 2:
                        req.owner.on_reject(req, cycle)
                    # rejected rx candidates stay in their input queues

    def _admit_tx(self, cycle):
        net = self.net
        ports = self._tx_ports
        ncores = self.cores_per_tile
        rr = net.rr
        for key in self._staged_port_keys:
            cands = self._staged_port[key]
            tile, port = divmod(key, ports)
            if len(cands) == 1:
                best = cands[0]
            else:
                ptr = rr.get(("tx", key), 0)
                best = None
                bestd = 1 << 30
                for cand in cands:
                    d = (cand[0] - ptr) % ncores
                    if d < bestd:
                        bestd = d
                        best = cand
            if net.stage_ok(tile, port):
                slot, req = best
                net.enqueue_request(req, tile, port)
                rr[("tx", key)] = (slot + 1) % ncores
                if req.issue_cycle < 0:
                    req.issue_cycle = cycle
                self.injected_total += 1
                self.stats.injected += 1
                self.in_flight += 1
                req.owner.on_accept(req, cycle)
                for cand in cands:
                    if cand is not best:
                        cand[1].owner.on_reject(cand[1], cycle)
            else:
                for cand in cands:
                    cand[1].owner.on_reject(cand[1], cycle)
            cands.clear()
        self._staged_port_keys.clear()

    def _execute_banks(self, cycle):
        B = self.banks_per_tile
        stats = self.stats
        net = self.net
        deliver_local = self._ring[(cycle + self._local_delay) % self._ring_len]
        resp_cands = {}
        executed = []
        for idx in self.active_banks:
            head = self.bank_q[idx][0]
            if head.resp_port is None:
                # local-tile responses retire on the short-latency register
                # write port; only crossbar responses share the other one
                executed.append(idx)
            else:
                resp_cands.setdefault((idx // B, head.resp_port), []).append(idx)
        for (tile, port), cands in resp_cands.items():
            if not net.response_fifo_free(tile, port):
                continue  # response port backpressure stalls these banks
            if len(cands) == 1:
                executed.append(cands[0])
                continue
            key = ("bankresp", tile, port)
            ptr = net.rr.get(key, 0)
            best = None
            bestd = 1 << 30
            for idx in cands:
                d = (idx - ptr) % B
                if d < bestd:
                    bestd = d
                    best = idx
            net.rr[key] = (best + 1) % B
            executed.append(best)
        bank_conflicts = stats.bank_conflicts
        for idx in executed:
            q = self.bank_q[idx]
            req = q.popleft()
            if q:
                bank_conflicts[idx] += 1
            else:
                self.active_banks.discard(idx)
            req.value = self.bank_state[idx].execute(req.op, req.row, req.operand)
            if req.resp_port is None:
                deliver_local.append(req)
            else:
                net.push_response(req, idx // B)

    # -- run control ------------------------------------------------------

    def run(self, cycles: int, inject: bool = True):
        step = self.step
        for _ in range(cycles):
            step(inject)

    def drain(self, max_cycles: int | None = None) -> SimStats:
        """Step without injection until nothing is in flight."""
        if max_cycles is None:
            max_cycles = (64 * (self.in_flight + 1)
                          + 16 * self.cfg.timing.latency_remote_group + 256)
        waited = 0
        while self.in_flight > 0:
            if waited >= max_cycles:
                raise DrainTimeout(f"{self.in_flight} requests stuck after "
                                   f"{waited} drain cycles")
            self.step(inject=False)
            waited += 1
        self.check_conservation()
        return self.stats

    def reset_window(self):
        self.stats.reset()
        for agent in self.agents:
            if hasattr(agent, "reset_window"):
                agent.reset_window()

    def check_conservation(self):
        queued = self.net.occupancy()
        queued += sum(len(q) for q in self.bank_q)
        queued += sum(len(bucket) for bucket in self._ring)
        if queued != self.in_flight or \
                self.injected_total != self.completed_total + self.in_flight:
            raise ConservationError(
                f"cycle {self.cycle}: injected={self.injected_total} "
                f"completed={self.completed_total} in_flight={self.in_flight} "
                f"queued={queued}")
