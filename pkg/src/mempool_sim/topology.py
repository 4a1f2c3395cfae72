"""The three L1 interconnect topologies as explicit switch graphs.

one     a single remote port per tile into one radix-4 butterfly spanning
        all tiles, with a pipeline register midway through its layers.
four    four remote ports per tile (one per core slot) into four
        independent butterflies.
hybrid  four remote ports per tile: a fully connected crossbar between
        the tiles of a group, plus one crossbar per ordered group pair.

Route classes are derived from tile indices alone; the two butterfly
topologies serve every non-local request at the remote-group latency,
while the hybrid network gives same-group requests the shorter
local-group path.
"""

import enum
from dataclasses import dataclass

from .geometry import TimingParams, ValidatedConfig

BUTTERFLY_RADIX = 4


class TopologyKind(enum.Enum):
    ONE = "one"
    FOUR = "four"
    HYBRID = "hybrid"


class RouteKind(enum.IntEnum):
    LOCAL_TILE = 0
    LOCAL_GROUP = 1
    REMOTE_GROUP = 2


class Direction(enum.IntEnum):
    """Remote-group crossbar served by a request, named by the group-index
    offset (dst_group - src_group) mod groups."""

    NORTH = 1
    NORTHEAST = 2
    EAST = 3


@dataclass(frozen=True)
class RouteClass:
    kind: RouteKind
    direction: Direction | None = None

    def __post_init__(self):
        if (self.direction is not None) != (self.kind == RouteKind.REMOTE_GROUP):
            raise ValueError("direction is defined exactly for remote-group routes")


class UnsupportedGeometry(Exception):
    def __init__(self, kind: TopologyKind, reason: str):
        self.kind = kind
        self.reason = reason
        super().__init__(f"{kind.value}: {reason}")


def classify(src_tile: int, dst_tile: int, cfg: ValidatedConfig) -> RouteClass:
    """Route class between two tile indices."""
    if src_tile == dst_tile:
        return RouteClass(RouteKind.LOCAL_TILE)
    t = cfg.geometry.tiles_per_group
    src_group, dst_group = src_tile // t, dst_tile // t
    if src_group == dst_group:
        return RouteClass(RouteKind.LOCAL_GROUP)
    offset = (dst_group - src_group) % cfg.geometry.groups
    return RouteClass(RouteKind.REMOTE_GROUP, Direction(offset))


def zero_load_latency(route: RouteClass, timing: TimingParams) -> int:
    """Uncontended round-trip cycles for a route class."""
    if route.kind == RouteKind.LOCAL_TILE:
        return timing.latency_local_tile
    if route.kind == RouteKind.LOCAL_GROUP:
        return timing.latency_local_group
    return timing.latency_remote_group


def hop_split(latency: int) -> tuple[int, int]:
    """Split a round-trip latency into (request hops, response hops).

    One cycle is always the bank access; the remainder is split evenly
    with the request path taking the odd cycle.
    """
    if latency < 1:
        raise ValueError("latency must be >= 1")
    req = latency // 2
    return req, latency - 1 - req


@dataclass(frozen=True)
class SwitchSpec:
    """One arbitration point of the network."""

    name: str
    inputs: int
    outputs: int
    policy: str = "round_robin"
    pipeline_depth: int = 0  # registers on the output side


def butterfly_layers(n_ports: int) -> int:
    layers = 0
    n = 1
    while n < n_ports:
        n *= BUTTERFLY_RADIX
        layers += 1
    if n != n_ports:
        raise ValueError(f"{n_ports} ports is not a power of {BUTTERFLY_RADIX}")
    return max(layers, 1)


def butterfly_path(src: int, dst: int, layers: int) -> list[int]:
    """Virtual node index after each switch layer (destination-tag routing).

    After layer i the address has its i most-significant radix-4 digits
    replaced by the destination's.  Entry layers-1 equals dst.  Two
    requests conflict at layer i exactly when their node indices after
    that layer coincide.
    """
    nodes = []
    v = src
    for i in range(layers):
        pos = layers - 1 - i
        place = BUTTERFLY_RADIX ** pos
        v = v - ((v // place) % BUTTERFLY_RADIX) * place \
              + ((dst // place) % BUTTERFLY_RADIX) * place
        nodes.append(v)
    return nodes


@dataclass(frozen=True)
class NetworkModel:
    """Immutable structure of one topology instance.

    switches lists every arbitration point; the engine instantiates the
    matching mutable queue state.  midpoint_layer (butterflies only) is
    the layer index after which requests land in the midway registers.
    """

    kind: TopologyKind
    cfg: ValidatedConfig
    switches: tuple
    tile_tx_ports: int
    tile_rx_ports: int
    layers: int = 0  # butterfly layers (0 for hybrid)
    midpoint_layer: int = 0
    lanes: int = 1  # parallel butterflies (topology four)

    def route_latency(self, src_tile: int, dst_tile: int) -> int:
        """Zero-load round-trip latency of the unique (src, dst) route."""
        timing = self.cfg.timing
        if src_tile == dst_tile:
            return timing.latency_local_tile
        if self.kind is TopologyKind.HYBRID:
            rc = classify(src_tile, dst_tile, self.cfg)
            return zero_load_latency(rc, timing)
        return timing.latency_remote_group

    def request_route(self, src_tile: int, dst_tile: int) -> list[int]:
        """Butterfly switch-output nodes traversed by a request."""
        if self.kind is TopologyKind.HYBRID:
            raise ValueError("hybrid routes are crossbar hops, not butterfly nodes")
        return butterfly_path(src_tile, dst_tile, self.layers)


def build(kind: TopologyKind, cfg: ValidatedConfig) -> NetworkModel:
    """Construct the switch graph for a topology over a validated config."""
    g = cfg.geometry
    n_tiles = g.total_tiles

    if kind in (TopologyKind.ONE, TopologyKind.FOUR):
        try:
            layers = butterfly_layers(n_tiles)
        except ValueError as exc:
            raise UnsupportedGeometry(kind, str(exc)) from None
        lanes = 1 if kind is TopologyKind.ONE else g.cores_per_tile
        midpoint = (layers + 1) // 2
        switches = []
        per_layer = max(n_tiles // BUTTERFLY_RADIX, 1)
        for lane in range(lanes):
            for layer in range(layers):
                depth = 1 if layer == midpoint - 1 else 0
                for s in range(per_layer):
                    switches.append(SwitchSpec(
                        name=f"bfly{lane}.l{layer}.s{s}",
                        inputs=BUTTERFLY_RADIX, outputs=BUTTERFLY_RADIX,
                        pipeline_depth=depth))
        return NetworkModel(kind=kind, cfg=cfg, switches=tuple(switches),
                            tile_tx_ports=lanes, tile_rx_ports=lanes,
                            layers=layers, midpoint_layer=midpoint, lanes=lanes)

    if kind is TopologyKind.HYBRID:
        if g.groups > 4:
            raise UnsupportedGeometry(kind, f"{g.groups} groups: pairwise crossbars "
                                            "are named for at most 4 groups")
        t = g.tiles_per_group
        switches = []
        for grp in range(g.groups):
            switches.append(SwitchSpec(name=f"g{grp}.local", inputs=t, outputs=t,
                                       pipeline_depth=0))
            for off in range(1, g.groups):
                switches.append(SwitchSpec(
                    name=f"g{grp}.{Direction(off).name.lower()}",
                    inputs=t, outputs=t, pipeline_depth=1))
        return NetworkModel(kind=kind, cfg=cfg, switches=tuple(switches),
                            tile_tx_ports=g.groups, tile_rx_ports=g.groups)

    raise UnsupportedGeometry(kind, "unknown topology kind")
