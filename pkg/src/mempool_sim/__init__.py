"""Cycle-level simulator of a shared-L1 manycore cluster.

The cluster is organised as tiles (a few cores plus a slice of SRAM banks
behind a fully connected crossbar), groups of tiles, and a cluster of
groups.  The package models the processor-to-L1 interconnect at the level
of individual requests and cycles, the hybrid address-scrambling scheme
that creates per-tile sequential regions, the instruction-cache hierarchy,
and the distributed DMA engine feeding the cluster from system memory.
"""

__version__ = "0.1.0"

from .geometry import ClusterGeometry, TimingParams, ValidatedConfig, validate
from .addrmap import AddressLayout, PhysicalLocation, Region
from .topology import TopologyKind, RouteClass, RouteKind, Direction

__all__ = [
    "__version__",
    "ClusterGeometry",
    "TimingParams",
    "ValidatedConfig",
    "validate",
    "AddressLayout",
    "PhysicalLocation",
    "Region",
    "TopologyKind",
    "RouteClass",
    "RouteKind",
    "Direction",
]
