"""L1 address decomposition and the hybrid scrambling transform.

Interleaved layout of an L1 byte address (bit 0 on the right)::

    | row offset | tile | bank | byte |
      ...          t      b      2

Consecutive words walk the banks of one tile, then the tiles, so plain
increments spread across the whole cluster.  The scrambler turns the
first 2^(t+s+b+2) bytes into 2^t per-tile *sequential regions*: inside
that span it swaps the s bits just above the bank field with the t tile
bits above them, so incrementing an address walks the rows of one tile's
banks while the tile stays fixed.  Byte and bank bits are never touched,
keeping accesses within a region interleaved across the tile's banks.
Addresses at or above the sequential span pass through unchanged.

Workloads operate on logical (pre-scramble) addresses; the interconnect
routes physical (post-scramble) addresses.  All functions accept plain
ints or numpy integer arrays.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import ValidatedConfig


class AddressRangeError(ValueError):
    """Address outside the L1 address space."""


@dataclass(frozen=True)
class AddressLayout:
    """Bit-field widths of an L1 address. byte_bits is always 2."""

    bank_bits: int
    tile_bits: int
    seq_bits: int
    row_bits: int
    byte_bits: int = 2

    @classmethod
    def from_config(cls, cfg: ValidatedConfig) -> "AddressLayout":
        return cls(bank_bits=cfg.bank_bits, tile_bits=cfg.tile_bits,
                   seq_bits=cfg.seq_bits, row_bits=cfg.row_bits)

    @property
    def l1_bytes(self) -> int:
        return 1 << (self.byte_bits + self.bank_bits + self.tile_bits + self.row_bits)

    @property
    def seq_span_bytes(self) -> int:
        """Total span covered by all sequential regions."""
        return 1 << (self.byte_bits + self.bank_bits + self.tile_bits + self.seq_bits)

    @property
    def tile_seq_bytes(self) -> int:
        """Bytes of sequential region owned by a single tile."""
        return 1 << (self.byte_bits + self.bank_bits + self.seq_bits)

    def __post_init__(self):
        if self.seq_bits > self.row_bits:
            raise ValueError("sequential rows exceed bank rows")
        if min(self.bank_bits, self.tile_bits, self.seq_bits, self.row_bits) < 0:
            raise ValueError("negative field width")


@dataclass(frozen=True)
class PhysicalLocation:
    """Decoded physical position of an L1 byte address."""

    tile: int
    bank: int
    row: int
    byte: int


@dataclass(frozen=True)
class Region:
    """Classification of a logical address: a tile's sequential region
    (owner_tile set) or the interleaved remainder of L1 (owner_tile None)."""

    owner_tile: int | None = None

    @property
    def is_sequential(self) -> bool:
        return self.owner_tile is not None


INTERLEAVED = Region()


def _check_range(addr, layout: AddressLayout):
    limit = layout.l1_bytes
    if isinstance(addr, np.ndarray):
        if addr.size and (int(addr.min()) < 0 or int(addr.max()) >= limit):
            raise AddressRangeError(f"address out of range [0, {limit})")
    elif addr < 0 or addr >= limit:
        raise AddressRangeError(f"address {addr:#x} out of range [0, {limit:#x})")


def scramble(addr, layout: AddressLayout):
    """Logical byte address -> physical byte address.

    Identity outside the sequential span; inside it, the tile field is
    filled from the s bits above it and the displaced tile bits land at
    the bottom of the row field.
    """
    _check_range(addr, layout)
    lo = layout.byte_bits + layout.bank_bits
    t, s = layout.tile_bits, layout.seq_bits
    span = layout.seq_span_bytes
    keep = (1 << lo) - 1
    new_tile = (addr >> (lo + s)) & ((1 << t) - 1)
    new_rows = (addr >> lo) & ((1 << s) - 1)
    out = (addr & keep) | (new_tile << lo) | (new_rows << (lo + t))
    if isinstance(addr, np.ndarray):
        return np.where(addr < span, out, addr)
    return out if addr < span else addr


def descramble(addr, layout: AddressLayout):
    """Physical byte address -> logical byte address (inverse of scramble)."""
    _check_range(addr, layout)
    lo = layout.byte_bits + layout.bank_bits
    t, s = layout.tile_bits, layout.seq_bits
    span = layout.seq_span_bytes
    keep = (1 << lo) - 1
    tile_field = (addr >> lo) & ((1 << t) - 1)
    row_field = (addr >> (lo + t)) & ((1 << s) - 1)
    out = (addr & keep) | (row_field << lo) | (tile_field << (lo + s))
    if isinstance(addr, np.ndarray):
        return np.where(addr < span, out, addr)
    return out if addr < span else addr


def locate(addr, layout: AddressLayout) -> PhysicalLocation:
    """Decode a physical address into (tile, bank, row, byte)."""
    _check_range(addr, layout)
    lo = layout.byte_bits + layout.bank_bits
    return PhysicalLocation(
        tile=(addr >> lo) & ((1 << layout.tile_bits) - 1),
        bank=(addr >> layout.byte_bits) & ((1 << layout.bank_bits) - 1),
        row=addr >> (lo + layout.tile_bits),
        byte=addr & ((1 << layout.byte_bits) - 1),
    )


def region_of(addr, layout: AddressLayout) -> Region:
    """Classify a logical address as Sequential(owner) or Interleaved."""
    _check_range(addr, layout)
    if addr < layout.seq_span_bytes:
        return Region(owner_tile=addr >> (layout.byte_bits + layout.bank_bits + layout.seq_bits))
    return INTERLEAVED
