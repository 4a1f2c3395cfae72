"""Cluster configuration: geometry, timing, and derived address widths.

Every other module derives its sizes from a ValidatedConfig produced here.
A configuration is immutable after validation and safe to share across
concurrent sweep workers.
"""

from dataclasses import dataclass, field


class ConfigError(Exception):
    """Invalid configuration. Carries the list of diagnostics."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class Diagnostic:
    """One validation failure: a machine-readable code plus the field."""

    code: str  # "non_power_of_two" | "seq_region_too_large" | "zero_count" | "bad_timing"
    field: str
    message: str

    def __str__(self):
        return f"{self.code}({self.field}): {self.message}"


@dataclass(frozen=True)
class ClusterGeometry:
    """Structural parameters of the cluster.

    Defaults describe the large configuration: 256 cores in 4 groups of
    16 tiles with 4 cores and 16 banks of 256 words each (1 MiB of L1).
    """

    cores_per_tile: int = 4
    tiles_per_group: int = 16
    groups: int = 4
    banks_per_tile: int = 16  # power of two
    bank_words: int = 256  # 32-bit words per bank, power of two
    seq_rows_per_bank: int = 32  # rows reserved for the sequential region

    @property
    def total_tiles(self) -> int:
        return self.tiles_per_group * self.groups

    @property
    def total_cores(self) -> int:
        return self.cores_per_tile * self.total_tiles

    @property
    def total_banks(self) -> int:
        return self.banks_per_tile * self.total_tiles

    @property
    def banking_factor(self) -> float:
        return self.total_banks / self.total_cores

    @property
    def l1_bytes(self) -> int:
        return self.total_banks * self.bank_words * 4


@dataclass(frozen=True)
class TimingParams:
    """Latency and bandwidth parameters, all overridable via config file.

    The three route latencies are zero-load round-trip (load-to-use)
    cycles.  l2_bandwidth is the aggregate system-memory bandwidth in
    bytes per cycle.
    """

    latency_local_tile: int = 1
    latency_local_group: int = 3
    latency_remote_group: int = 5
    l2_latency: int = 12
    l2_bandwidth: int = 256
    dma_setup: int = 30
    wakeup_latency: int = 1


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class ValidatedConfig:
    """Geometry + timing with derived bit widths.

    bank_bits / tile_bits / row_bits / seq_bits are the widths of the
    bank, tile, row, and sequential-offset fields of an L1 byte address
    (bytes occupy the two lowest bits).
    """

    geometry: ClusterGeometry
    timing: TimingParams
    queue_depth: int
    bank_bits: int
    tile_bits: int
    row_bits: int
    seq_bits: int

    @property
    def total_tiles(self) -> int:
        return self.geometry.total_tiles

    @property
    def total_cores(self) -> int:
        return self.geometry.total_cores

    @property
    def total_banks(self) -> int:
        return self.geometry.total_banks

    @property
    def l1_bytes(self) -> int:
        return self.geometry.l1_bytes

    @property
    def seq_region_bytes(self) -> int:
        """Total span of all sequential regions (first bytes of L1)."""
        return 1 << (self.tile_bits + self.seq_bits + self.bank_bits + 2)

    @property
    def tile_seq_bytes(self) -> int:
        """Sequential-region bytes owned by one tile."""
        return 1 << (self.seq_bits + self.bank_bits + 2)

    @property
    def l1_line_bytes(self) -> int:
        """One horizontal line of L1: one word in every bank."""
        return self.geometry.total_banks * 4


def diagnose(geometry: ClusterGeometry, timing: TimingParams, queue_depth: int = 2) -> list:
    """Return the list of Diagnostics for a configuration (empty if valid)."""
    diags = []
    g, t = geometry, timing

    for name in ("cores_per_tile", "tiles_per_group", "groups", "banks_per_tile",
                 "bank_words", "seq_rows_per_bank"):
        if getattr(g, name) <= 0:
            diags.append(Diagnostic("zero_count", name, "must be positive"))
    if diags:
        return diags

    if not _is_pow2(g.banks_per_tile):
        diags.append(Diagnostic("non_power_of_two", "banks_per_tile",
                                f"got {g.banks_per_tile}"))
    if not _is_pow2(g.total_tiles):
        diags.append(Diagnostic("non_power_of_two", "tiles_per_group*groups",
                                f"got {g.total_tiles}"))
    if not _is_pow2(g.bank_words):
        diags.append(Diagnostic("non_power_of_two", "bank_words",
                                f"got {g.bank_words}"))
    if not _is_pow2(g.seq_rows_per_bank):
        diags.append(Diagnostic("non_power_of_two", "seq_rows_per_bank",
                                f"got {g.seq_rows_per_bank}"))
    if g.seq_rows_per_bank > g.bank_words:
        diags.append(Diagnostic("seq_region_too_large", "seq_rows_per_bank",
                                f"{g.seq_rows_per_bank} rows > {g.bank_words} words per bank"))

    for name in ("latency_local_tile", "latency_local_group", "latency_remote_group",
                 "l2_latency", "wakeup_latency"):
        if getattr(t, name) < 1:
            diags.append(Diagnostic("bad_timing", name, "latency must be >= 1"))
    if not (t.latency_local_tile <= t.latency_local_group <= t.latency_remote_group):
        diags.append(Diagnostic("bad_timing", "latency_order",
                                "require local_tile <= local_group <= remote_group"))
    if t.l2_bandwidth < 1:
        diags.append(Diagnostic("bad_timing", "l2_bandwidth", "must be >= 1"))
    if t.dma_setup < 0:
        diags.append(Diagnostic("bad_timing", "dma_setup", "must be >= 0"))
    if queue_depth < 1:
        diags.append(Diagnostic("bad_timing", "queue_depth", "must be >= 1"))
    return diags


def validate(geometry: ClusterGeometry, timing: TimingParams | None = None,
             queue_depth: int = 2) -> ValidatedConfig:
    """Validate a configuration and derive address-field widths.

    Raises ConfigError carrying all diagnostics when invalid.
    """
    timing = timing if timing is not None else TimingParams()
    diags = diagnose(geometry, timing, queue_depth)
    if diags:
        raise ConfigError(diags)
    return ValidatedConfig(
        geometry=geometry,
        timing=timing,
        queue_depth=queue_depth,
        bank_bits=geometry.banks_per_tile.bit_length() - 1,
        tile_bits=geometry.total_tiles.bit_length() - 1,
        row_bits=geometry.bank_words.bit_length() - 1,
        seq_bits=geometry.seq_rows_per_bank.bit_length() - 1,
    )
