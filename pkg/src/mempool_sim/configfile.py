"""Config-file loading: flat INI-style sections [geometry], [timing],
[workload], and [sweep].  Unknown sections or keys are errors, so typos
fail loudly instead of silently running defaults."""

import configparser
from dataclasses import dataclass, field

from .geometry import ClusterGeometry, ConfigError, Diagnostic, TimingParams

_GEOMETRY_KEYS = {
    "cores_per_tile": int,
    "tiles_per_group": int,
    "groups": int,
    "banks_per_tile": int,
    "bank_words": int,
    "seq_rows_per_bank": int,
}

_TIMING_KEYS = {
    "latency_local_tile": int,
    "latency_local_group": int,
    "latency_remote_group": int,
    "l2_latency": int,
    "l2_bandwidth": int,
    "dma_setup": int,
    "wakeup_latency": int,
    "queue_depth": int,
}

_WORKLOAD_KEYS = {
    "kind": str,       # uniform | hybrid_local | kernel
    "load": float,
    "p_local": float,
    "preset": str,
    "iterations": int,
    "max_outstanding": int,
    "mac_depth": int,
}

_SWEEP_KEYS = {
    "topology": str,
    "loads": "floats",
    "p_locals": "floats",
    "sizes": "ints",
    "backends": "ints",
    "warmup": int,
    "window": int,
}


@dataclass
class WorkloadConfig:
    kind: str = "uniform"
    load: float = 0.1
    p_local: float = 0.0
    preset: str = "matmul"
    iterations: int | None = None
    max_outstanding: int = 8
    mac_depth: int = 2


@dataclass
class SweepConfig:
    topology: str = "hybrid"
    loads: list = field(default_factory=lambda: [
        0.02, 0.05, 0.08, 0.10, 0.12, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.50])
    p_locals: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    sizes: list = field(default_factory=lambda: [
        1024, 4096, 16384, 65536, 262144])
    backends: list = field(default_factory=lambda: [1, 2, 4, 8, 16])
    warmup: int = 2000
    window: int = 20000


@dataclass
class FileConfig:
    geometry: ClusterGeometry
    timing: TimingParams
    queue_depth: int
    workload: WorkloadConfig
    sweep: SweepConfig


def _parse_list(raw: str, conv):
    items = [x.strip() for x in raw.replace(";", ",").split(",")]
    return [conv(x) for x in items if x]


def _coerce(section: str, key: str, raw: str, spec):
    try:
        if spec == "floats":
            return _parse_list(raw, float)
        if spec == "ints":
            return _parse_list(raw, int)
        if spec is float:
            return float(raw)
        if spec is int:
            return int(raw, 0)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError([Diagnostic("bad_value", f"{section}.{key}",
                                      f"cannot parse {raw!r}")]) from exc


def load_config(path: str | None) -> FileConfig:
    """Read a config file; missing sections or keys take defaults."""
    schema = {
        "geometry": _GEOMETRY_KEYS,
        "timing": _TIMING_KEYS,
        "workload": _WORKLOAD_KEYS,
        "sweep": _SWEEP_KEYS,
    }
    values = {name: {} for name in schema}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError([Diagnostic("bad_config", str(path), str(exc))])
        for section in parser.sections():
            if section not in schema:
                raise ConfigError([Diagnostic("unknown_section", section,
                                              f"unknown section [{section}]")])
            for key, raw in parser.items(section):
                if key not in schema[section]:
                    raise ConfigError([Diagnostic(
                        "unknown_key", f"{section}.{key}",
                        f"unknown key {key!r} in [{section}]")])
                values[section][key] = _coerce(section, key, raw,
                                               schema[section][key])

    geometry = ClusterGeometry(**values["geometry"])
    timing_kwargs = dict(values["timing"])
    queue_depth = timing_kwargs.pop("queue_depth", 2)
    timing = TimingParams(**timing_kwargs)
    workload = WorkloadConfig(**values["workload"])
    sweep = SweepConfig(**values["sweep"])
    return FileConfig(geometry=geometry, timing=timing, queue_depth=queue_depth,
                      workload=workload, sweep=sweep)
