import pytest

from mempool_sim.geometry import (
    ClusterGeometry,
    ConfigError,
    TimingParams,
    diagnose,
    validate,
)


def test_default_config_derivations():
    cfg = validate(ClusterGeometry())
    assert cfg.bank_bits == 4
    assert cfg.tile_bits == 6
    assert cfg.row_bits == 8
    assert cfg.seq_bits == 5
    assert cfg.total_cores == 256
    assert cfg.total_banks == 1024
    assert cfg.l1_bytes == 1 << 20
    assert cfg.geometry.banking_factor == 4.0
    assert cfg.l1_line_bytes == 4096
    assert cfg.tile_seq_bytes == 2048


def test_degenerate_singleton():
    cfg = validate(ClusterGeometry(cores_per_tile=1, tiles_per_group=1,
                                   groups=1, banks_per_tile=1, bank_words=1,
                                   seq_rows_per_bank=1))
    assert cfg.bank_bits == 0
    assert cfg.tile_bits == 0
    assert cfg.row_bits == 0


def test_non_power_of_two_banks_rejected():
    with pytest.raises(ConfigError) as err:
        validate(ClusterGeometry(banks_per_tile=3))
    assert any(d.code == "non_power_of_two" and "banks_per_tile" in d.field
               for d in err.value.diagnostics)


def test_zero_count_rejected():
    diags = diagnose(ClusterGeometry(groups=0), TimingParams())
    assert any(d.code == "zero_count" for d in diags)


def test_seq_region_too_large():
    with pytest.raises(ConfigError) as err:
        validate(ClusterGeometry(bank_words=16, seq_rows_per_bank=32))
    assert any(d.code == "seq_region_too_large" for d in err.value.diagnostics)


def test_latency_ordering_enforced():
    bad = TimingParams(latency_local_tile=4, latency_local_group=3)
    assert any(d.code == "bad_timing"
               for d in diagnose(ClusterGeometry(), bad))


def test_capacity_identity():
    # 2^(b+t) banks of bank_words words of 4 bytes account for all of L1
    for geom in (ClusterGeometry(),
                 ClusterGeometry(cores_per_tile=2, tiles_per_group=4,
                                 banks_per_tile=8, bank_words=64,
                                 seq_rows_per_bank=8)):
        cfg = validate(geom)
        assert (1 << (cfg.bank_bits + cfg.tile_bits)) * geom.bank_words * 4 \
            == cfg.l1_bytes


def test_validate_idempotent():
    cfg1 = validate(ClusterGeometry())
    cfg2 = validate(cfg1.geometry, cfg1.timing, cfg1.queue_depth)
    assert cfg1 == cfg2
