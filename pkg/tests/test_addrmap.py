import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mempool_sim.addrmap import (
    AddressLayout,
    AddressRangeError,
    PhysicalLocation,
    Region,
    descramble,
    locate,
    region_of,
    scramble,
)
from mempool_sim.geometry import ClusterGeometry, validate

SMALL = AddressLayout(bank_bits=2, tile_bits=2, seq_bits=1, row_bits=2)
DEFAULT = AddressLayout(bank_bits=4, tile_bits=6, seq_bits=5, row_bits=8)


def scramble_oracle(addr, layout):
    """Independent derivation from the meaning of the sequential region:
    region i occupies consecutive rows of tile i's banks, interleaved
    across the tile's banks."""
    if addr >= layout.seq_span_bytes:
        return addr
    span = layout.tile_seq_bytes
    owner, offset = divmod(addr, span)
    word, byte = divmod(offset, 4)
    banks = 1 << layout.bank_bits
    bank = word % banks
    row = word // banks
    phys_word = (row << (layout.bank_bits + layout.tile_bits)) \
        | (owner << layout.bank_bits) | bank
    return phys_word * 4 + byte


def test_scramble_zero():
    assert scramble(0, SMALL) == 0


def test_scramble_example_small_layout():
    # oracle over all 128 sequential addresses of the (b=2, t=2, s=1) layout
    assert scramble_oracle(32, SMALL) == 16
    assert scramble(32, SMALL) == 16
    for addr in range(SMALL.seq_span_bytes):
        assert scramble(addr, SMALL) == scramble_oracle(addr, SMALL)


def test_scramble_identity_outside_region():
    assert scramble(128, SMALL) == 128
    assert scramble(200, SMALL) == 200


def test_descramble_examples():
    assert descramble(16, SMALL) == 32
    assert descramble(0, SMALL) == 0
    assert descramble(128, SMALL) == 128


def test_locate_default_layout():
    assert locate(4, DEFAULT) == PhysicalLocation(tile=0, bank=1, row=0, byte=0)
    assert locate(64, DEFAULT) == PhysicalLocation(tile=1, bank=0, row=0, byte=0)
    assert locate(4096, DEFAULT) == PhysicalLocation(tile=0, bank=0, row=1, byte=0)
    assert locate(7, DEFAULT).byte == 3


def test_region_examples():
    assert region_of(0, SMALL) == Region(owner_tile=0)
    assert region_of(33, SMALL) == Region(owner_tile=1)
    assert region_of(200, SMALL) == Region()
    assert not region_of(200, SMALL).is_sequential


def test_out_of_range_rejected():
    with pytest.raises(AddressRangeError):
        scramble(SMALL.l1_bytes, SMALL)
    with pytest.raises(AddressRangeError):
        descramble(-1, SMALL)
    with pytest.raises(AddressRangeError):
        locate(DEFAULT.l1_bytes + 4, DEFAULT)
    with pytest.raises(AddressRangeError):
        region_of(SMALL.l1_bytes, SMALL)


def test_bijection_small_exhaustive():
    span = SMALL.seq_span_bytes
    seen = {scramble(a, SMALL) for a in range(span)}
    assert seen == set(range(span))


def test_locality_small_exhaustive():
    for addr in range(SMALL.seq_span_bytes):
        region = region_of(addr, SMALL)
        assert locate(scramble(addr, SMALL), SMALL).tile == region.owner_tile


def test_field_preservation():
    keep = (1 << (SMALL.byte_bits + SMALL.bank_bits)) - 1
    for addr in range(SMALL.seq_span_bytes):
        assert (scramble(addr, SMALL) ^ addr) & keep == 0


def test_seq_zero_is_identity():
    layout = AddressLayout(bank_bits=2, tile_bits=2, seq_bits=0, row_bits=2)
    for addr in range(0, layout.l1_bytes, 4):
        assert scramble(addr, layout) == addr


def test_s_greater_than_t_supported():
    layout = AddressLayout(bank_bits=1, tile_bits=1, seq_bits=3, row_bits=3)
    span = layout.seq_span_bytes
    out = {scramble(a, layout) for a in range(span)}
    assert out == set(range(span))
    for addr in range(span):
        assert descramble(scramble(addr, layout), layout) == addr


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(7)
    addrs = rng.integers(0, DEFAULT.l1_bytes, size=4096)
    vec = scramble(addrs, DEFAULT)
    for a, v in zip(addrs[:256].tolist(), vec[:256].tolist()):
        assert scramble(int(a), DEFAULT) == v
    back = descramble(vec, DEFAULT)
    assert np.array_equal(back, addrs)


def test_from_config_matches_widths():
    cfg = validate(ClusterGeometry())
    layout = AddressLayout.from_config(cfg)
    assert layout == DEFAULT
    assert layout.seq_span_bytes == cfg.seq_region_bytes


@st.composite
def layouts(draw):
    b = draw(st.integers(min_value=0, max_value=4))
    t = draw(st.integers(min_value=0, max_value=4))
    s = draw(st.integers(min_value=0, max_value=4))
    row = draw(st.integers(min_value=s, max_value=s + 3))
    return AddressLayout(bank_bits=b, tile_bits=t, seq_bits=s, row_bits=row)


@given(layouts(), st.data())
@settings(max_examples=200, deadline=None)
def test_roundtrip_property(layout, data):
    addr = data.draw(st.integers(min_value=0, max_value=layout.l1_bytes - 1))
    assert descramble(scramble(addr, layout), layout) == addr


@given(layouts(), st.data())
@settings(max_examples=200, deadline=None)
def test_locality_property(layout, data):
    addr = data.draw(st.integers(min_value=0,
                                 max_value=layout.seq_span_bytes - 1))
    region = region_of(addr, layout)
    assert region.is_sequential
    assert locate(scramble(addr, layout), layout).tile == region.owner_tile
