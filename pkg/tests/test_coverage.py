from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dufuzz.coverage import (
    BUCKETS,
    MAP_SIZE,
    CoverageMap,
    Novelty,
    VirginMap,
    check_hits,
    classify_and_check,
    duc_index,
    edge_index,
    hexdump,
    record,
)

# (src/def, dst/use, edge_index(src, dst), duc_index(def, use)); evaluated by
# hand-style bit-string arithmetic outside the package and frozen here
HASH_VECTORS = [
    (0x01000, 0x02004, 0x2804, 0x3004),
    (0x02004, 0x01000, 0x0002, 0x3004),
    (0x00000, 0x00000, 0x0000, 0x0000),
    (0x00002, 0x00001, 0x0000, 0x0003),
    (0x01000, 0x01001, 0x1801, 0x0001),
    (0x01001, 0x01000, 0x1800, 0x0001),
    (0x01000, 0x03001, 0x3801, 0x2001),
    (0x03001, 0x01000, 0x0800, 0x2001),
    (0x01234, 0x01234, 0x1B2E, 0x0000),
    (0x0FFFF, 0x0FFFF, 0x8000, 0x0000),
    (0x10000, 0x10000, 0x8000, 0x0000),
    (0x1FFFF, 0x00000, 0xFFFF, 0xFFFF),
    (0x00000, 0x1FFFF, 0xFFFF, 0xFFFF),
    (0xF0000, 0x01000, 0x9000, 0x1000),
    (0x01000, 0xF0002, 0x0802, 0x1002),
    (0x00001, 0x00000, 0x0000, 0x0001),
    (0x00000, 0x00001, 0x0001, 0x0001),
    (0x00003, 0x00001, 0x0000, 0x0002),
    (0x01002, 0x01003, 0x1802, 0x0001),
    (0x01003, 0x01002, 0x1803, 0x0001),
    (0x5D089, 0xD1F72, 0xF736, 0xCFFB),
    (0xFF215, 0x6FAE5, 0x03EF, 0x08F0),
    (0x012A4, 0x013BF, 0x1AED, 0x011B),
    (0x1DF1C, 0x01355, 0xFCDB, 0xCC49),
    (0xA77BE, 0x012A5, 0x297A, 0x651B),
    (0xDA866, 0x6D98E, 0x0DBD, 0x71E8),
    (0x011D5, 0x09F18, 0x97F2, 0x8ECD),
    (0x0128D, 0x012A6, 0x1BE0, 0x002B),
    (0x013B6, 0xBCD09, 0xC4D2, 0xDEBF),
    (0x861C0, 0xABC6C, 0x8C8C, 0xDDAC),
    (0x4396C, 0x011A7, 0x0D11, 0x28CB),
    (0x01163, 0x78ABB, 0x820A, 0x9BD8),
    (0x011D4, 0x7A838, 0xA0D2, 0xB9EC),
    (0xF6CEB, 0x01351, 0xA524, 0x7FBA),
    (0x9AE17, 0x01116, 0xC61D, 0xBF01),
    (0x013F6, 0x0131B, 0x1AE0, 0x00ED),
    (0x0128F, 0x01304, 0x1A43, 0x018B),
    (0x011D6, 0x011AE, 0x1945, 0x0078),
    (0x011E3, 0x0114B, 0x19BA, 0x00A8),
    (0x010D5, 0x01170, 0x191A, 0x01A5),
    (0x010FB, 0x01175, 0x1908, 0x018E),
    (0x011AE, 0x5F501, 0xFDD6, 0xE4AF),
    (0x8BA03, 0x6F3F7, 0xAEF6, 0x49F4),
    (0x01397, 0x521CC, 0x2807, 0x325B),
    (0x0132E, 0x012DA, 0x1B4D, 0x01F4),
    (0x010F4, 0x011C8, 0x19B2, 0x013C),
    (0xEDE24, 0xDCF63, 0xA071, 0x1147),
    (0xAE12D, 0x01142, 0x61D4, 0xF06F),
    (0x01372, 0x0CF26, 0xC69F, 0xDC54),
    (0x813D8, 0xB9CDC, 0x9530, 0x8F04),
]


def test_vector_table_size():
    assert len(HASH_VECTORS) == 50


@pytest.mark.parametrize("a, b, edge, duc", HASH_VECTORS)
def test_hash_vectors(a, b, edge, duc):
    assert edge_index(a, b) == edge
    assert duc_index(a, b) == duc


def test_documented_cases():
    assert edge_index(0x1000, 0x2004) == 0x2804
    assert edge_index(0, 0) == 0
    assert edge_index(0x2, 0x1) == 0  # distinct pair collides onto slot 0
    assert duc_index(0x1000, 0x1001) == 0x0001
    assert duc_index(0x1000, 0x3001) == 0x2001
    assert edge_index(0x1000, 0x2004) != edge_index(0x2004, 0x1000)


@given(st.integers(0, 2**40), st.integers(0, 2**40))
def test_duc_index_symmetric(a, b):
    assert duc_index(a, b) == duc_index(b, a)
    assert 0 <= edge_index(a, b) < MAP_SIZE


@given(st.integers(0, 2**40))
def test_duc_index_self_is_zero(a):
    assert duc_index(a, a) == 0


def test_record_saturates():
    m = CoverageMap()
    record(m, 5)
    assert m[5] == 1
    for _ in range(255):
        record(m, 5)
    assert m[5] == 255
    record(m, 5)
    assert m[5] == 255


def test_256_records_saturate_at_255():
    m = CoverageMap()
    for _ in range(256):
        m.record(0xBEEF)
    assert m[0xBEEF] == 255
    assert m.count_nonzero() == 1


def test_map_bytes_roundtrip():
    m = CoverageMap({1: 3, 0xFFFF: 200})
    assert len(m.to_bytes()) == MAP_SIZE
    assert CoverageMap.from_bytes(m.to_bytes()) == m


def test_buckets():
    expect = {0: 0, 1: 1, 2: 2, 3: 4, 4: 8, 7: 8, 8: 16, 15: 16, 16: 32, 31: 32, 32: 64, 127: 64, 128: 128, 255: 128}
    for count, bucket in expect.items():
        assert BUCKETS[count] == bucket


def test_classify_empty_map():
    v = VirginMap()
    assert classify_and_check(CoverageMap(), v) is Novelty.NO_NEW
    assert v == VirginMap()


def test_classify_new_index_then_bucket():
    v = VirginMap()
    assert classify_and_check(CoverageMap({7: 1}), v) is Novelty.NEW_INDEX
    assert classify_and_check(CoverageMap({7: 5}), v) is Novelty.NEW_COUNT_BUCKET
    assert classify_and_check(CoverageMap({7: 6}), v) is Novelty.NO_NEW
    assert classify_and_check(CoverageMap({7: 1}), v) is Novelty.NO_NEW


def test_check_hits_counts_cleared_slots():
    v = VirginMap()
    novelty, cleared = check_hits([(1, 1), (2, 3)], v)
    assert novelty is Novelty.NEW_INDEX and cleared == 2
    assert v.cleared() == 2


@settings(max_examples=200)
@given(st.lists(st.dictionaries(st.integers(0, 63), st.integers(1, 255), max_size=8), max_size=10))
def test_virgin_monotone_and_idempotent(maps):
    v = VirginMap()
    pop = v.popcount()
    for hits in maps:
        local = CoverageMap(hits)
        classify_and_check(local, v)
        assert v.popcount() <= pop
        pop = v.popcount()
        assert classify_and_check(local, v) is Novelty.NO_NEW
        assert v.popcount() == pop


def test_hexdump_format():
    text = hexdump(CoverageMap({0x11: 2, 0x12: 255}))
    assert text == "0010: 00 02 ff 00 00 00 00 00 00 00 00 00 00 00 00 00\n"
