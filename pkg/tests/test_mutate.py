from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dufuzz.mutate import (
    ARITH_MAX,
    DETERMINISTIC_STAGES,
    INTERESTING_8,
    Havoc,
    deterministic_mutants,
    mutate,
    splice,
    stage_mutants,
)

HAVOC_INPUT = bytes(range(32))
HAVOC_GOLDEN = bytes.fromhex(
    "cf01e4d305e49b00ff6400ff0010e5caf5f5f5f5f8f5f5f5f5f5000000801a00019e19019e191a2000000000"
)


def test_bitflip_is_msb_first():
    assert next(stage_mutants(b"\x00", "bitflip1")) == b"\x80"
    assert list(stage_mutants(b"\x00", "bitflip1"))[7] == b"\x01"
    assert list(stage_mutants(b"\x00\x00", "bitflip4"))[6] == b"\x03\xc0"


def test_arith_wraps():
    first = next(stage_mutants(b"\xff", "arith8"))
    assert first == b"\x00"
    assert list(stage_mutants(b"\x00", "arith8"))[1] == b"\xff"


def test_arith16_little_then_big():
    muts = list(stage_mutants(b"\x00\x01", "arith16"))
    assert muts[0] == b"\x01\x01"  # little endian +1
    assert muts[2 * ARITH_MAX] == b"\x00\x02"  # big endian +1


def test_stage_sizes():
    data = bytes(6)
    counts = {s: len(list(stage_mutants(data, s))) for s in DETERMINISTIC_STAGES}
    assert counts["bitflip1"] == 48 and counts["bitflip2"] == 47 and counts["bitflip4"] == 45
    assert counts["byteflip1"] == 6 and counts["byteflip2"] == 5 and counts["byteflip4"] == 3
    assert counts["arith8"] == 6 * 2 * ARITH_MAX
    assert counts["arith16"] == 5 * 2 * 2 * ARITH_MAX
    assert counts["interest8"] == 6 * len(INTERESTING_8)
    assert len(deterministic_mutants(data)) == sum(counts.values())


def test_interest8_values():
    assert [m[0] for m in stage_mutants(b"\x55", "interest8")] == [v & 0xFF for v in INTERESTING_8]


def test_unknown_stage():
    with pytest.raises(ValueError):
        list(stage_mutants(b"a", "bitflip3x"))


def test_havoc_golden():
    assert mutate(HAVOC_INPUT, "havoc", random.Random(42)) == HAVOC_GOLDEN


@settings(max_examples=300)
@given(st.binary(max_size=64), st.integers(0, 2**32), st.sampled_from(DETERMINISTIC_STAGES + ("havoc",)))
def test_mutants_deterministic_and_bounded(data, seed, stage):
    pool = [b"splice-me", b"\x00\x01"]
    a = mutate(data, stage, random.Random(seed), pool=pool, max_len=48)
    b = mutate(data, stage, random.Random(seed), pool=pool, max_len=48)
    assert a == b
    assert 1 <= len(a) <= 48


@settings(max_examples=200)
@given(st.binary(min_size=1, max_size=16), st.integers(0, 2**32))
def test_deterministic_stage_keeps_length(data, seed):
    for stage in DETERMINISTIC_STAGES:
        for m in stage_mutants(data, stage):
            assert len(m) == len(data)


def test_havoc_respects_max_len():
    h = Havoc(random.Random(1), max_len=8)
    for _ in range(200):
        assert 1 <= len(h.mutate(b"abcdefgh")) <= 8


def test_splice():
    out = splice(b"AAAAAAAA", b"BBBBBBBB", random.Random(42))
    assert out == b"AAAAAABB"
    assert splice(b"A", b"BB", random.Random(0)) == b"A"
