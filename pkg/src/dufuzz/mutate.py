"""AFL-style mutation: deterministic walking stages and stacked havoc.

Bit order is msb-first: bit 0 of the input is ``0x80`` of byte 0.
Every deterministic stage is a pure function of the input, enumerated in a
fixed order, so a campaign can resume a stage by position.  Havoc draws all
of its choices from the ``random.Random`` it is given.
"""

from __future__ import annotations

import random
from typing import Iterator, Sequence

ARITH_MAX = 35
INTERESTING_8 = (-128, -1, 0, 1, 16, 32, 64, 100, 127)
INTERESTING_16 = INTERESTING_8 + (-32768, -129, 128, 255, 256, 512, 1000, 1024, 4096, 32767)
INTERESTING_32 = INTERESTING_16 + (-2147483648, -100663046, -32769, 32768, 65535, 65536, 100663045, 2147483647)

DETERMINISTIC_STAGES = (
    "bitflip1", "bitflip2", "bitflip4",
    "byteflip1", "byteflip2", "byteflip4",
    "arith8", "arith16", "arith32",
    "interest8", "interest16", "interest32",
)
STAGES = DETERMINISTIC_STAGES + ("havoc",)


def _flip_bits(data: bytes, start: int, width: int) -> bytes:
    buf = bytearray(data)
    for bit in range(start, start + width):
        buf[bit >> 3] ^= 0x80 >> (bit & 7)
    return bytes(buf)


def _put(data: bytes, pos: int, width: int, value: int, order: str) -> bytes:
    buf = bytearray(data)
    buf[pos : pos + width] = (value & ((1 << (8 * width)) - 1)).to_bytes(width, order)
    return bytes(buf)


def _get(data: bytes, pos: int, width: int, order: str) -> int:
    return int.from_bytes(data[pos : pos + width], order)


def stage_mutants(data: bytes, stage: str) -> Iterator[bytes]:
    """All mutants of one deterministic stage, in their fixed order."""
    n = len(data)
    nbits = 8 * n
    if stage.startswith("bitflip"):
        width = int(stage[7:])
        for start in range(nbits - width + 1):
            yield _flip_bits(data, start, width)
    elif stage.startswith("byteflip"):
        width = int(stage[8:])
        for pos in range(n - width + 1):
            buf = bytearray(data)
            for k in range(pos, pos + width):
                buf[k] ^= 0xFF
            yield bytes(buf)
    elif stage.startswith("arith"):
        width = int(stage[5:]) // 8
        orders = ("little",) if width == 1 else ("little", "big")
        for pos in range(n - width + 1):
            for order in orders:
                v = _get(data, pos, width, order)
                for d in range(1, ARITH_MAX + 1):
                    yield _put(data, pos, width, v + d, order)
                    yield _put(data, pos, width, v - d, order)
    elif stage.startswith("interest"):
        width = int(stage[8:]) // 8
        values = {1: INTERESTING_8, 2: INTERESTING_16, 4: INTERESTING_32}[width]
        orders = ("little",) if width == 1 else ("little", "big")
        for pos in range(n - width + 1):
            for order in orders:
                for v in values:
                    yield _put(data, pos, width, v, order)
    else:
        raise ValueError(f"unknown deterministic stage {stage!r}")


def deterministic_mutants(data: bytes) -> list[bytes]:
    """Every deterministic-stage mutant of ``data``, stage by stage."""
    out: list[bytes] = []
    for stage in DETERMINISTIC_STAGES:
        out.extend(stage_mutants(data, stage))
    return out


class Havoc:
    """Stacked random byte-level edits, optionally splicing in other inputs.

    Draws are ``int(random() * n)`` rather than ``randrange``: a single C
    call per choice, which is most of the cost of a havoc round.
    """

    OPS = 15

    def __init__(self, rng: random.Random, max_len: int = 4096):
        self.rng = rng
        self.max_len = max_len

    def _block_len(self, limit: int) -> int:
        rand = self.rng.random
        cap = (32, 128, 1500)[int(rand() * 3)] if limit > 32 else limit
        return 1 + int(rand() * min(cap, limit))

    def mutate(self, data: bytes, pool: Sequence[bytes] = ()) -> bytes:
        rand = self.rng.random
        buf = bytearray(data) if data else bytearray([int(rand() * 256)])
        for _ in range(1 << (1 + int(rand() * 7))):
            op = int(rand() * (self.OPS if pool else self.OPS - 1))
            n = len(buf)
            if op == 0:
                bit = int(rand() * (8 * n))
                buf[bit >> 3] ^= 0x80 >> (bit & 7)
            elif op == 1:
                buf[int(rand() * n)] = INTERESTING_8[int(rand() * len(INTERESTING_8))] & 0xFF
            elif op in (2, 3):
                width = 2 if op == 2 else 4
                if n < width:
                    continue
                values = INTERESTING_16 if width == 2 else INTERESTING_32
                pos = int(rand() * (n - width + 1))
                order = "little" if int(rand() * 2) else "big"
                v = values[int(rand() * len(values))] & ((1 << (8 * width)) - 1)
                buf[pos : pos + width] = v.to_bytes(width, order)
            elif op in (4, 5, 6):
                width = (1, 2, 4)[op - 4]
                if n < width:
                    continue
                pos = int(rand() * (n - width + 1))
                order = "little" if int(rand() * 2) else "big"
                delta = 1 + int(rand() * ARITH_MAX)
                if int(rand() * 2):
                    delta = -delta
                v = int.from_bytes(buf[pos : pos + width], order) + delta
                buf[pos : pos + width] = (v & ((1 << (8 * width)) - 1)).to_bytes(width, order)
            elif op == 7:
                buf[int(rand() * n)] ^= 1 + int(rand() * 255)
            elif op == 8:
                buf[int(rand() * n)] = int(rand() * 256)
            elif op in (9, 10):
                if n < 2:
                    continue
                length = self._block_len(n - 1)
                pos = int(rand() * (n - length + 1))
                del buf[pos : pos + length]
            elif op == 11:
                if n >= self.max_len:
                    continue
                length = self._block_len(min(n, self.max_len - n))
                dst = int(rand() * (n + 1))
                if int(rand() * 4):
                    src = int(rand() * (n - length + 1))
                    chunk = buf[src : src + length]
                else:
                    chunk = bytes([int(rand() * 256)]) * length
                buf[dst:dst] = chunk
            elif op == 12:
                if n < 2:
                    continue
                length = self._block_len(n - 1)
                src = int(rand() * (n - length + 1))
                dst = int(rand() * (n - length + 1))
                buf[dst : dst + length] = buf[src : src + length]
            elif op == 13:
                if n >= self.max_len:
                    continue
                buf.insert(int(rand() * (n + 1)), int(rand() * 256))
            else:
                other = pool[int(rand() * len(pool))]
                if not other:
                    continue
                cut = int(rand() * len(other))
                length = 1 + int(rand() * (len(other) - cut))
                pos = int(rand() * n)
                buf[pos : pos + length] = other[cut : cut + length]
        if len(buf) > self.max_len:
            del buf[self.max_len :]
        return bytes(buf)


def splice(a: bytes, b: bytes, rng: random.Random) -> bytes:
    """Head of ``a`` joined to the tail of ``b`` at a random split point."""
    if len(a) < 2 or len(b) < 2:
        return a or b
    cut = 1 + rng.randrange(min(len(a), len(b)) - 1)
    return a[:cut] + b[cut:]


def mutate(
    data: bytes, stage: str, rng: random.Random, *, pool: Sequence[bytes] = (), max_len: int = 4096
) -> bytes:
    """One mutant of ``data`` from ``stage``.

    For a deterministic stage the rng picks which of the stage's mutants
    to return; ``havoc`` applies a random stack of edits.
    """
    if stage == "havoc":
        return Havoc(rng, max_len).mutate(data, pool)
    mutants = list(stage_mutants(data, stage))
    if not mutants:
        return Havoc(rng, max_len).mutate(data, pool)
    return mutants[rng.randrange(len(mutants))][:max_len]
