"""Coverage bitmaps: index hashes, saturating counters, bucketed novelty checks."""

from __future__ import annotations

import enum
from typing import Iterable, Mapping

MAP_SIZE = 1 << 16
MAP_MASK = MAP_SIZE - 1


def edge_index(src: int, dst: int) -> int:
    """Bitmap slot for the block transition ``src -> dst``."""
    return (dst ^ (src >> 1)) & MAP_MASK


def duc_index(def_site: int, use_site: int) -> int:
    """Bitmap slot for a def-use pair; symmetric in its arguments."""
    return (def_site ^ use_site) & MAP_MASK


def _bucket(count: int) -> int:
    if count == 0:
        return 0
    if count <= 3:
        return 1 << (count - 1)
    if count <= 7:
        return 8
    if count <= 15:
        return 16
    if count <= 31:
        return 32
    if count <= 127:
        return 64
    return 128


BUCKETS = bytes(_bucket(i) for i in range(256))


class Novelty(enum.IntEnum):
    NO_NEW = 0
    NEW_COUNT_BUCKET = 1
    NEW_INDEX = 2


class CoverageMap:
    """65,536 one-byte saturating counters.

    Stored sparsely: only nonzero counters are kept, which is what makes
    per-execution maps cheap to build and to scan.
    """

    __slots__ = ("_hits",)

    def __init__(self, hits: Mapping[int, int] | None = None):
        self._hits: dict[int, int] = {}
        if hits:
            for idx, n in hits.items():
                if not 0 <= idx < MAP_SIZE:
                    raise IndexError(idx)
                if n > 0:
                    self._hits[idx] = n if n < 255 else 255

    def record(self, index: int) -> None:
        index &= MAP_MASK
        n = self._hits.get(index, 0)
        if n < 255:
            self._hits[index] = n + 1

    def __getitem__(self, index: int) -> int:
        if not 0 <= index < MAP_SIZE:
            raise IndexError(index)
        return self._hits.get(index, 0)

    def __len__(self) -> int:
        return MAP_SIZE

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CoverageMap) and self._hits == other._hits

    def __repr__(self) -> str:
        return f"CoverageMap({len(self._hits)} nonzero)"

    def nonzero(self) -> dict[int, int]:
        return dict(sorted(self._hits.items()))

    def items(self):
        return self._hits.items()

    def count_nonzero(self) -> int:
        return len(self._hits)

    def to_bytes(self) -> bytes:
        buf = bytearray(MAP_SIZE)
        for idx, n in self._hits.items():
            buf[idx] = n
        return bytes(buf)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CoverageMap":
        if len(data) != MAP_SIZE:
            raise ValueError(f"expected {MAP_SIZE} bytes, got {len(data)}")
        return cls({i: b for i, b in enumerate(data) if b})


def record(cmap: CoverageMap, index: int) -> None:
    cmap.record(index)


class VirginMap:
    """Global record of unseen (index, bucket) bits; bits are only ever cleared."""

    __slots__ = ("bits",)

    def __init__(self, bits: bytes | None = None):
        if bits is None:
            self.bits = bytearray(b"\xff" * MAP_SIZE)
        else:
            if len(bits) != MAP_SIZE:
                raise ValueError(f"expected {MAP_SIZE} bytes, got {len(bits)}")
            self.bits = bytearray(bits)

    def popcount(self) -> int:
        return int.from_bytes(self.bits, "little").bit_count()

    def cleared(self) -> int:
        """Number of bits cleared so far."""
        return MAP_SIZE * 8 - self.popcount()

    def copy(self) -> "VirginMap":
        return VirginMap(bytes(self.bits))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, VirginMap) and self.bits == other.bits


def check_hits(hits: Iterable[tuple[int, int]], virgin: VirginMap) -> tuple[Novelty, int]:
    """Classify raw (index, count) hits against ``virgin``, clearing what is new.

    Returns the novelty level and the number of virgin bits cleared.
    """
    bits = virgin.bits
    ret = 0
    cleared = 0
    for idx, n in hits:
        b = BUCKETS[n if n < 255 else 255]
        v = bits[idx]
        if b & v:
            if v == 0xFF:
                ret = 2
            elif ret == 0:
                ret = 1
            bits[idx] = v & ~b
            cleared += 1
    return Novelty(ret), cleared


def classify_and_check(local: CoverageMap, virgin: VirginMap) -> Novelty:
    return check_hits(local.items(), virgin)[0]


def hexdump(cmap: CoverageMap | bytes, *, skip_zero: bool = True) -> str:
    """16 counters per line, prefixed by the index of the first one."""
    data = cmap.to_bytes() if isinstance(cmap, CoverageMap) else bytes(cmap)
    lines = []
    for off in range(0, len(data), 16):
        row = data[off : off + 16]
        if skip_zero and not any(row):
            continue
        lines.append(f"{off:04x}: " + " ".join(f"{b:02x}" for b in row))
    return "\n".join(lines) + ("\n" if lines else "")
