"""Machine model shared by the executor and the reference interpreter."""

from __future__ import annotations

import bisect
import enum

MAX_CALL_DEPTH = 256
SIGN_BIT = 1 << 63


class Status(str, enum.Enum):
    CLEAN_EXIT = "CLEAN_EXIT"
    CRASH = "CRASH"
    TIMEOUT = "TIMEOUT"


class CrashKind(str, enum.Enum):
    NULL_DEREF = "NULL_DEREF"  # access to cell 0
    OOB = "OOB"  # cell >= memory size
    DIV_ZERO = "DIV_ZERO"
    FREE_INVALID = "FREE_INVALID"
    ASSERT_FAIL = "ASSERT_FAIL"
    STACK_OVERFLOW = "STACK_OVERFLOW"


class Heap:
    """First-fit allocator over ``[base, end)`` with coalescing frees.

    ``alloc`` returns 0 (null) when the request cannot be satisfied; a
    successful allocation never returns 0 because ``base`` is at least 1.
    """

    __slots__ = ("starts", "sizes", "live")

    def __init__(self, base: int, end: int):
        base = max(base, 1)
        self.starts = [base] if end > base else []
        self.sizes = [end - base] if end > base else []
        self.live: dict[int, int] = {}

    def alloc(self, size: int) -> int:
        if size == 0:
            size = 1
        for i, avail in enumerate(self.sizes):
            if avail >= size:
                addr = self.starts[i]
                if avail == size:
                    del self.starts[i]
                    del self.sizes[i]
                else:
                    self.starts[i] = addr + size
                    self.sizes[i] = avail - size
                self.live[addr] = size
                return addr
        return 0

    def free(self, addr: int) -> bool:
        """Release ``addr``; False for anything that is not a live block start."""
        if addr == 0:
            return True
        size = self.live.pop(addr, None)
        if size is None:
            return False
        i = bisect.bisect_left(self.starts, addr)
        self.starts.insert(i, addr)
        self.sizes.insert(i, size)
        if i + 1 < len(self.starts) and addr + size == self.starts[i + 1]:
            self.sizes[i] += self.sizes.pop(i + 1)
            self.starts.pop(i + 1)
        if i > 0 and self.starts[i - 1] + self.sizes[i - 1] == addr:
            self.sizes[i - 1] += self.sizes.pop(i)
            self.starts.pop(i)
        return True
