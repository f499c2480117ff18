"""Plain step-by-step interpreter.

Slow and uninstrumented; it is the reference the translated executor is
checked against, and it can emit a full instruction trace.  Each trace step
is ``(address, defined instances, used instances)`` where register ``k`` is
instance ``k`` and memory cell ``c`` is instance ``MEM + c``.  A faulting
instruction does not appear in the trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .isa import MASK64, MEM, Opcode, Program
from .machine import MAX_CALL_DEPTH, SIGN_BIT, CrashKind, Heap, Status

TraceStep = tuple[int, tuple[int, ...], tuple[int, ...]]


@dataclass
class RefResult:
    status: Status
    crash_kind: CrashKind | None
    crash_site: int | None
    steps: int
    edges: list[tuple[int, int]] = field(default_factory=list)
    trace: list[TraceStep] = field(default_factory=list)
    registers: list[int] = field(default_factory=list)


class _Fault(Exception):
    def __init__(self, kind: CrashKind):
        self.kind = kind


def interpret(program: Program, data: bytes, *, max_steps: int | None = None, trace: bool = False) -> RefResult:
    budget = program.max_steps if max_steps is None else max_steps
    R = [0] * 16
    M: dict[int, int] = {}
    msize = program.memory_size
    heap = Heap(program.heap_start, msize)
    stack: list[int] = []
    cursor = 0
    steps = 0
    edges: list[tuple[int, int]] = [(0, program.entry)]
    tr: list[TraceStep] = []
    blocks = program.blocks
    entry_of = program.entry_of

    def cell(a: int) -> int:
        if a == 0:
            raise _Fault(CrashKind.NULL_DEREF)
        if a >= msize:
            raise _Fault(CrashKind.OOB)
        return a

    pc = program.entry
    while True:
        block = blocks[pc]
        n = len(block.instructions)
        if steps + n > budget:
            return RefResult(Status.TIMEOUT, None, None, steps, edges, tr, R)
        next_pc = None
        for k, ins in enumerate(block.instructions):
            op, o = ins.opcode, ins.operands
            defs: tuple[int, ...] = ()
            uses: tuple[int, ...] = ()
            try:
                if op is Opcode.CONST:
                    R[o[0]] = o[1]
                    defs = (o[0],)
                elif op is Opcode.MOV:
                    R[o[0]] = R[o[1]]
                    defs, uses = (o[0],), (o[1],)
                elif op in _ARITH:
                    a, b = R[o[1]], R[o[2]]
                    if op is Opcode.DIV and b == 0:
                        raise _Fault(CrashKind.DIV_ZERO)
                    R[o[0]] = _ARITH[op](a, b) & MASK64
                    defs, uses = (o[0],), (o[1], o[2])
                elif op in _CMP:
                    uses = (o[0], o[1])
                    if _CMP[op](R[o[0]], R[o[1]]):
                        next_pc = o[2]
                elif op is Opcode.JMP:
                    next_pc = o[0]
                elif op is Opcode.LOAD:
                    c = cell(R[o[1]])
                    R[o[0]] = M.get(c, 0)
                    defs, uses = (o[0],), (o[1], MEM + c)
                elif op is Opcode.STORE:
                    c = cell(R[o[0]])
                    M[c] = R[o[1]]
                    defs, uses = (MEM + c,), (o[0], o[1])
                elif op is Opcode.READ:
                    if cursor < len(data):
                        R[o[0]] = data[cursor]
                        cursor += 1
                    else:
                        R[o[0]] = MASK64
                    defs = (o[0],)
                elif op is Opcode.ALLOC:
                    R[0] = heap.alloc(R[o[0]])
                    defs, uses = (0,), (o[0],)
                elif op is Opcode.FREE:
                    if not heap.free(R[0]):
                        raise _Fault(CrashKind.FREE_INVALID)
                    uses = (0,)
                elif op is Opcode.ASSERT:
                    if R[o[0]] == 0:
                        raise _Fault(CrashKind.ASSERT_FAIL)
                    uses = (o[0],)
                elif op is Opcode.CALL:
                    callee = entry_of[o[0]]
                    if callee.is_external:
                        defs, uses = _call_external(callee.name, R, M, heap)
                        next_pc = block.end
                    else:
                        if len(stack) >= MAX_CALL_DEPTH:
                            raise _Fault(CrashKind.STACK_OVERFLOW)
                        stack.append(block.end)
                        next_pc = callee.entry
                elif op is Opcode.RET:
                    if not stack:
                        steps += n
                        if trace:
                            tr.append((ins.address, (), ()))
                        return RefResult(Status.CLEAN_EXIT, None, None, steps, edges, tr, R)
                    next_pc = stack.pop()
                elif op is Opcode.HALT:
                    steps += n
                    if trace:
                        tr.append((ins.address, (), ()))
                    return RefResult(Status.CLEAN_EXIT, None, None, steps, edges, tr, R)
            except _Fault as f:
                return RefResult(Status.CRASH, f.kind, ins.address, steps + k + 1, edges, tr, R)
            if trace:
                tr.append((ins.address, defs, uses))
        steps += n
        if next_pc is None:
            next_pc = block.end
        edges.append((block.start, next_pc))
        pc = next_pc


def _call_external(name: str, R: list[int], M: dict[int, int], heap: Heap):
    if name == "malloc":
        R[0] = heap.alloc(R[1])
        return (0,), ()
    if name == "calloc":
        size = (R[1] * R[2]) & MASK64
        addr = heap.alloc(size)
        if addr:
            for c in range(addr, addr + max(size, 1)):
                M[c] = 0
        R[0] = addr
        return (0,), ()
    if name == "free":
        if not heap.free(R[0]):
            raise _Fault(CrashKind.FREE_INVALID)
        return (), (0,)
    raise ValueError(f"no runtime model for external function {name!r}")


_ARITH = {
    Opcode.ADD: lambda a, b: a + b,
    Opcode.SUB: lambda a, b: a - b,
    Opcode.MUL: lambda a, b: a * b,
    Opcode.DIV: lambda a, b: a // b,
    Opcode.XOR: lambda a, b: a ^ b,
    Opcode.SHR: lambda a, b: a >> (b & 63),
    Opcode.SHL: lambda a, b: a << (b & 63),
}

_CMP = {
    Opcode.BEQ: lambda a, b: a == b,
    Opcode.BNE: lambda a, b: a != b,
    Opcode.BLT: lambda a, b: (a ^ SIGN_BIT) < (b ^ SIGN_BIT),
    Opcode.BGE: lambda a, b: (a ^ SIGN_BIT) >= (b ^ SIGN_BIT),
}
