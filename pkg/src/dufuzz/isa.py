"""Target instruction set and the program container.

A ``Program`` is the stand-in for a binary: functions made of basic blocks,
each block a run of instructions at fixed abstract addresses (base 0x1000,
one unit per instruction).

Storage locations are plain ints: ``0..15`` are registers and ``MEM`` (16) is
the single summarized memory location used by the static analysis.  At
runtime a concrete memory cell ``c`` is the location instance ``MEM + c``,
so ``min(instance, MEM)`` recovers the static class.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

BASE_ADDRESS = 0x1000
EXTERN_BASE = 0xF0000
NUM_REGS = 16
MEM = NUM_REGS
MASK64 = (1 << 64) - 1

DEFAULT_MEMORY_SIZE = 4096
DEFAULT_MAX_STEPS = 1_000_000


def loc_name(loc: int) -> str:
    return "MEM" if loc == MEM else f"r{loc}"


def parse_loc(text: str) -> int:
    if text == "MEM":
        return MEM
    if text.startswith("r") and text[1:].isdigit():
        reg = int(text[1:])
        if 0 <= reg < NUM_REGS:
            return reg
    raise ValueError(f"bad storage location {text!r}")


def loc_class(instance: int) -> int:
    """Static class of a runtime location instance."""
    return instance if instance < MEM else MEM


class Terminator(str, enum.Enum):
    BRANCH = "branch"
    JUMP = "jump"
    CALL = "call"
    RET = "ret"
    HALT = "halt"
    FALLTHROUGH = "fallthrough"


class Opcode(enum.Enum):
    CONST = enum.auto()
    MOV = enum.auto()
    ADD = enum.auto()
    SUB = enum.auto()
    MUL = enum.auto()
    DIV = enum.auto()
    XOR = enum.auto()
    SHR = enum.auto()
    SHL = enum.auto()
    BEQ = enum.auto()
    BNE = enum.auto()
    BLT = enum.auto()
    BGE = enum.auto()
    JMP = enum.auto()
    CALL = enum.auto()
    RET = enum.auto()
    LOAD = enum.auto()  # LOAD rd, ra     rd <- mem[ra]
    STORE = enum.auto()  # STORE ra, rv   mem[ra] <- rv
    READ = enum.auto()  # READ rd        next input byte, or -1 when exhausted
    ALLOC = enum.auto()  # ALLOC rs       r0 <- alloc(rs)
    FREE = enum.auto()  # FREE           free(r0)
    ASSERT = enum.auto()
    HALT = enum.auto()

    @property
    def operand_kinds(self) -> str:
        """One char per operand: r register, i immediate, l block label, f function."""
        return _FORMATS[self][0]

    @property
    def terminator(self) -> Terminator | None:
        return _TERMINATORS.get(self)


# opcode: (operand kinds, operand positions defined, operand positions used)
_FORMATS = {
    Opcode.CONST: ("ri", (0,), ()),
    Opcode.MOV: ("rr", (0,), (1,)),
    **{op: ("rrr", (0,), (1, 2)) for op in (Opcode.ADD, Opcode.SUB, Opcode.MUL, Opcode.DIV, Opcode.XOR, Opcode.SHR, Opcode.SHL)},
    **{op: ("rrl", (), (0, 1)) for op in (Opcode.BEQ, Opcode.BNE, Opcode.BLT, Opcode.BGE)},
    Opcode.JMP: ("l", (), ()),
    Opcode.CALL: ("f", (), ()),
    Opcode.RET: ("", (), ()),
    Opcode.LOAD: ("rr", (0,), (1,)),
    Opcode.STORE: ("rr", (), (0, 1)),
    Opcode.READ: ("r", (0,), ()),
    Opcode.ALLOC: ("r", (), (0,)),
    Opcode.FREE: ("", (), ()),
    Opcode.ASSERT: ("r", (), (0,)),
    Opcode.HALT: ("", (), ()),
}

_TERMINATORS = {
    Opcode.BEQ: Terminator.BRANCH,
    Opcode.BNE: Terminator.BRANCH,
    Opcode.BLT: Terminator.BRANCH,
    Opcode.BGE: Terminator.BRANCH,
    Opcode.JMP: Terminator.JUMP,
    Opcode.CALL: Terminator.CALL,
    Opcode.RET: Terminator.RET,
    Opcode.HALT: Terminator.HALT,
}


@dataclass(frozen=True)
class Instruction:
    address: int
    opcode: Opcode
    operands: tuple[int, ...] = ()

    def __str__(self) -> str:
        ops = [
            f"r{v}" if kind == "r" else (str(v) if kind == "i" else f"{v:#x}")
            for kind, v in zip(self.opcode.operand_kinds, self.operands)
        ]
        return f"{self.address:#x}: {self.opcode.name} {', '.join(ops)}".rstrip()


def def_use_signature(instr: Instruction) -> tuple[frozenset[int], frozenset[int]]:
    """Locations written and read by ``instr``.

    Memory accesses report ``MEM``.  A ``CALL`` has an empty signature here;
    calls to external functions pick up their effect from a
    ``FunctionSummary`` at the call site (see ``summaries.site_def_use``).
    """
    return _SIGNATURES[instr.opcode](instr.operands)


def _make_signatures():
    table = {}
    for op in Opcode:
        _, defs, uses = _FORMATS[op]
        table[op] = lambda ops, d=defs, u=uses: (
            frozenset(ops[p] for p in d),
            frozenset(ops[p] for p in u),
        )
    table[Opcode.LOAD] = lambda ops: (frozenset((ops[0],)), frozenset((ops[1], MEM)))
    table[Opcode.STORE] = lambda ops: (frozenset((MEM,)), frozenset((ops[0], ops[1])))
    table[Opcode.ALLOC] = lambda ops: (frozenset((0,)), frozenset((ops[0],)))
    table[Opcode.FREE] = lambda ops: (frozenset(), frozenset((0,)))
    return table


_SIGNATURES = _make_signatures()


@dataclass(frozen=True)
class BasicBlock:
    start: int
    instructions: tuple[Instruction, ...]
    terminator: Terminator
    function: str

    @property
    def end(self) -> int:
        """One past the last address."""
        return self.start + len(self.instructions)

    @property
    def last(self) -> Instruction:
        return self.instructions[-1]

    def __contains__(self, address: int) -> bool:
        return self.start <= address < self.end


@dataclass(frozen=True)
class Function:
    name: str
    entry: int
    blocks: tuple[BasicBlock, ...] = ()
    is_external: bool = False


@dataclass(frozen=True)
class Program:
    functions: tuple[Function, ...]
    entry_function: str = "main"
    memory_size: int = DEFAULT_MEMORY_SIZE
    max_steps: int = DEFAULT_MAX_STEPS
    heap_base: int | None = None
    labels: Mapping[str, int] = field(default_factory=dict, compare=False)

    @cached_property
    def function_map(self) -> dict[str, Function]:
        return {f.name: f for f in self.functions}

    @cached_property
    def blocks(self) -> dict[int, BasicBlock]:
        return {b.start: b for f in self.functions for b in f.blocks}

    @cached_property
    def instructions(self) -> dict[int, Instruction]:
        return {i.address: i for b in self.blocks.values() for i in b.instructions}

    @cached_property
    def block_of(self) -> dict[int, int]:
        """Instruction address -> start of its block."""
        return {i.address: b.start for b in self.blocks.values() for i in b.instructions}

    @cached_property
    def function_of(self) -> dict[int, str]:
        """Instruction address -> name of its function."""
        return {i.address: b.function for b in self.blocks.values() for i in b.instructions}

    @cached_property
    def entry_of(self) -> dict[int, Function]:
        """Function entry address -> function (externals included)."""
        return {f.entry: f for f in self.functions}

    @property
    def entry(self) -> int:
        return self.function_map[self.entry_function].entry

    @property
    def heap_start(self) -> int:
        return self.heap_base if self.heap_base is not None else self.memory_size // 2

    @cached_property
    def target_id(self) -> str:
        """Content hash over the canonical disassembly."""
        from .asm import disassemble

        return hashlib.sha256(disassemble(self).encode()).hexdigest()

    def uses_heap(self) -> bool:
        return any(
            i.opcode in (Opcode.ALLOC, Opcode.FREE)
            or (i.opcode is Opcode.CALL and self.entry_of[i.operands[0]].is_external)
            for i in self.instructions.values()
        )
