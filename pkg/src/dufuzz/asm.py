"""Textual assembly: parser (``assemble``) and printer (``disassemble``).

Grammar, one item per line, ``;`` starts a comment::

    .memory 4096          ; memory cells (default 4096)
    .heap 2048            ; first heap cell (default memory/2)
    .maxsteps 1000000     ; instruction budget
    .entry main           ; entry function (default main)
    .extern malloc        ; external function, effect given by a summary
    .func main            ; starts a function
    loop:                 ; label, starts a block
        ADD r1, r1, r2
        BNE r1, r3, loop
        HALT

Immediates are decimal, ``0x`` hex, negative, or a character literal ``'A'``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .isa import (
    BASE_ADDRESS,
    DEFAULT_MAX_STEPS,
    DEFAULT_MEMORY_SIZE,
    EXTERN_BASE,
    MASK64,
    NUM_REGS,
    BasicBlock,
    Function,
    Instruction,
    Opcode,
    Program,
    Terminator,
)

_LABEL = re.compile(r"([A-Za-z_.$][\w.$-]*)\s*:(.*)\Z")
_NAME = re.compile(r"[A-Za-z_.$][\w.$-]*\Z")
_OPCODES = {op.name: op for op in Opcode}


class AsmError(ValueError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line else ""
        super().__init__(where + message)


@dataclass
class _Pending:
    address: int
    opcode: Opcode
    args: list[tuple[str, int]]  # (token, column)
    line: int


def _strip_comment(text: str) -> str:
    # ';' inside a char literal is not a comment
    out, i = [], 0
    while i < len(text):
        ch = text[i]
        if ch == "'" and i + 2 < len(text) and text[i + 2] == "'":
            out.append(text[i : i + 3])
            i += 3
            continue
        if ch == ";":
            break
        out.append(ch)
        i += 1
    return "".join(out)


def _parse_int(tok: str) -> int:
    if len(tok) == 3 and tok[0] == tok[2] == "'":
        return ord(tok[1])
    return int(tok, 0)


def _split_operands(rest: str, base_col: int) -> list[tuple[str, int]]:
    if not rest.strip():
        return []
    args, col = [], base_col
    for piece in rest.split(","):
        stripped = piece.strip()
        lead = len(piece) - len(piece.lstrip())
        args.append((stripped, col + lead))
        col += len(piece) + 1
    return args


def assemble(source: str) -> Program:
    """Parse assembly text into a ``Program``."""
    memory_size = DEFAULT_MEMORY_SIZE
    max_steps = DEFAULT_MAX_STEPS
    heap_base = None
    entry_name = "main"

    labels: dict[str, int] = {}
    label_func: dict[str, str] = {}
    label_lines: dict[str, int] = {}
    externs: list[str] = []
    func_order: list[str] = []
    func_instrs: dict[str, list[_Pending]] = {}
    pending_labels: list[tuple[str, int, int]] = []
    current: str | None = None
    addr = BASE_ADDRESS

    def define(name: str, value: int, lineno: int, col: int, func: str | None) -> None:
        if not _NAME.match(name) or name.lower() in _REGISTER_NAMES:
            raise AsmError(f"invalid name {name!r}", lineno, col)
        if name in labels:
            raise AsmError(f"duplicate label {name!r} (first defined on line {label_lines[name]})", lineno, col)
        labels[name] = value
        label_lines[name] = lineno
        if func is not None:
            label_func[name] = func

    def flush_labels(lineno: int) -> None:
        if pending_labels:
            name, line, col = pending_labels[0]
            raise AsmError(f"label {name!r} is not followed by an instruction", line, col)

    for lineno, raw in enumerate(source.splitlines(), start=1):
        text = _strip_comment(raw).rstrip()
        if not text.strip():
            continue
        col0 = len(text) - len(text.lstrip()) + 1
        body = text.strip()

        if body.startswith("."):
            parts = body.split()
            directive, args = parts[0], parts[1:]
            if len(args) != 1:
                raise AsmError(f"{directive} takes exactly one argument", lineno, col0)
            arg = args[0]
            arg_col = text.index(arg, col0 - 1 + len(directive)) + 1
            if directive == ".func":
                flush_labels(lineno)
                if current is not None and not func_instrs[current]:
                    raise AsmError(f"function {current!r} is empty", lineno, col0)
                define(arg, addr, lineno, arg_col, arg)
                current = arg
                func_order.append(arg)
                func_instrs[arg] = []
            elif directive == ".extern":
                define(arg, EXTERN_BASE + len(externs), lineno, arg_col, None)
                externs.append(arg)
            elif directive in (".memory", ".maxsteps", ".heap"):
                try:
                    value = _parse_int(arg)
                except ValueError:
                    raise AsmError(f"bad integer {arg!r}", lineno, arg_col) from None
                if value <= 0:
                    raise AsmError(f"{directive} must be positive", lineno, arg_col)
                if directive == ".memory":
                    memory_size = value
                elif directive == ".maxsteps":
                    max_steps = value
                else:
                    heap_base = value
            elif directive == ".entry":
                entry_name = arg
            else:
                raise AsmError(f"unknown directive {directive}", lineno, col0)
            continue

        m = _LABEL.match(body)
        if m:
            if current is None:
                raise AsmError("label outside of a function", lineno, col0)
            pending_labels.append((m.group(1), lineno, col0))
            rest = m.group(2)
            if not rest.strip():
                continue
            col0 += len(body) - len(rest.lstrip())
            body = rest.strip()

        if current is None:
            raise AsmError("instruction outside of a function", lineno, col0)
        mnemonic, _, rest = body.replace("\t", " ").partition(" ")
        op = _OPCODES.get(mnemonic.upper())
        if op is None:
            raise AsmError(f"unknown opcode {mnemonic!r}", lineno, col0)
        for name, line, col in pending_labels:
            define(name, addr, line, col, current)
        pending_labels.clear()
        args = _split_operands(rest, col0 + len(mnemonic) + 1)
        if len(args) != len(op.operand_kinds):
            raise AsmError(
                f"{op.name} expects {len(op.operand_kinds)} operand(s), got {len(args)}", lineno, col0
            )
        func_instrs[current].append(_Pending(addr, op, args, lineno))
        addr += 1

    flush_labels(0)
    if current is not None and not func_instrs[current]:
        raise AsmError(f"function {current!r} is empty")
    if entry_name not in func_instrs:
        raise AsmError(f"entry function {entry_name!r} is not defined")

    labeled_addrs = {a for n, a in labels.items() if n in label_func}
    functions = []
    for name in func_order:
        functions.append(_build_function(name, func_instrs[name], labels, label_func, externs, labeled_addrs))
    for i, name in enumerate(externs):
        functions.append(Function(name, EXTERN_BASE + i, (), True))
    return Program(
        tuple(functions),
        entry_function=entry_name,
        memory_size=memory_size,
        max_steps=max_steps,
        heap_base=heap_base,
        labels=dict(labels),
    )


_REGISTER_NAMES = {f"r{i}" for i in range(NUM_REGS)}


def _resolve(pend: _Pending, labels, label_func, externs, func_name) -> Instruction:
    operands = []
    for kind, (tok, col) in zip(pend.opcode.operand_kinds, pend.args):
        if kind == "r":
            if tok.lower() not in _REGISTER_NAMES:
                raise AsmError(f"expected register r0..r15, got {tok!r}", pend.line, col)
            operands.append(int(tok[1:]))
        elif kind == "i":
            try:
                operands.append(_parse_int(tok) & MASK64)
            except ValueError:
                raise AsmError(f"bad immediate {tok!r}", pend.line, col) from None
        elif kind == "l":
            if tok not in labels:
                raise AsmError(f"undefined label {tok!r}", pend.line, col)
            if label_func.get(tok) != func_name:
                raise AsmError(f"branch target {tok!r} is outside function {func_name!r}", pend.line, col)
            operands.append(labels[tok])
        else:  # function
            if tok not in labels:
                raise AsmError(f"undefined label {tok!r}", pend.line, col)
            if tok not in externs and label_func.get(tok) != tok:
                raise AsmError(f"call target {tok!r} is not a function", pend.line, col)
            operands.append(labels[tok])
    return Instruction(pend.address, pend.opcode, tuple(operands))


def _build_function(name, pendings, labels, label_func, externs, labeled_addrs) -> Function:
    instrs = [_resolve(p, labels, label_func, externs, name) for p in pendings]
    last = instrs[-1]
    if last.opcode not in (Opcode.JMP, Opcode.RET, Opcode.HALT):
        raise AsmError(
            f"function {name!r} falls off its end (last instruction is {last.opcode.name})",
            pendings[-1].line,
            1,
        )
    blocks = []
    current: list[Instruction] = []
    for ins in instrs:
        if current and ins.address in labeled_addrs:
            blocks.append(BasicBlock(current[0].address, tuple(current), Terminator.FALLTHROUGH, name))
            current = []
        current.append(ins)
        term = ins.opcode.terminator
        if term is not None:
            blocks.append(BasicBlock(current[0].address, tuple(current), term, name))
            current = []
    assert not current
    return Function(name, instrs[0].address, tuple(blocks), False)


def disassemble(program: Program) -> str:
    """Canonical text for ``program``; ``assemble`` of it gives back an equal program."""
    by_addr: dict[int, list[str]] = {}
    for label, a in program.labels.items():
        by_addr.setdefault(a, []).append(label)
    for names in by_addr.values():
        names.sort()
    func_names = {f.entry: f.name for f in program.functions}

    def label_for(a: int) -> str:
        if a in func_names:
            return func_names[a]
        names = by_addr.get(a)
        return names[0] if names else f"L_{a:x}"

    lines = [f".memory {program.memory_size}", f".maxsteps {program.max_steps}"]
    if program.heap_base is not None:
        lines.append(f".heap {program.heap_base}")
    if program.entry_function != "main":
        lines.append(f".entry {program.entry_function}")
    for f in program.functions:
        if f.is_external:
            lines.append(f".extern {f.name}")
    targets = {
        i.operands[-1]
        for i in program.instructions.values()
        if i.opcode.operand_kinds.endswith("l")
    }
    for f in program.functions:
        if f.is_external:
            continue
        lines.append(f".func {f.name}")
        for b in f.blocks:
            for ins in b.instructions:
                names = [n for n in by_addr.get(ins.address, []) if n != f.name]
                if not names and ins.address != f.entry and ins.address in targets:
                    names = [f"L_{ins.address:x}"]
                for n in names:
                    lines.append(f"{n}:")
                ops = []
                for kind, v in zip(ins.opcode.operand_kinds, ins.operands):
                    if kind == "r":
                        ops.append(f"r{v}")
                    elif kind == "i":
                        ops.append(str(v))
                    else:
                        ops.append(label_for(v))
                lines.append(f"    {ins.opcode.name} {', '.join(ops)}".rstrip())
    return "\n".join(lines) + "\n"
