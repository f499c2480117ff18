"""Shared fixtures and independent oracles for the test suite.

The oracles here deliberately avoid ``dufuzz.analysis``: successors and
def/use effects are re-derived from the instruction list, and reaching
definitions are computed by exploring concrete (block, incoming-state)
pairs along bounded paths instead of iterating a dataflow fixpoint.
"""

from __future__ import annotations

import json
import random

from dufuzz.asm import assemble
from dufuzz.isa import MEM, Opcode, Program

# ---- hand-written fixtures ------------------------------------------------

HANDWRITTEN: dict[str, str] = {
    "single": """
.func main
    CONST r1, 5
    ADD r2, r1, r1
    HALT
""",
    "f1": """
.func main
    CONST r1, 5
    CONST r2, 7
    ADD r3, r1, r2
    HALT
""",
    "straight3": """
.func main
    CONST r1, 1
    JMP b1
b1:
    ADD r2, r1, r1
    JMP b2
b2:
    ADD r3, r2, r1
    HALT
""",
    "diamond": """
.func main
    READ r3
    CONST r4, 0
    BEQ r3, r4, left
    CONST r1, 2
    JMP join
left:
    CONST r1, 1
join:
    ADD r2, r1, r1
    HALT
""",
    "loop5": """
.func main
    CONST r1, 0
    CONST r2, 10
head:
    BEQ r1, r2, exit
    CONST r3, 1
    ADD r1, r1, r3
    BLT r1, r3, head
    SUB r2, r2, r3
    JMP head
exit:
    ADD r4, r2, r1
    HALT
""",
    "nested": """
.func main
    CONST r1, 0
outer:
    CONST r2, 0
inner:
    ADD r2, r2, r1
    BLT r2, r1, inner
    READ r1
    BNE r1, r2, outer
    MOV r3, r2
    HALT
""",
    "selfloop": """
.func main
    CONST r1, 3
spin:
    SUB r1, r1, r2
    BNE r1, r2, spin
    HALT
""",
    "interproc": """
.func main
    CONST r1, 4
    CALL helper
    ADD r3, r0, r1
    HALT
.func helper
    ADD r0, r1, r1
    RET
""",
    "twocalls": """
.func main
    CONST r1, 1
    CALL inc
    MOV r2, r1
    CONST r1, 7
    CALL inc
    ADD r3, r1, r2
    HALT
.func inc
    CONST r5, 1
    ADD r1, r1, r5
    RET
""",
    "helper_branch": """
.func main
    READ r1
    CALL pick
    MOV r4, r2
    HALT
.func pick
    CONST r3, 'x'
    BEQ r1, r3, yes
    CONST r2, 0
    RET
yes:
    MOV r2, r1
    RET
""",
    "memory": """
.memory 64
.func main
    CONST r5, 8
    CONST r6, 9
    READ r1
    STORE r5, r1
    BEQ r1, r6, other
    STORE r6, r1
other:
    LOAD r2, r5
    LOAD r3, r6
    HALT
""",
    "memory_call": """
.memory 64
.func main
    CONST r5, 8
    CONST r1, 3
    STORE r5, r1
    CALL reader
    STORE r5, r2
    HALT
.func reader
    LOAD r2, r5
    RET
""",
    "externs": """
.extern malloc
.extern free
.memory 256
.heap 128
.func main
    CONST r1, 4
    CALL malloc
    MOV r4, r0
    CALL free
    MOV r0, r4
    HALT
""",
    "unreachable": """
.func main
    CONST r1, 1
    JMP end
dead:
    CONST r1, 2
    JMP end
end:
    MOV r2, r1
    HALT
""",
    "alloc_op": """
.memory 256
.func main
    CONST r1, 3
    ALLOC r1
    STORE r0, r1
    FREE
    LOAD r2, r0
    HALT
""",
    "recursion": """
.func main
    CONST r1, 3
    CALL down
    MOV r2, r1
    HALT
.func down
    CONST r3, 0
    BEQ r1, r3, base
    CONST r3, 1
    SUB r1, r1, r3
    CALL down
base:
    RET
""",
}

# the fixtures the spec's worked examples refer to by shape
DIAMOND = HANDWRITTEN["diamond"]
SINGLE = HANDWRITTEN["single"]


def fixture(name: str) -> Program:
    return assemble(HANDWRITTEN[name])


# ---- random programs ------------------------------------------------------

_REGS = ("r1", "r2", "r3", "r4")


def _body_instr(rng: random.Random, mem: bool) -> str:
    r = lambda: rng.choice(_REGS)  # noqa: E731
    choices = ["const", "mov", "arith", "read"] + (["load", "store"] if mem else [])
    kind = rng.choice(choices)
    if kind == "const":
        return f"CONST {r()}, {rng.randint(0, 3)}"
    if kind == "mov":
        return f"MOV {r()}, {r()}"
    if kind == "arith":
        return f"{rng.choice(('ADD', 'SUB', 'XOR'))} {r()}, {r()}, {r()}"
    if kind == "read":
        return f"READ {r()}"
    addr = rng.choice(("r5", "r6", "r5", "r6", r()))
    if kind == "load":
        return f"LOAD {r()}, {addr}"
    return f"STORE {addr}, {r()}"


def random_program_text(
    rng: random.Random,
    *,
    max_blocks: int = 8,
    max_instrs: int = 30,
    helper: bool | None = None,
    mem: bool = True,
    externs: bool = False,
) -> str:
    """A valid random program with at most ``max_blocks`` blocks and ``max_instrs`` instructions."""
    if helper is None:
        helper = rng.random() < 0.5
    nh = rng.randint(1, 2) if helper else 0
    nm = rng.randint(2, max_blocks - nh)
    # every body instruction plus terminators must stay within max_instrs
    budget = max_instrs - 2 - nm - nh - 1
    lines = [".memory 64"]
    if externs:
        lines += [".heap 32", ".extern malloc", ".extern free"]
    lines.append(".func main")

    def bodies(n: int) -> list[list[str]]:
        nonlocal budget
        out = []
        for _ in range(n):
            k = min(rng.randint(0, 3), max(budget, 0))
            budget -= k
            out.append([_body_instr(rng, mem) for _ in range(k)])
        return out

    mb = bodies(nm)
    for i in range(nm):
        lines.append(f"m{i}:")
        body = ["CONST r5, 8", "CONST r6, 9"] + mb[i] if i == 0 else mb[i]
        lines += [f"    {x}" for x in body]
        last = i == nm - 1
        opts = ["halt"] if last else ["fall", "beq", "jmp"]
        if not last and helper:
            opts.append("call")
        if not last and externs:
            opts.append("ext")
        t = rng.choice(opts)
        if t == "halt":
            lines.append("    HALT")
        elif t == "beq":
            lines.append(f"    {rng.choice(('BEQ', 'BNE', 'BLT'))} {rng.choice(_REGS)}, {rng.choice(_REGS)}, m{rng.randrange(nm)}")
        elif t == "jmp":
            lines.append(f"    JMP m{rng.randrange(1, nm)}")
        elif t == "call":
            lines.append("    CALL helper")
        elif t == "ext":
            lines.append(f"    CALL {rng.choice(('malloc', 'free'))}")
        if not body and t == "fall":
            lines.append("    MOV r2, r2")
    if helper:
        lines.append(".func helper")
        hb = bodies(nh)
        for i in range(nh):
            lines.append(f"h{i}:")
            lines += [f"    {x}" for x in hb[i]]
            if i == nh - 1:
                lines.append("    RET")
            elif rng.random() < 0.5:
                lines.append(f"    BEQ {rng.choice(_REGS)}, {rng.choice(_REGS)}, h{nh - 1}")
            elif not hb[i]:
                lines.append("    MOV r3, r3")
    return "\n".join(lines) + "\n"


def random_program(seed: int, **kw) -> Program:
    return assemble(random_program_text(random.Random(seed), **kw))


# ---- reaching-definition oracle ------------------------------------------

_DEF_POS = {
    Opcode.CONST: (0,), Opcode.MOV: (0,), Opcode.ADD: (0,), Opcode.SUB: (0,), Opcode.MUL: (0,),
    Opcode.DIV: (0,), Opcode.XOR: (0,), Opcode.SHR: (0,), Opcode.SHL: (0,), Opcode.LOAD: (0,),
    Opcode.READ: (0,),
}
_USE_POS = {
    Opcode.MOV: (1,), Opcode.ADD: (1, 2), Opcode.SUB: (1, 2), Opcode.MUL: (1, 2), Opcode.DIV: (1, 2),
    Opcode.XOR: (1, 2), Opcode.SHR: (1, 2), Opcode.SHL: (1, 2), Opcode.BEQ: (0, 1), Opcode.BNE: (0, 1),
    Opcode.BLT: (0, 1), Opcode.BGE: (0, 1), Opcode.LOAD: (1,), Opcode.STORE: (0, 1), Opcode.ALLOC: (0,),
    Opcode.ASSERT: (0,),
}
_EXTERN_EFFECT = {"malloc": ({0}, set()), "calloc": ({0}, set()), "free": (set(), {0})}


def effects(program: Program, ins) -> tuple[set[int], set[int]]:
    """(defined, used) locations, worked out from the opcode alone."""
    op, o = ins.opcode, ins.operands
    defs = {o[p] for p in _DEF_POS.get(op, ())}
    uses = {o[p] for p in _USE_POS.get(op, ())}
    if op is Opcode.STORE:
        defs.add(MEM)
    if op is Opcode.LOAD:
        uses.add(MEM)
    if op is Opcode.ALLOC:
        defs.add(0)
    if op is Opcode.FREE:
        uses.add(0)
    if op is Opcode.CALL:
        callee = program.entry_of[o[0]]
        if callee.is_external:
            d, u = _EXTERN_EFFECT[callee.name]
            defs |= d
            uses |= u
    return defs, uses


def successors(program: Program) -> dict[int, set[int]]:
    """Supergraph successors of each block, read off the last instruction."""
    blocks = program.blocks
    call_sites: dict[int, list[int]] = {}
    for b in blocks.values():
        last = b.last
        if last.opcode is Opcode.CALL and not program.entry_of[last.operands[0]].is_external:
            call_sites.setdefault(last.operands[0], []).append(b.end)
    entry_of_func = {f.name: f.entry for f in program.functions}
    succ: dict[int, set[int]] = {}
    for start, b in blocks.items():
        last = b.last
        op = last.opcode
        if op in (Opcode.BEQ, Opcode.BNE, Opcode.BLT, Opcode.BGE):
            s = {last.operands[2], b.end}
        elif op is Opcode.JMP:
            s = {last.operands[0]}
        elif op is Opcode.HALT:
            s = set()
        elif op is Opcode.RET:
            s = set(call_sites.get(entry_of_func[b.function], ()))
        elif op is Opcode.CALL:
            callee = program.entry_of[last.operands[0]]
            s = {b.end} if callee.is_external else {callee.entry}
        else:
            s = {b.end}
        succ[start] = s
    return succ


def _walk(program: Program, start: int, state: frozenset, strong_mem: bool, chains: set | None):
    cur = set(state)
    for ins in program.blocks[start].instructions:
        defs, uses = effects(program, ins)
        if chains is not None:
            for loc in uses:
                chains.update((d, ins.address, loc) for d, l in cur if l == loc)
        for loc in defs:
            if loc != MEM or strong_mem:
                cur = {(d, l) for d, l in cur if l != loc}
        cur |= {(ins.address, loc) for loc in defs}
    return frozenset(cur)


def oracle(program: Program, bound: int | None = None, *, strong_mem: bool = False):
    """Union over all paths of at most ``bound`` blocks (default 2 x blocks).

    Returns ``(IN, OUT, chains)`` with definitions as (site, location)
    pairs and chains as (def, use, location) triples.  A path may start at
    any block with nothing defined yet, exactly like a least fixpoint.
    """
    succ = successors(program)
    if bound is None:
        bound = 2 * len(program.blocks)
    IN = {b: set() for b in program.blocks}
    OUT = {b: set() for b in program.blocks}
    chains: set = set()
    seen: set = set()
    frontier = {(b, frozenset()) for b in program.blocks}
    for _ in range(bound):
        nxt = set()
        for node, state in frontier:
            if (node, state) in seen:
                continue
            seen.add((node, state))
            IN[node] |= state
            out = _walk(program, node, state, strong_mem, chains)
            OUT[node] |= out
            nxt.update((s, out) for s in succ[node])
        frontier = nxt
    return IN, OUT, chains


def converged_oracle(program: Program, *, strong_mem: bool = False):
    """The oracle at bound 2 x blocks, checked to agree with bound + 1."""
    k = 2 * len(program.blocks)
    a = oracle(program, k, strong_mem=strong_mem)
    b = oracle(program, k + 1, strong_mem=strong_mem)
    assert a == b, "oracle has not converged at 2 x blocks"
    return a


# ---- trace oracle for the shadow map --------------------------------------

def trace_use_events(trace) -> list[tuple[int | None, int, int]]:
    """(last writer or None, use site, instance) at every use in a trace."""
    last: dict[int, int] = {}
    out = []
    for addr, defs, uses in trace:
        for inst in sorted(set(uses)):
            out.append((last.get(inst), addr, inst))
        for inst in defs:
            last[inst] = addr
    return out


def file_tree(root, *, skip=("report.json",)):
    """Relative path -> bytes for every file below ``root``, minus ``skip`` names."""
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name not in skip
    }


def report_sans_wall(out):
    """report.json without its wall-clock fields."""
    doc = json.loads((out / "report.json").read_text())
    return {k: v for k, v in doc.items() if not k.startswith("wall_")}
