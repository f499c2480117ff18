"""Instrumented executor.

A program is translated once per instrumentation plan into a Python
function (blocks become branches of a dispatch tree, registers become
locals) and then run on many inputs.  Instrumentation is emitted only where
the plan asks for it:

* an edge event on every block transition, plus one from location 0 into
  the entry block (``EDGE_ONLY``/``BOTH``);
* a def-use event at every selected use site (``DUC_ONLY``/``BOTH``): the
  shadow last-writer of the used location is looked up and, if that
  (def, use, location) is a selected chain, the pair's slot is counted.

Shadow last-writer slots are kept only for locations some instrumented use
reads; tracking the others could never change an event.

Within one instruction the order is: fault checks, use events, effects.  A
faulting instruction therefore records nothing.
"""

from __future__ import annotations

import enum
import gc
import statistics
import time
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property

from .chains import ChainFile
from .coverage import MAP_MASK, CoverageMap, duc_index, edge_index
from .isa import MASK64, MEM, BasicBlock, Opcode, Program
from .machine import MAX_CALL_DEPTH, SIGN_BIT, CrashKind, Heap, Status
from .summaries import BUILTIN_SUMMARIES, site_def_use


class Mode(str, enum.Enum):
    EDGE_ONLY = "edge"
    DUC_ONLY = "duc"
    BOTH = "both"

    @property
    def edges(self) -> bool:
        return self is not Mode.DUC_ONLY

    @property
    def duc(self) -> bool:
        return self is not Mode.EDGE_ONLY


_STATUS = (Status.CLEAN_EXIT, Status.CRASH, Status.TIMEOUT)


@dataclass(eq=True)
class ExecResult:
    status: Status
    crash_kind: CrashKind | None
    crash_site: int | None
    edge_hits: dict[int, int]
    duc_hits: dict[int, int]
    instructions_executed: int
    # (def site or None, use site, location instance) at every use; observe mode only
    events: list[tuple[int | None, int, int]] | None = None
    # dynamic (def, use, class) pairs seen at instrumented uses but absent from the chain set
    novel_pairs: frozenset[tuple[int, int, int]] = frozenset()

    @property
    def crashed(self) -> bool:
        return self.status is Status.CRASH

    @property
    def crash_key(self) -> tuple[CrashKind, int] | None:
        return (self.crash_kind, self.crash_site) if self.crashed else None

    @cached_property
    def edge_map(self) -> CoverageMap:
        return CoverageMap(self.edge_hits)

    @cached_property
    def duc_map(self) -> CoverageMap:
        return CoverageMap(self.duc_hits)

    def describe(self) -> str:
        if self.status is Status.CRASH:
            head = f"CRASH {self.crash_kind.value} at {self.crash_site:#x}"
        else:
            head = self.status.value
        return (
            f"{head}\ninstructions: {self.instructions_executed}\n"
            f"edge slots hit: {len(self.edge_hits)}\nduc slots hit: {len(self.duc_hits)}\n"
        )


def _calloc(heap: Heap, mem: dict, n: int, size: int) -> int:
    total = (n * size) & MASK64
    addr = heap.alloc(total)
    if addr:
        for c in range(addr, addr + max(total, 1)):
            mem[c] = 0
    return addr


class _Translator:
    """Emits the source of ``run(inp, max_steps)`` for one program and plan."""

    def __init__(self, program, plan, *, edges, observe, dynamic, summaries):
        self.p = program
        self.plan = plan  # use_site -> {loc: frozenset(def sites)}
        self.edges = edges
        self.observe = observe
        self.dynamic = dynamic
        self.summaries = summaries
        locs = {loc for per_use in plan.values() for loc in per_use}
        if observe:
            locs = set(range(MEM + 1))
        self.track_regs = sorted(l for l in locs if l < MEM)
        self.track_mem = MEM in locs
        self.consts: dict[str, object] = {}
        self.out: list[str] = []

    def w(self, depth: int, text: str) -> None:
        self.out.append("    " * depth + text)

    def const(self, value) -> str:
        name = f"_K{len(self.consts)}"
        self.consts[name] = value
        return name

    def edge(self, depth: int, src: int, dst: int) -> None:
        if self.edges:
            k = edge_index(src, dst)
            self.w(depth, f"E[{k}] = E.get({k}, 0) + 1")

    def use_events(self, depth: int, addr: int, uses, mem_cell: str | None) -> None:
        per_use = self.plan.get(addr, {})
        for loc in sorted(uses):
            if loc == MEM:
                if not (self.observe or MEM in per_use):
                    continue
                shadow, inst = f"SM.get({mem_cell})", f"{MEM} + {mem_cell}"
            else:
                shadow, inst = f"s{loc}", str(loc)
            if self.observe:
                self.w(depth, f"EV.append(({shadow}, {addr}, {inst}))")
            defs = per_use.get(loc)
            if defs is None:
                continue
            if self.dynamic:
                ds = self.const(defs)
                self.w(depth, f"d = {shadow}")
                self.w(depth, "if d is not None:")
                self.w(depth + 1, f"k = (d ^ {addr}) & {MAP_MASK}")
                self.w(depth + 1, "D[k] = D.get(k, 0) + 1")
                self.w(depth + 1, f"if d not in {ds}: NV.add((d, {addr}, {loc}))")
            elif len(defs) == 1:
                (d,) = defs
                k = duc_index(d, addr)
                self.w(depth, f"if {shadow} == {d}: D[{k}] = D.get({k}, 0) + 1")
            else:
                ds = self.const(defs)
                self.w(depth, f"d = {shadow}")
                self.w(depth, f"if d in {ds}:")
                self.w(depth + 1, f"k = (d ^ {addr}) & {MAP_MASK}")
                self.w(depth + 1, "D[k] = D.get(k, 0) + 1")

    def shadow_defs(self, depth: int, addr: int, defs, mem_cell: str | None) -> None:
        for loc in sorted(defs):
            if loc == MEM:
                if self.track_mem:
                    self.w(depth, f"SM[{mem_cell}] = {addr}")
            elif loc in self.track_regs:
                self.w(depth, f"s{loc} = {addr}")

    def block(self, depth: int, b: BasicBlock) -> None:
        n = len(b.instructions)
        w = self.w
        w(depth, f"# block {b.start:#x} ({b.function})")
        w(depth, f"if steps + {n} > max_steps: status = 2; break")
        w(depth, f"steps += {n}")
        for j, ins in enumerate(b.instructions):
            a, op, o = ins.address, ins.opcode, ins.operands
            back = n - j - 1

            def crash(kind: CrashKind) -> str:
                fix = f"; steps -= {back}" if back else ""
                return f"status = 1; kind = {kind.value!r}; site = {a}{fix}; break"

            defs, uses = site_def_use(self.p, ins, self.summaries)
            w(depth, f"# {ins}")
            if op is Opcode.CONST:
                w(depth, f"r{o[0]} = {o[1]}")
            elif op is Opcode.MOV:
                self.use_events(depth, a, uses, None)
                w(depth, f"r{o[0]} = r{o[1]}")
            elif op in _ARITH_SRC:
                if op is Opcode.DIV:
                    w(depth, f"if not r{o[2]}: {crash(CrashKind.DIV_ZERO)}")
                self.use_events(depth, a, uses, None)
                w(depth, f"r{o[0]} = " + _ARITH_SRC[op].format(a=f"r{o[1]}", b=f"r{o[2]}"))
            elif op is Opcode.LOAD:
                w(depth, f"c = r{o[1]}")
                w(depth, f"if not c: {crash(CrashKind.NULL_DEREF)}")
                w(depth, f"if c >= {self.p.memory_size}: {crash(CrashKind.OOB)}")
                self.use_events(depth, a, uses, "c")
                w(depth, f"r{o[0]} = M.get(c, 0)")
            elif op is Opcode.STORE:
                w(depth, f"c = r{o[0]}")
                w(depth, f"if not c: {crash(CrashKind.NULL_DEREF)}")
                w(depth, f"if c >= {self.p.memory_size}: {crash(CrashKind.OOB)}")
                self.use_events(depth, a, uses, "c")
                w(depth, f"M[c] = r{o[1]}")
            elif op is Opcode.READ:
                w(depth, "if cur < ninp:")
                w(depth + 1, f"r{o[0]} = inp[cur]; cur += 1")
                w(depth, "else:")
                w(depth + 1, f"r{o[0]} = {MASK64}")
            elif op is Opcode.ALLOC:
                self.use_events(depth, a, uses, None)
                w(depth, f"r0 = H.alloc(r{o[0]})")
            elif op is Opcode.FREE:
                w(depth, f"if not H.free(r0): {crash(CrashKind.FREE_INVALID)}")
                self.use_events(depth, a, uses, None)
            elif op is Opcode.ASSERT:
                w(depth, f"if not r{o[0]}: {crash(CrashKind.ASSERT_FAIL)}")
                self.use_events(depth, a, uses, None)
            elif op in _BRANCH_SRC:
                self.use_events(depth, a, uses, None)
                w(depth, "if " + _BRANCH_SRC[op].format(a=f"r{o[0]}", b=f"r{o[1]}") + ":")
                self.edge(depth + 1, b.start, o[2])
                w(depth + 1, f"pc = {o[2]}; continue")
                self.edge(depth, b.start, b.end)
                w(depth, f"pc = {b.end}; continue")
            elif op is Opcode.JMP:
                self.edge(depth, b.start, o[0])
                w(depth, f"pc = {o[0]}; continue")
            elif op is Opcode.CALL:
                callee = self.p.entry_of[o[0]]
                if callee.is_external:
                    self.external_call(depth, a, callee.name, uses, crash)
                else:
                    w(depth, f"if len(stack) >= {MAX_CALL_DEPTH}: {crash(CrashKind.STACK_OVERFLOW)}")
                    w(depth, f"stack.append({b.end})")
                    self.edge(depth, b.start, callee.entry)
                    w(depth, f"pc = {callee.entry}; continue")
            elif op is Opcode.RET:
                w(depth, "if not stack: break")
                w(depth, "pc = stack.pop()")
                if self.edges:
                    w(depth, f"k = (pc ^ {b.start >> 1}) & {MAP_MASK}")
                    w(depth, "E[k] = E.get(k, 0) + 1")
                w(depth, "continue")
            elif op is Opcode.HALT:
                w(depth, "break")
            mem = "c" if op in (Opcode.LOAD, Opcode.STORE) else None
            self.shadow_defs(depth, a, defs, mem)
            if op is Opcode.CALL and self.p.entry_of[o[0]].is_external:
                self.edge(depth, b.start, b.end)
                w(depth, f"pc = {b.end}; continue")
        if b.last.opcode.terminator is None:
            self.edge(depth, b.start, b.end)
            w(depth, f"pc = {b.end}; continue")

    def external_call(self, depth, a, name, uses, crash) -> None:
        if name == "malloc":
            self.w(depth, "r0 = H.alloc(r1)")
        elif name == "calloc":
            self.w(depth, "r0 = _calloc(H, M, r1, r2)")
        elif name == "free":
            self.w(depth, f"if not H.free(r0): {crash(CrashKind.FREE_INVALID)}")
            self.use_events(depth, a, uses, None)
        else:
            raise ValueError(f"no runtime model for external function {name!r}")

    def tree(self, depth: int, blocks: list[BasicBlock]) -> None:
        if len(blocks) == 1:
            self.block(depth, blocks[0])
            return
        mid = len(blocks) // 2
        self.w(depth, f"if pc < {blocks[mid].start}:")
        self.tree(depth + 1, blocks[:mid])
        self.w(depth, "else:")
        self.tree(depth + 1, blocks[mid:])

    def source(self) -> str:
        w = self.w
        w(0, "def run(inp, max_steps):")
        w(1, " = ".join(f"r{i}" for i in range(16)) + " = 0")
        if self.track_regs:
            w(1, " = ".join(f"s{i}" for i in self.track_regs) + " = None")
        w(1, "M = {}")
        w(1, "SM = {}")
        # the entry block counts as an edge from location 0, as in AFL
        w(1, f"E = {{{edge_index(0, self.p.entry)}: 1}}" if self.edges else "E = {}")
        w(1, "D = {}")
        w(1, "EV = []" if self.observe else "EV = None")
        w(1, "NV = set()")
        w(1, f"H = _Heap({self.p.heap_start}, {self.p.memory_size})" if self.p.uses_heap() else "H = None")
        w(1, "ninp = len(inp); cur = 0")
        w(1, "stack = []")
        w(1, "steps = 0; status = 0; kind = None; site = None")
        w(1, f"pc = {self.p.entry}")
        w(1, "while True:")
        blocks = [self.p.blocks[s] for s in sorted(self.p.blocks)]
        self.tree(2, blocks)
        w(1, "return status, kind, site, steps, E, D, EV, NV")
        return "\n".join(self.out) + "\n"


_ARITH_SRC = {
    Opcode.ADD: f"({{a}} + {{b}}) & {MASK64}",
    Opcode.SUB: f"({{a}} - {{b}}) & {MASK64}",
    Opcode.MUL: f"({{a}} * {{b}}) & {MASK64}",
    Opcode.DIV: "{a} // {b}",
    Opcode.XOR: "{a} ^ {b}",
    Opcode.SHR: "{a} >> ({b} & 63)",
    Opcode.SHL: f"({{a}} << ({{b}} & 63)) & {MASK64}",
}

_BRANCH_SRC = {
    Opcode.BEQ: "{a} == {b}",
    Opcode.BNE: "{a} != {b}",
    Opcode.BLT: f"({{a}} ^ {SIGN_BIT}) < ({{b}} ^ {SIGN_BIT})",
    Opcode.BGE: f"({{a}} ^ {SIGN_BIT}) >= ({{b}} ^ {SIGN_BIT})",
}


def instrumentation_plan(chains: ChainFile | None) -> dict[int, dict[int, frozenset[int]]]:
    plan: dict[int, dict[int, set[int]]] = defaultdict(lambda: defaultdict(set))
    if chains is not None:
        for c in chains.chains:
            plan[c.use_site][c.location].add(c.def_site)
    return {u: {loc: frozenset(ds) for loc, ds in per.items()} for u, per in plan.items()}


class Executor:
    """Translated, instrumented runner for one (program, chains, mode)."""

    def __init__(
        self,
        program: Program,
        chains: ChainFile | None = None,
        mode: Mode | str = Mode.BOTH,
        *,
        dynamic_chains: bool = False,
        observe: bool = False,
        summaries=BUILTIN_SUMMARIES,
    ):
        self.program = program
        self.mode = Mode(mode)
        if self.mode.duc and chains is None:
            raise ValueError(f"mode {self.mode.value} needs a chain file")
        if chains is not None:
            chains.validate(program)
        self.chains = chains
        plan = instrumentation_plan(chains) if self.mode.duc else {}
        tr = _Translator(
            program, plan, edges=self.mode.edges, observe=observe, dynamic=dynamic_chains and self.mode.duc,
            summaries=summaries,
        )
        self.source = tr.source()
        namespace = dict(tr.consts, _Heap=Heap, _calloc=_calloc)
        exec(compile(self.source, f"<translated {program.target_id[:12]}>", "exec"), namespace)
        self._run = namespace["run"]

    def run_raw(self, data: bytes, max_steps: int | None = None):
        """Fast path: ``(status code, kind, site, steps, edge hits, duc hits)``."""
        st, kind, site, steps, E, D, _, _ = self._run(data, self.program.max_steps if max_steps is None else max_steps)
        return st, kind, site, steps, E, D

    def run(self, data: bytes, max_steps: int | None = None) -> ExecResult:
        st, kind, site, steps, E, D, EV, NV = self._run(
            data, self.program.max_steps if max_steps is None else max_steps
        )
        return ExecResult(
            _STATUS[st],
            CrashKind(kind) if kind is not None else None,
            site,
            E,
            D,
            steps,
            EV,
            frozenset(NV),
        )


_CACHE: dict[tuple, Executor] = {}


def execute(
    program: Program,
    chains: ChainFile | None,
    data: bytes,
    mode: Mode | str = Mode.BOTH,
    *,
    dynamic_chains: bool = False,
) -> ExecResult:
    """Run ``program`` once on ``data``; translations are cached."""
    key = (program.target_id, chains.chains if chains is not None else None, Mode(mode), dynamic_chains)
    ex = _CACHE.get(key)
    if ex is None:
        if len(_CACHE) > 64:
            _CACHE.clear()
        ex = _CACHE[key] = Executor(program, chains, mode, dynamic_chains=dynamic_chains)
    return ex.run(data)


@dataclass
class Calibration:
    median_seconds: float
    execs_per_second: float
    samples: list[float] = field(default_factory=list)
    status: Status = Status.CLEAN_EXIT
    crash_kind: CrashKind | None = None
    crash_site: int | None = None
    instructions: int = 0


def calibrate(
    program: Program,
    chains: ChainFile | None,
    data: bytes,
    mode: Mode | str = Mode.BOTH,
    repetitions: int = 5,
    *,
    batch: int | None = None,
    executor: Executor | None = None,
) -> Calibration:
    """Median per-execution wall time over ``repetitions`` timed batches.

    Translation is done before timing starts and the garbage collector is
    paused while timing.  A crashing input is reported in the result, not
    raised.
    """
    if repetitions < 3:
        raise ValueError("calibrate needs at least 3 repetitions")
    ex = executor or Executor(program, chains, mode)
    res = ex.run(data)
    if batch is None:
        t0 = time.perf_counter()
        ex.run_raw(data)
        one = max(time.perf_counter() - t0, 1e-7)
        batch = max(1, min(10_000, int(0.02 / one)))
    samples = []
    run = ex.run_raw
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repetitions):
            t0 = time.perf_counter()
            for _ in range(batch):
                run(data)
            samples.append((time.perf_counter() - t0) / batch)
    finally:
        if gc_was_enabled:
            gc.enable()
    med = statistics.median(samples)
    return Calibration(
        med, 1.0 / med if med > 0 else float("inf"), samples, res.status, res.crash_kind, res.crash_site,
        res.instructions_executed,
    )
