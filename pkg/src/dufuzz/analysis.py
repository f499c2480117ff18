"""Static phase: supergraph construction, reaching definitions, chain extraction."""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

from .chains import ChainFile, DefUseChain
from .isa import MEM, Program, Terminator, loc_name
from .summaries import BUILTIN_SUMMARIES, FunctionSummary, MissingSummaryError, site_def_use

log = logging.getLogger(__name__)


class EdgeKind(str, enum.Enum):
    INTRA = "intra"
    CALL = "call"
    RETURN = "return"


class Definition(NamedTuple):
    site: int
    location: int

    def __repr__(self) -> str:
        return f"Definition({self.site:#x}, {loc_name(self.location)})"


@dataclass
class CFG:
    """Per-function block graphs joined by call and return edges."""

    program: Program
    succs: dict[int, list[tuple[int, EdgeKind]]] = field(default_factory=dict)
    preds: dict[int, list[tuple[int, EdgeKind]]] = field(default_factory=dict)

    def add_edge(self, src: int, dst: int, kind: EdgeKind) -> None:
        if (dst, kind) not in self.succs[src]:
            self.succs[src].append((dst, kind))
            self.preds[dst].append((src, kind))

    def edges(self, kind: EdgeKind | None = None) -> list[tuple[int, int, EdgeKind]]:
        return [
            (src, dst, k)
            for src in sorted(self.succs)
            for dst, k in self.succs[src]
            if kind is None or k is kind
        ]

    @property
    def nodes(self) -> list[int]:
        return sorted(self.succs)


def build_cfg(program: Program) -> CFG:
    cfg = CFG(program)
    for start in program.blocks:
        cfg.succs[start] = []
        cfg.preds[start] = []
    ret_blocks = {
        f.name: [b.start for b in f.blocks if b.terminator is Terminator.RET]
        for f in program.functions
        if not f.is_external
    }
    for f in program.functions:
        for b in f.blocks:
            last = b.last
            term = b.terminator
            if term is Terminator.BRANCH:
                cfg.add_edge(b.start, last.operands[2], EdgeKind.INTRA)
                cfg.add_edge(b.start, b.end, EdgeKind.INTRA)
            elif term is Terminator.JUMP:
                cfg.add_edge(b.start, last.operands[0], EdgeKind.INTRA)
            elif term is Terminator.FALLTHROUGH:
                cfg.add_edge(b.start, b.end, EdgeKind.INTRA)
            elif term is Terminator.CALL:
                callee = program.entry_of[last.operands[0]]
                if callee.is_external:
                    cfg.add_edge(b.start, b.end, EdgeKind.INTRA)
                else:
                    cfg.add_edge(b.start, callee.entry, EdgeKind.CALL)
                    for r in ret_blocks[callee.name]:
                        cfg.add_edge(r, b.end, EdgeKind.RETURN)
    return cfg


class RDResult(NamedTuple):
    IN: dict[int, frozenset[Definition]]
    OUT: dict[int, frozenset[Definition]]


def transfer(
    state: set[Definition], site: int, defs: frozenset[int], strong_mem: bool = False
) -> None:
    """Apply one instruction's definitions to ``state`` in place."""
    if not defs:
        return
    kill = defs if strong_mem else defs - {MEM}
    if kill:
        state.difference_update([d for d in state if d.location in kill])
    for loc in defs:
        state.add(Definition(site, loc))


def reaching_definitions(
    cfg: CFG,
    summaries: Mapping[str, FunctionSummary] = BUILTIN_SUMMARIES,
    *,
    strong_mem: bool = False,
    initial: Mapping[int, frozenset[Definition]] | None = None,
) -> RDResult:
    """Forward may-analysis to a fixpoint over the supergraph.

    ``MEM`` gets weak updates by default (a store never kills earlier stores);
    ``strong_mem=True`` makes each store kill all earlier ``MEM`` definitions.
    ``initial`` seeds the OUT sets, which must lie below the fixpoint.
    """
    program = cfg.program
    sigs: dict[int, list[tuple[int, frozenset[int]]]] = {}
    for start, block in program.blocks.items():
        rows = []
        for ins in block.instructions:
            try:
                defs, _ = site_def_use(program, ins, summaries)
            except MissingSummaryError as exc:
                raise MissingSummaryError(f"{exc} (called at {ins.address:#x})") from None
            rows.append((ins.address, defs))
        sigs[start] = rows

    IN: dict[int, frozenset[Definition]] = {n: frozenset() for n in cfg.nodes}
    OUT: dict[int, frozenset[Definition]] = {
        n: frozenset(initial.get(n, ())) if initial else frozenset() for n in cfg.nodes
    }
    work = deque(cfg.nodes)
    queued = set(work)
    while work:
        n = work.popleft()
        queued.discard(n)
        incoming: set[Definition] = set()
        for p, _ in cfg.preds[n]:
            incoming |= OUT[p]
        IN[n] = frozenset(incoming)
        state = incoming
        for site, defs in sigs[n]:
            transfer(state, site, defs, strong_mem)
        out = frozenset(state)
        if out != OUT[n]:
            OUT[n] = out
            for s, _ in cfg.succs[n]:
                if s not in queued:
                    queued.add(s)
                    work.append(s)
    return RDResult(IN, OUT)


def extract_chains(
    program: Program,
    rd: RDResult,
    summaries: Mapping[str, FunctionSummary] = BUILTIN_SUMMARIES,
    *,
    strong_mem: bool = False,
) -> ChainFile:
    chains = []
    for start, block in program.blocks.items():
        state = set(rd.IN[start])
        for ins in block.instructions:
            defs, uses = site_def_use(program, ins, summaries)
            for loc in sorted(uses):
                reaching = [d for d in state if d.location == loc]
                if not reaching:
                    log.debug("use of %s at %#x has no reaching definition; not instrumented", loc_name(loc), ins.address)
                chains.extend(DefUseChain(d.site, ins.address, loc) for d in reaching)
            transfer(state, ins.address, defs, strong_mem)
    return ChainFile.build(program, chains)


def analyze(
    program: Program,
    summaries: Mapping[str, FunctionSummary] = BUILTIN_SUMMARIES,
    *,
    strong_mem: bool = False,
) -> ChainFile:
    """Full (unselected) chain set for ``program``."""
    rd = reaching_definitions(build_cfg(program), summaries, strong_mem=strong_mem)
    return extract_chains(program, rd, summaries, strong_mem=strong_mem)
