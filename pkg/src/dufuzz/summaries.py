"""Effect summaries for external functions (the libc-hook analog).

An external function has no body; the analysis and the executor both apply
its summary at the ``CALL`` site, so a summarized definition lives at the
call-site address.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .isa import Instruction, Opcode, Program, def_use_signature


@dataclass(frozen=True)
class FunctionSummary:
    name: str
    defined: frozenset[int] = frozenset()
    used: frozenset[int] = frozenset()


BUILTIN_SUMMARIES: dict[str, FunctionSummary] = {
    "malloc": FunctionSummary("malloc", defined=frozenset({0})),
    "calloc": FunctionSummary("calloc", defined=frozenset({0})),
    "free": FunctionSummary("free", used=frozenset({0})),
}


class MissingSummaryError(LookupError):
    pass


def site_def_use(
    program: Program,
    instr: Instruction,
    summaries: Mapping[str, FunctionSummary] = BUILTIN_SUMMARIES,
) -> tuple[frozenset[int], frozenset[int]]:
    """Like ``def_use_signature`` but with external calls resolved through ``summaries``."""
    if instr.opcode is Opcode.CALL:
        callee = program.entry_of[instr.operands[0]]
        if callee.is_external:
            summary = summaries.get(callee.name)
            if summary is None:
                raise MissingSummaryError(f"no summary for external function {callee.name!r}")
            return summary.defined, summary.used
    return def_use_signature(instr)
