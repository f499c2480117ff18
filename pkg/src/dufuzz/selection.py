"""Chain selection: keep only the chains worth instrumenting.

With the default config a chain survives only when its definition and its
use sit in different functions.  A summarized definition at an external call
site belongs to the caller.
"""

from __future__ import annotations

import csv
import io
from collections import Counter, defaultdict
from dataclasses import dataclass

from .chains import ChainFile, ChainFileError, canonical_key
from .isa import Program


@dataclass(frozen=True)
class SelectionConfig:
    drop_intra_block: bool = True
    drop_intra_function: bool = True
    drop_dead_defs: bool = True
    max_chains_per_use: int | None = None

    @classmethod
    def none(cls) -> "SelectionConfig":
        return cls(False, False, False, None)

    @classmethod
    def parse(cls, spec: str) -> "SelectionConfig":
        """Parse a ``--select`` value.

        ``default``, ``none``, or a comma list drawn from ``block``,
        ``function``, ``dead`` and ``max=N``; the listed drops are the only
        ones enabled.
        """
        spec = spec.strip()
        if spec == "default":
            return cls()
        if spec == "none":
            return cls.none()
        flags = dict(drop_intra_block=False, drop_intra_function=False, drop_dead_defs=False, max_chains_per_use=None)
        for item in filter(None, (s.strip() for s in spec.split(","))):
            if item == "block":
                flags["drop_intra_block"] = True
            elif item == "function":
                flags["drop_intra_function"] = True
            elif item == "dead":
                flags["drop_dead_defs"] = True
            elif item.startswith("max="):
                n = int(item[4:])
                if n < 1:
                    raise ValueError("max must be >= 1")
                flags["max_chains_per_use"] = n
            else:
                raise ValueError(f"unknown selection flag {item!r}")
        return cls(**flags)

    def describe(self) -> str:
        if self == SelectionConfig.none():
            return "none"
        flags = (("block", self.drop_intra_block), ("function", self.drop_intra_function), ("dead", self.drop_dead_defs))
        parts = [name for name, on in flags if on]
        if self.max_chains_per_use is not None:
            parts.append(f"max={self.max_chains_per_use}")
        return ",".join(parts)


def select_chains(cf: ChainFile, program: Program, config: SelectionConfig = SelectionConfig()) -> ChainFile:
    if cf.target_id != program.target_id:
        raise ChainFileError("chain file was produced for a different program")
    chains = list(cf.chains)
    if config.max_chains_per_use is not None:
        # cap before filtering so that every drop flag only ever removes chains
        seen: Counter = Counter()
        capped = []
        for c in sorted(chains, key=canonical_key):
            key = c.use_site
            if seen[key] < config.max_chains_per_use:
                seen[key] += 1
                capped.append(c)
        chains = capped
    block_of, func_of = program.block_of, program.function_of
    if config.drop_intra_block:
        chains = [c for c in chains if block_of[c.def_site] != block_of[c.use_site]]
    if config.drop_intra_function:
        chains = [c for c in chains if func_of[c.def_site] != func_of[c.use_site]]
    # drop_dead_defs needs no pass: a def without chains is simply absent
    return ChainFile.build(program, chains)


@dataclass(frozen=True)
class SelectionReport:
    chains_before: int
    chains_after: int
    uses_before: int
    uses_after: int
    per_function: tuple[tuple[str, int, int, int, int], ...]  # name, chains b/a, uses b/a

    @property
    def reduction(self) -> float:
        """Percentage of chains removed."""
        if self.chains_before == 0:
            return 0.0
        return 100.0 * (self.chains_before - self.chains_after) / self.chains_before

    def rows(self) -> list[dict]:
        out = [
            dict(
                function="*",
                chains_before=self.chains_before,
                chains_after=self.chains_after,
                uses_before=self.uses_before,
                uses_after=self.uses_after,
            )
        ]
        for name, cb, ca, ub, ua in self.per_function:
            out.append(dict(function=name, chains_before=cb, chains_after=ca, uses_before=ub, uses_after=ua))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(self.rows()[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows())
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [
            f"chains: {self.chains_before} -> {self.chains_after} ({self.reduction:.1f}% reduction)",
            f"instrumented use sites: {self.uses_before} -> {self.uses_after}",
            f"{'function':<24}{'chains':>16}{'use sites':>16}",
        ]
        for name, cb, ca, ub, ua in self.per_function:
            lines.append(f"{name:<24}{f'{cb} -> {ca}':>16}{f'{ub} -> {ua}':>16}")
        return "\n".join(lines) + "\n"


def selection_report(before: ChainFile, after: ChainFile, program: Program) -> SelectionReport:
    if not after.chain_set <= before.chain_set:
        raise ValueError("selected chains are not a subset of the input chains")
    func_of = program.function_of

    def per_func(cf: ChainFile):
        chains: Counter = Counter()
        uses: defaultdict = defaultdict(set)
        for c in cf.chains:
            f = func_of[c.use_site]
            chains[f] += 1
            uses[f].add(c.use_site)
        return chains, uses

    cb, ub = per_func(before)
    ca, ua = per_func(after)
    names = [f.name for f in program.functions if not f.is_external]
    rows = tuple((n, cb[n], ca[n], len(ub[n]), len(ua[n])) for n in names)
    return SelectionReport(len(before), len(after), len(before.use_sites), len(after.use_sites), rows)

