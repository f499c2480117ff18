"""Def-use chain sets and their JSON file format.

File layout::

    {
      "target_id": "<sha256 hex of the program's canonical disassembly>",
      "chains": [{"def": "0x1000", "use": "0x1001", "loc": "r1"}, ...],
      "blocks": [{"start": "0x1000", "ndef": 1, "nuse": 1}, ...]
    }

``chains`` are sorted by (use, def, loc).  ``blocks`` lists every block of the
program in address order; ``ndef``/``nuse`` count the distinct (site,
location) defs/uses inside the block that take part in some chain.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple

from .isa import Program, loc_name, parse_loc
from .summaries import BUILTIN_SUMMARIES, MissingSummaryError, site_def_use


class ChainFileError(ValueError):
    pass


class DefUseChain(NamedTuple):
    def_site: int
    use_site: int
    location: int

    def __str__(self) -> str:
        return f"{self.def_site:#x} -> {self.use_site:#x} [{loc_name(self.location)}]"


def canonical_key(chain: DefUseChain) -> tuple[int, int, int]:
    return (chain.use_site, chain.def_site, chain.location)


class BlockCounts(NamedTuple):
    start: int
    ndef: int
    nuse: int


@dataclass(frozen=True)
class ChainFile:
    target_id: str
    chains: tuple[DefUseChain, ...]
    blocks: tuple[BlockCounts, ...] = field(default=())

    @classmethod
    def build(cls, program: Program, chains: Iterable[DefUseChain]) -> "ChainFile":
        """Canonically order ``chains`` and compute the per-block index."""
        ordered = tuple(sorted(set(chains), key=canonical_key))
        return cls(program.target_id, ordered, _block_index(program, ordered))

    @classmethod
    def empty(cls, program: Program) -> "ChainFile":
        return cls.build(program, ())

    @cached_property
    def chain_set(self) -> frozenset[DefUseChain]:
        return frozenset(self.chains)

    @property
    def use_sites(self) -> frozenset[int]:
        return frozenset(c.use_site for c in self.chains)

    def __len__(self) -> int:
        return len(self.chains)

    def validate(self, program: Program) -> None:
        if self.target_id != program.target_id:
            raise ChainFileError(
                f"chain file is for target {self.target_id[:12]}, program is {program.target_id[:12]} (stale analysis?)"
            )
        instrs = program.instructions
        for c in self.chains:
            for what, site in (("def", c.def_site), ("use", c.use_site)):
                if site not in instrs:
                    raise ChainFileError(f"chain {c}: {what} site {site:#x} is not an instruction address")
            try:
                defs, _ = site_def_use(program, instrs[c.def_site], BUILTIN_SUMMARIES)
                _, uses = site_def_use(program, instrs[c.use_site], BUILTIN_SUMMARIES)
            except MissingSummaryError:
                continue
            if c.location not in defs:
                raise ChainFileError(f"chain {c}: {instrs[c.def_site]} does not define {loc_name(c.location)}")
            if c.location not in uses:
                raise ChainFileError(f"chain {c}: {instrs[c.use_site]} does not use {loc_name(c.location)}")
        if self.blocks != _block_index(program, self.chains):
            raise ChainFileError("per-block index does not match the chain list")

    def to_json(self) -> str:
        doc = {
            "target_id": self.target_id,
            "chains": [
                {"def": f"{c.def_site:#x}", "use": f"{c.use_site:#x}", "loc": loc_name(c.location)}
                for c in self.chains
            ],
            "blocks": [{"start": f"{b.start:#x}", "ndef": b.ndef, "nuse": b.nuse} for b in self.blocks],
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ChainFile":
        try:
            doc = json.loads(text)
            target_id = doc["target_id"]
            if not isinstance(target_id, str):
                raise TypeError("target_id must be a string")
            chains = tuple(
                DefUseChain(int(c["def"], 16), int(c["use"], 16), parse_loc(c["loc"])) for c in doc["chains"]
            )
            raw_blocks = [(int(b["start"], 16), int(b["ndef"]), int(b["nuse"])) for b in doc["blocks"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise ChainFileError(f"malformed chain file: {exc}") from exc
        if list(chains) != sorted(set(chains), key=canonical_key):
            raise ChainFileError("malformed chain file: chains are not canonically ordered or contain duplicates")
        blocks = tuple(BlockCounts(*b) for b in raw_blocks)
        return cls(target_id, chains, blocks)


def _block_index(program: Program, chains: Iterable[DefUseChain]) -> tuple[BlockCounts, ...]:
    block_of = program.block_of
    defs: dict[int, set] = {s: set() for s in program.blocks}
    uses: dict[int, set] = {s: set() for s in program.blocks}
    for c in chains:
        db, ub = block_of.get(c.def_site), block_of.get(c.use_site)
        if db is None or ub is None:
            raise ChainFileError(f"chain {c} refers to an address outside the program")
        defs[db].add((c.def_site, c.location))
        uses[ub].add((c.use_site, c.location))
    return tuple(BlockCounts(s, len(defs[s]), len(uses[s])) for s in sorted(program.blocks))


def chains_touching(cf: ChainFile, program: Program) -> Counter:
    """Block start -> number of chains with an end in that block."""
    block_of = program.block_of
    counts: Counter = Counter()
    for c in cf.chains:
        db, ub = block_of[c.def_site], block_of[c.use_site]
        counts[db] += 1
        if ub != db:
            counts[ub] += 1
    return counts


def write_chain_file(cf: ChainFile, path: str | Path) -> None:
    Path(path).write_text(cf.to_json())


def read_chain_file(path: str | Path, program: Program | None = None) -> ChainFile:
    """Load a chain file; with ``program`` given, validate it against that program."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ChainFileError(f"cannot read chain file {path}: {exc}") from exc
    cf = ChainFile.from_json(text)
    if program is not None:
        cf.validate(program)
    return cf
