"""The bundled benchmark targets and their manifests.

Each target ``<name>`` ships three files in the ``targets`` data directory:
``<name>.asm``, ``<name>.manifest`` (``key=value`` lines) and
``<name>.witness`` (an input that triggers the first planted bug; it is for
validation only and is never handed to the fuzzer).

Manifest keys: ``name``, ``asm``, ``description``, ``budget_execs``,
``bug.N=KIND,label,note``, ``seed.N=<hex>`` and ``bench=<hex>`` (a typical,
non-crashing input used for throughput measurement).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

from .asm import assemble
from .isa import Program
from .machine import CrashKind

TARGET_DIR = Path(__file__).with_name("targets")
TARGET_NAMES = ("magic-parser", "header-dispatch", "strip-like", "alloc-lifecycle")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class PlantedBug:
    kind: CrashKind
    label: str
    note: str


@dataclass(frozen=True)
class TargetManifest:
    name: str
    asm_path: Path
    description: str
    bugs: tuple[PlantedBug, ...]
    budget_execs: int
    seeds: tuple[bytes, ...]
    bench_input: bytes
    witness_path: Path

    @cached_property
    def program(self) -> Program:
        return assemble(self.asm_path.read_text())

    @property
    def witness(self) -> bytes:
        return self.witness_path.read_bytes()

    def bug_sites(self) -> list[tuple[CrashKind, int]]:
        """Planted bugs as (kind, address), resolved through the program's labels."""
        labels = self.program.labels
        out = []
        for bug in self.bugs:
            if bug.label not in labels:
                raise ManifestError(f"{self.name}: planted bug label {bug.label!r} is not in the program")
            out.append((bug.kind, labels[bug.label]))
        return out


def parse_manifest(path: str | Path) -> TargetManifest:
    path = Path(path)
    fields: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ManifestError(f"{path}:{lineno}: expected key=value")
        fields[key.strip()] = value.strip()
    try:
        bugs = []
        seeds = []
        for key in sorted(fields, key=lambda k: (k.split(".")[0], int(k.split(".")[1]) if "." in k else 0)):
            if key.startswith("bug."):
                kind, label, note = fields[key].split(",", 2)
                bugs.append(PlantedBug(CrashKind(kind), label, note))
            elif key.startswith("seed."):
                seeds.append(bytes.fromhex(fields[key]))
        name = fields["name"]
        return TargetManifest(
            name=name,
            asm_path=path.parent / fields["asm"],
            description=fields.get("description", ""),
            bugs=tuple(bugs),
            budget_execs=int(fields.get("budget_execs", 100_000)),
            seeds=tuple(seeds),
            bench_input=bytes.fromhex(fields.get("bench", "")),
            witness_path=path.with_suffix(".witness"),
        )
    except (KeyError, ValueError) as exc:
        raise ManifestError(f"{path}: bad manifest: {exc}") from exc


def provide_targets() -> dict[str, TargetManifest]:
    """All bundled targets, keyed by name."""
    return {name: parse_manifest(TARGET_DIR / f"{name}.manifest") for name in TARGET_NAMES}


def load_target(name_or_path: str | Path) -> TargetManifest:
    """A bundled target by name, or a manifest / assembly file on disk."""
    text = str(name_or_path)
    if text in TARGET_NAMES:
        return parse_manifest(TARGET_DIR / f"{text}.manifest")
    path = Path(text)
    if path.suffix == ".asm":
        path = path.with_suffix(".manifest")
    if not path.is_file():
        raise FileNotFoundError(f"no such target: {text}")
    return parse_manifest(path)
