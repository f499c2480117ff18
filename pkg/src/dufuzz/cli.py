"""Command-line interface: ``dufuzz <command> ...``.

Exit status: 0 on success, 1 when a campaign or analysis fails, 2 for
usage and input/output errors (missing files, unparsable assembly, stale
chain files).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .analysis import analyze
from .asm import AsmError, assemble
from .bench import BenchConfig, run_bench, selection_speed, summary_text, write_speed_table
from .chains import ChainFile, ChainFileError, read_chain_file, write_chain_file
from .corpus import TARGET_NAMES, ManifestError, TargetManifest, load_target
from .coverage import hexdump
from .executor import Executor, Mode
from .fuzzer import CampaignError, CrashRecord, FuzzerConfig, duc_signature, fuzz, fuzz_parallel, load_seeds, triage
from .isa import Program
from .selection import SelectionConfig, select_chains, selection_report
from .summaries import MissingSummaryError

log = logging.getLogger("dufuzz")


class UsageError(Exception):
    """Bad arguments or unreadable inputs: exit status 2."""


class _Target:
    def __init__(self, name: str, program: Program, manifest: TargetManifest | None):
        self.name = name
        self.program = program
        self.manifest = manifest


def _load(spec: str) -> _Target:
    """A bundled target name, a ``.manifest`` file, or an ``.asm`` file."""
    path = Path(spec)
    try:
        if spec in TARGET_NAMES or path.suffix == ".manifest" or (
            path.suffix == ".asm" and path.with_suffix(".manifest").is_file()
        ):
            m = load_target(spec)
            try:
                program = m.program
            except AsmError as exc:
                raise UsageError(f"{m.asm_path}: {exc}") from exc
            return _Target(m.name, program, m)
        if not path.is_file():
            raise UsageError(f"no such target: {spec}")
        try:
            program = assemble(path.read_text())
        except AsmError as exc:
            raise UsageError(f"{path}: {exc}") from exc
        return _Target(path.stem, program, None)
    except (OSError, ManifestError) as exc:
        raise UsageError(str(exc)) from exc


def _selection(text: str) -> SelectionConfig:
    try:
        return SelectionConfig.parse(text)
    except ValueError as exc:
        raise UsageError(f"--select: {exc}") from exc


def _chains(target: _Target, args) -> ChainFile:
    """The chain file named by ``--chains``, else a fresh analysis + selection."""
    if getattr(args, "chains", None):
        try:
            return read_chain_file(args.chains, target.program)
        except OSError as exc:
            raise UsageError(f"cannot read chain file: {exc}") from exc
        except ChainFileError as exc:
            raise UsageError(f"{args.chains}: {exc}") from exc
    return select_chains(analyze(target.program), target.program, _selection(args.select))


def _block_table(program: Program, cf: ChainFile) -> str:
    lines = [f"{'block':<12}{'function':<20}{'defs':>6}{'uses':>6}"]
    for b in cf.blocks:
        fn = program.function_of[b.start]
        lines.append(f"{b.start:#010x}  {fn:<20}{b.ndef:>6}{b.nuse:>6}")
    return "\n".join(lines) + "\n"


def _write_selection(target: _Target, before: ChainFile, after: ChainFile, cfg: SelectionConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_chain_file(after, out / f"{target.name}.chains.json")
    rep = selection_report(before, after, target.program)
    (out / f"{target.name}.selection.txt").write_text(f"selection: {cfg.describe()}\n" + rep.to_text())
    print(_block_table(target.program, after), end="")
    print(rep.to_text(), end="")
    print(f"wrote {out / f'{target.name}.chains.json'}")


def cmd_analyze(args) -> int:
    target = _load(args.target)
    cfg = _selection(args.select)
    full = analyze(target.program)
    _write_selection(target, full, select_chains(full, target.program, cfg), cfg, Path(args.out))
    return 0


def cmd_select(args) -> int:
    target = _load(args.target)
    cfg = _selection(args.select)
    try:
        before = read_chain_file(args.chain_file, target.program)
    except OSError as exc:
        raise UsageError(f"cannot read chain file: {exc}") from exc
    except ChainFileError as exc:
        raise UsageError(f"{args.chain_file}: {exc}") from exc
    _write_selection(target, before, select_chains(before, target.program, cfg), cfg, Path(args.out))
    return 0


def cmd_run(args) -> int:
    target = _load(args.target)
    mode = Mode(args.mode)
    try:
        data = Path(args.input).read_bytes()
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    chains = _chains(target, args) if mode.duc else None
    res = Executor(target.program, chains, mode, dynamic_chains=args.dynamic_chains).run(data)
    print(res.describe(), end="")
    if args.dynamic_chains:
        print(f"dynamic pairs outside the chain set: {len(res.novel_pairs)}")
        for d, u, loc in sorted(res.novel_pairs):
            print(f"  {d:#x} -> {u:#x} loc {loc}")
    if args.dump_maps:
        if mode.edges:
            print("edge map:")
            print(hexdump(res.edge_map), end="")
        if mode.duc:
            print("duc map:")
            print(hexdump(res.duc_map), end="")
    return 0


def _budget(args, target: _Target) -> tuple[int | None, float | None]:
    if args.budget_execs is None and args.budget_secs is None:
        return (target.manifest.budget_execs if target.manifest else 100_000), None
    return args.budget_execs, args.budget_secs


def cmd_fuzz(args) -> int:
    target = _load(args.target)
    mode = Mode(args.mode)
    if args.seeds:
        try:
            seeds = load_seeds(Path(args.seeds))
        except CampaignError as exc:
            raise UsageError(str(exc)) from exc
    elif target.manifest is not None:
        seeds = list(target.manifest.seeds)
    else:
        raise UsageError("no seeds: pass --seeds DIR")
    chains = _chains(target, args) if mode.duc else None
    execs, secs = _budget(args, target)
    cfg = FuzzerConfig(
        mode=mode,
        rng_seed=args.rng_seed,
        budget_execs=execs,
        budget_secs=secs,
        dynamic_chains=args.dynamic_chains,
        stop_on_crash=args.stop_on_crash,
        clock=args.clock,
        out_dir=Path(args.out),
    )
    if args.workers > 1:
        rep = fuzz_parallel(target.program, chains, seeds, cfg, args.workers)
    else:
        rep = fuzz(target.program, chains, seeds, cfg, resume=args.resume)
    print(
        f"execs {rep.execs}  queue {rep.queue_size}  unique crashes {rep.unique_crashes}  "
        f"timeouts {rep.timeouts}  stop {rep.stop_reason}"
    )
    print(f"novelty edge {rep.novelty['edge']}  duc {rep.novelty['duc']}  "
          f"bits edge {rep.edge_bits}  duc {rep.duc_bits}")
    print(f"exec/s {rep.wall_execs_per_sec:.0f} wall, {rep.execs_per_sec:.0f} virtual")
    for c in rep.crashes:
        print(f"crash {c.kind.value} at {c.site:#x} ({len(c.input)} bytes)")
    if args.dynamic_chains:
        print(f"dynamic pairs outside the chain set: {len(rep.dynamic_pairs)}")
    return 0


def cmd_bench(args) -> int:
    names = args.targets or list(TARGET_NAMES)
    targets = []
    for n in names:
        t = _load(n)
        if t.manifest is None:
            raise UsageError(f"bench needs a manifest for {n}")
        targets.append(t.manifest)
    out = Path(args.out)
    if args.speed:
        rows = selection_speed(targets, args.repetitions)
        out.mkdir(parents=True, exist_ok=True)
        write_speed_table(rows, out / "selection_speed.csv")
        print(f"{'target':<18}{'edge':>10}{'both':>10}{'both/none':>11}{'speedup':>9}  ordered")
        for r in rows:
            print(f"{r.target:<18}{r.edge:>10.0f}{r.both:>10.0f}{r.both_unselected:>11.0f}{r.speedup:>9.2f}  {r.ordered}")
        return 0
    try:
        modes = [Mode(m) for m in args.modes.split(",")]
    except ValueError as exc:
        raise UsageError(f"--modes: {exc}") from exc
    budget = args.budget_execs if args.budget_execs is not None or args.budget_secs is not None else 10_000
    cfg = BenchConfig(
        targets=targets,
        modes=modes,
        trials=args.trials,
        budget_execs=budget,
        budget_secs=args.budget_secs,
        base_seed=args.rng_seed,
        select=_selection(args.select),
        out_dir=out,
    )
    res = run_bench(cfg)
    print(summary_text(res.summary), end="")
    for name, mode, trial, err in res.failures:
        print(f"FAILED {name} {mode} trial {trial}: {err}", file=sys.stderr)
    return 1 if res.failures else 0


def cmd_triage(args) -> int:
    target = _load(args.target)
    files: list[Path] = []
    for p in map(Path, args.crashes):
        if p.is_dir():
            files.extend(sorted(q for q in p.iterdir() if q.is_file()))
        elif p.is_file():
            files.append(p)
        else:
            raise UsageError(f"no such file or directory: {p}")
    ex = Executor(target.program, None, Mode.EDGE_ONLY)
    records = []
    origin = {}
    for f in files:
        data = f.read_bytes()
        res = ex.run(data)
        if not res.crashed:
            print(f"{f}: does not crash ({res.status.value})")
            continue
        rec = CrashRecord(data, res.crash_kind, res.crash_site, duc_signature(res.duc_hits))
        records.append(rec)
        origin[id(rec)] = f
    groups = triage(records)
    print(f"{len(groups)} unique crash(es) from {len(records)} crashing input(s)")
    for (kind, site), rec in groups.items():
        n = sum(1 for r in records if r.key == (kind, site))
        print(f"{kind.value:<14}{site:#x}  inputs {n}  shortest {origin[id(rec)]} ({len(rec.input)} bytes)")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out_dir)
    try:
        rep = json.loads((out / "report.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {out / 'report.json'}: {exc}") from exc
    print(f"execs           {rep['execs']}")
    print(f"stop reason     {rep['stop_reason']}")
    print(f"queue           {rep['queue_size']}")
    print(f"timeouts        {rep['timeouts']}")
    print(f"novelty         edge {rep['novelty']['edge']}  duc {rep['novelty']['duc']}")
    print(f"virgin bits     edge {rep['edge_bits']}  duc {rep['duc_bits']}")
    print(f"exec/s          {rep['wall_execs_per_sec']:.0f} wall, {rep['execs_per_sec']:.0f} virtual")
    print(f"unique crashes  {rep['unique_crashes']}")
    for c in rep["crashes"]:
        print(f"  {c['kind']:<14}{c['site']:#x}  {len(c['input']) // 2} bytes  first at exec {c['found_at']}")
    if rep["series"]:
        print("coverage over time (execs, edge bits, duc bits):")
        for row in rep["series"]:
            print(f"  {row['execs']:>10}{row['edge_virgin_bits_cleared']:>8}{row['duc_virgin_bits_cleared']:>8}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dufuzz", description="Grey-box fuzzing guided by def-use chain coverage.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def target_arg(p):
        p.add_argument("target", help=f"bundled target ({', '.join(TARGET_NAMES)}), .manifest or .asm file")

    def select_arg(p):
        p.add_argument("--select", default="default", help="'default', 'none', or a list of block,function,dead,max=N")

    p = sub.add_parser("analyze", help="static analysis: chain file and selection report")
    target_arg(p)
    select_arg(p)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("select", help="re-select an existing chain file")
    target_arg(p)
    p.add_argument("chain_file")
    select_arg(p)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_select)

    def mode_arg(p):
        p.add_argument("--mode", choices=[m.value for m in Mode], default="both")

    p = sub.add_parser("run", help="execute one input and print the result")
    target_arg(p)
    p.add_argument("input")
    mode_arg(p)
    p.add_argument("--chains", help="chain file (default: analyze + select now)")
    select_arg(p)
    p.add_argument("--dynamic-chains", action="store_true", help="report dynamic pairs missing from the chain set")
    p.add_argument("--dump-maps", action="store_true", help="hex dump of the coverage maps")
    p.set_defaults(func=cmd_run)

    def budget_args(p):
        p.add_argument("--budget-execs", type=int, help="execution budget")
        p.add_argument("--budget-secs", type=float, help="time budget (virtual seconds unless --clock wall)")
        p.add_argument("--rng-seed", type=int, default=0)

    p = sub.add_parser("fuzz", help="run a campaign")
    target_arg(p)
    mode_arg(p)
    budget_args(p)
    p.add_argument("--chains", help="chain file (default: analyze + select now)")
    select_arg(p)
    p.add_argument("--seeds", help="directory of initial inputs (default: the manifest's seeds)")
    p.add_argument("--out", default="out", help="campaign directory")
    p.add_argument("--resume", action="store_true", help="continue the campaign saved in --out")
    p.add_argument("--workers", type=int, default=1, help="parallel workers (not deterministic)")
    p.add_argument("--dynamic-chains", action="store_true", help="collect dynamic pairs missing from the chain set")
    p.add_argument("--stop-on-crash", action="store_true")
    p.add_argument("--clock", choices=("virtual", "wall"), default="virtual")
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("bench", help="campaign matrix and figure tables")
    p.add_argument("targets", nargs="*", help="targets (default: all bundled)")
    p.add_argument("--modes", default="edge,duc,both")
    p.add_argument("--trials", type=int, default=1)
    budget_args(p)
    select_arg(p)
    p.add_argument("--out", default="bench-out")
    p.add_argument("--speed", action="store_true", help="measure selection throughput instead of running campaigns")
    p.add_argument("--repetitions", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("triage", help="group crashing inputs by (kind, site)")
    target_arg(p)
    p.add_argument("crashes", nargs="+", help="crash files or directories")
    p.set_defaults(func=cmd_triage)

    p = sub.add_parser("report", help="summarize a campaign directory")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dufuzz: error: {exc}", file=sys.stderr)
        return 2
    except (CampaignError, ChainFileError, MissingSummaryError, ValueError) as exc:
        print(f"dufuzz: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
