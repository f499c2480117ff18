"""Benchmark harness: campaigns per (target, mode, trial) and figure tables.

Every trial is an ordinary campaign written to
``<out>/<target>/<mode>/trial_<i>/`` with rng seed ``base_seed + i``, so a
single-trial bench leaves exactly the artifacts of the matching ``fuzz``
run.  Three plot-data CSVs are derived afterwards:

``coverage.csv``  (target, mode, trial, point, execs, queue_len, new_edges, new_ducs)
    Corpus coverage growth on an evenly spaced grid of ``points`` exec
    counts.  Coverage is measured by replaying the queue entries found by
    that exec count under full edge + def-use instrumentation, minus what
    the initial seeds already cover, so every mode is scored the same way.
``crashes.csv``   (target, mode, trial, execs, unique_crashes, planted_found)
``speed.csv``     (target, mode, trial, execs, vtime_s, execs_per_sec_virtual, execs_per_sec_wall)

``summary.csv`` carries median / min / max over trials for the final
values, and ``summary.txt`` renders the same as a table.
"""

from __future__ import annotations

import csv
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .analysis import analyze
from .chains import ChainFile
from .corpus import TargetManifest
from .executor import Executor, Mode, calibrate
from .fuzzer import Campaign, FuzzerConfig
from .selection import SelectionConfig, select_chains

log = logging.getLogger(__name__)

COVERAGE_FIELDS = ("target", "mode", "trial", "point", "execs", "queue_len", "new_edges", "new_ducs")
CRASH_FIELDS = ("target", "mode", "trial", "execs", "unique_crashes", "planted_found")
SPEED_FIELDS = ("target", "mode", "trial", "execs", "vtime_s", "execs_per_sec_virtual", "execs_per_sec_wall")
SUMMARY_FIELDS = ("target", "mode", "metric", "median", "min", "max")
SUMMARY_METRICS = (
    ("new_edges", "coverage"), ("new_ducs", "coverage"), ("unique_crashes", "crashes"),
    ("planted_found", "crashes"), ("execs_per_sec_virtual", "speed"), ("execs_per_sec_wall", "speed"),
)


@dataclass
class BenchConfig:
    targets: Sequence[TargetManifest]
    modes: Sequence[Mode] = (Mode.EDGE_ONLY, Mode.DUC_ONLY, Mode.BOTH)
    trials: int = 1
    budget_execs: int | None = 10_000
    budget_secs: float | None = None
    base_seed: int = 0
    select: SelectionConfig = field(default_factory=SelectionConfig)
    out_dir: Path = Path("bench-out")
    points: int = 11
    stop_on_crash: bool = False


@dataclass
class BenchResult:
    coverage: list[dict] = field(default_factory=list)
    crashes: list[dict] = field(default_factory=list)
    speed: list[dict] = field(default_factory=list)
    summary: list[dict] = field(default_factory=list)
    failures: list[tuple[str, str, int, str]] = field(default_factory=list)


def grid(budget: int, points: int) -> list[int]:
    """``points`` exec counts from 0 to ``budget`` inclusive, evenly spaced."""
    if points < 2:
        return [budget]
    return [round(budget * k / (points - 1)) for k in range(points)]


def corpus_growth(
    program, chains: ChainFile, queue, checkpoints: Iterable[int]
) -> list[tuple[int, int, int, int]]:
    """(execs, queue_len, new_edges, new_ducs) at each checkpoint."""
    ex = Executor(program, chains, Mode.BOTH)
    base_e: set[int] = set()
    base_d: set[int] = set()
    found = []
    for entry in queue:
        _, _, _, _, E, D = ex.run_raw(entry.data)
        if entry.channel == "INITIAL":
            base_e |= E.keys()
            base_d |= D.keys()
        else:
            found.append((entry.found_at, E.keys(), D.keys()))
    n_initial = len(queue) - len(found)
    rows = []
    for cp in checkpoints:
        e: set[int] = set()
        d: set[int] = set()
        qlen = n_initial
        for at, ek, dk in found:
            if at <= cp:
                e |= ek
                d |= dk
                qlen += 1
        rows.append((cp, qlen, len(e - base_e), len(d - base_d)))
    return rows


def _fuzzer_config(cfg: BenchConfig, mode: Mode, trial: int, out: Path) -> FuzzerConfig:
    return FuzzerConfig(
        mode=mode,
        rng_seed=cfg.base_seed + trial,
        budget_execs=cfg.budget_execs,
        budget_secs=cfg.budget_secs,
        stop_on_crash=cfg.stop_on_crash,
        out_dir=out,
    )


def run_bench(cfg: BenchConfig) -> BenchResult:
    res = BenchResult()
    out = Path(cfg.out_dir)
    for target in cfg.targets:
        try:
            program = target.program
            chains = select_chains(analyze(program), program, cfg.select)
            planted = set(target.bug_sites())
        except Exception as exc:  # a broken target must not sink the rest of the suite
            log.error("target %s failed to load: %s", target.name, exc)
            res.failures.append((target.name, "*", -1, str(exc)))
            continue
        for mode in cfg.modes:
            for trial in range(cfg.trials):
                tdir = out / target.name / mode.value / f"trial_{trial}"
                fcfg = _fuzzer_config(cfg, mode, trial, tdir)
                try:
                    t0 = time.perf_counter()
                    camp = Campaign(program, chains if mode.duc else None, target.seeds, fcfg)
                    rep = camp.run()
                    wall = time.perf_counter() - t0
                except Exception as exc:
                    log.error("%s/%s trial %d aborted: %s", target.name, mode.value, trial, exc)
                    res.failures.append((target.name, mode.value, trial, str(exc)))
                    continue
                key = dict(target=target.name, mode=mode.value, trial=trial)
                budget = cfg.budget_execs if cfg.budget_execs is not None else rep.execs
                for point, (execs, qlen, ne, nd) in enumerate(
                    corpus_growth(program, chains, camp.queue, grid(budget, cfg.points))
                ):
                    res.coverage.append(dict(key, point=point, execs=execs, queue_len=qlen, new_edges=ne, new_ducs=nd))
                found = sum(1 for c in rep.crashes if (c.kind, c.site) in planted)
                res.crashes.append(dict(key, execs=rep.execs, unique_crashes=rep.unique_crashes, planted_found=found))
                res.speed.append(
                    dict(
                        key,
                        execs=rep.execs,
                        vtime_s=round(rep.vtime_s, 6),
                        execs_per_sec_virtual=round(rep.execs_per_sec, 3),
                        execs_per_sec_wall=round(rep.execs / wall, 3) if rep.execs and wall > 0 else 0.0,
                    )
                )
    res.summary = summarize(res)
    write_tables(res, out)
    return res


def summarize(res: BenchResult) -> list[dict]:
    finals: dict[tuple[str, str], dict[str, list[float]]] = {}
    last_point: dict[tuple[str, str, int], dict] = {}
    for row in res.coverage:
        last_point[(row["target"], row["mode"], row["trial"])] = row
    tables = {"coverage": list(last_point.values()), "crashes": res.crashes, "speed": res.speed}
    for metric, table in SUMMARY_METRICS:
        for row in tables[table]:
            finals.setdefault((row["target"], row["mode"]), {}).setdefault(metric, []).append(row[metric])
    out = []
    for (target, mode), metrics in finals.items():
        for metric, _ in SUMMARY_METRICS:
            vals = metrics.get(metric, [])
            if vals:
                out.append(
                    dict(target=target, mode=mode, metric=metric, median=statistics.median(vals),
                         min=min(vals), max=max(vals))
                )
    return out


def _write_csv(path: Path, fields: Sequence[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def summary_text(summary: list[dict]) -> str:
    lines = [f"{'target':<18}{'mode':<6}{'metric':<24}{'median':>12}{'min':>12}{'max':>12}"]
    for r in summary:
        lines.append(
            f"{r['target']:<18}{r['mode']:<6}{r['metric']:<24}"
            f"{r['median']:>12.6g}{r['min']:>12.6g}{r['max']:>12.6g}"
        )
    return "\n".join(lines) + "\n"


def write_tables(res: BenchResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "coverage.csv", COVERAGE_FIELDS, res.coverage)
    _write_csv(out / "crashes.csv", CRASH_FIELDS, res.crashes)
    _write_csv(out / "speed.csv", SPEED_FIELDS, res.speed)
    _write_csv(out / "summary.csv", SUMMARY_FIELDS, res.summary)
    (out / "summary.txt").write_text(summary_text(res.summary))


@dataclass(frozen=True)
class SpeedRow:
    target: str
    edge: float
    both: float
    both_unselected: float

    @property
    def speedup(self) -> float:
        """Throughput gain of default selection over no selection, BOTH mode."""
        return self.both / self.both_unselected

    @property
    def ordered(self) -> bool:
        return self.edge >= self.both >= self.both_unselected


SPEED_TABLE_FIELDS = ("target", "edge", "both", "both_unselected", "speedup", "ordered")


def selection_speed(
    targets: Sequence[TargetManifest], repetitions: int = 5, *, rounds: int = 3
) -> list[SpeedRow]:
    """Median exec/s on each target's bench input for EDGE, BOTH and unselected BOTH.

    The three configurations are measured in interleaved rounds, so slow
    drift of the machine hits all of them alike; each value is the median
    over rounds of ``calibrate``'s median.
    """
    rows = []
    for t in targets:
        p = t.program
        full = analyze(p)
        runners = {
            "edge": Executor(p, None, Mode.EDGE_ONLY),
            "both": Executor(p, select_chains(full, p), Mode.BOTH),
            "both_unselected": Executor(p, full, Mode.BOTH),
        }
        samples: dict[str, list[float]] = {k: [] for k in runners}
        for _ in range(rounds):
            for name, ex in runners.items():
                cal = calibrate(p, ex.chains, t.bench_input, ex.mode, repetitions, executor=ex)
                samples[name].append(cal.execs_per_second)
        rows.append(SpeedRow(t.name, *(statistics.median(samples[k]) for k in runners)))
    return rows


def write_speed_table(rows: Sequence[SpeedRow], path: Path) -> None:
    _write_csv(
        path,
        SPEED_TABLE_FIELDS,
        (
            dict(target=r.target, edge=round(r.edge, 1), both=round(r.both, 1),
                 both_unselected=round(r.both_unselected, 1), speedup=round(r.speedup, 3), ordered=int(r.ordered))
            for r in rows
        ),
    )
