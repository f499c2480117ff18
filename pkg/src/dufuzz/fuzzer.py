"""The grey-box campaign loop.

A campaign is a resumable state machine: a round-robin cursor over the
queue, and for the current seed a phase (deterministic stages, then havoc)
and a position within it.  Everything that influences the next mutant
(queue, virgin maps, rng state, cursor) is captured by ``save_state``, so
a campaign stopped at N execs and resumed behaves exactly like one that
never stopped.

Time is virtual by default: each execution advances the clock by a fixed
cost plus a per-instruction cost.  That keeps stats.csv and time-based
budgets reproducible; ``clock="wall"`` switches to real time.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import random
import statistics
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .chains import ChainFile
from .coverage import Novelty, VirginMap, check_hits
from .executor import Executor, Mode
from .isa import Program
from .machine import CrashKind
from .mutate import Havoc, deterministic_mutants

log = logging.getLogger(__name__)

STATE_FILE = "state.json"
STATS_FIELDS = (
    "unix_time", "execs", "execs_per_sec", "queue_len", "unique_crashes",
    "edge_virgin_bits_cleared", "duc_virgin_bits_cleared",
)
EXEC_COST_NS = 1000
STEP_COST_NS = 20
MIN_TIMEOUT_STEPS = 100_000
STATE_VERSION = 1


class CampaignError(RuntimeError):
    pass


class StateError(CampaignError):
    """A saved campaign state cannot be resumed."""


@dataclass
class FuzzerConfig:
    mode: Mode = Mode.BOTH
    rng_seed: int = 0
    budget_execs: int | None = None
    budget_secs: float | None = None
    deterministic: bool = True
    havoc: bool = True
    splice: bool = True
    det_max_len: int = 64
    max_input_len: int = 4096
    max_steps: int | None = None
    dynamic_chains: bool = False
    stop_on_crash: bool = False
    clock: str = "virtual"
    sample_execs: int = 10_000
    sample_secs: float = 1.0
    crash_files_per_key: int = 4
    out_dir: Path | None = None

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.clock not in ("virtual", "wall"):
            raise ValueError("clock must be 'virtual' or 'wall'")
        if self.budget_execs is not None and self.budget_execs < 0:
            raise ValueError("budget_execs must be >= 0")
        if self.out_dir is not None:
            self.out_dir = Path(self.out_dir)


@dataclass
class SeedEntry:
    data: bytes
    id: int
    parent: int | None
    channel: str  # INITIAL, EDGE, DUC or BOTH
    exec_ns: int
    credit: int
    fuzz_count: int = 0
    found_at: int = 0
    det_done: bool = False

    def to_json(self) -> dict:
        d = asdict(self)
        d["data"] = self.data.hex()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SeedEntry":
        return cls(**{**d, "data": bytes.fromhex(d["data"])})


@dataclass
class CrashRecord:
    input: bytes
    kind: CrashKind
    site: int
    duc_signature: str
    found_at: int = 0

    @property
    def key(self) -> tuple[CrashKind, int]:
        return (self.kind, self.site)

    def to_json(self) -> dict:
        return dict(
            input=self.input.hex(), kind=self.kind.value, site=self.site,
            duc_signature=self.duc_signature, found_at=self.found_at,
        )

    @classmethod
    def from_json(cls, d: dict) -> "CrashRecord":
        return cls(bytes.fromhex(d["input"]), CrashKind(d["kind"]), d["site"], d["duc_signature"], d["found_at"])


def duc_signature(duc_hits: Iterable[int]) -> str:
    return hashlib.sha1(",".join(map(str, sorted(duc_hits))).encode()).hexdigest()[:16]


def triage(crashes: Iterable[CrashRecord]) -> dict[tuple[CrashKind, int], CrashRecord]:
    """Group crashes by (kind, site), keeping the shortest input of each group."""
    groups: dict[tuple[CrashKind, int], CrashRecord] = {}
    for c in crashes:
        best = groups.get(c.key)
        if best is None or len(c.input) < len(best.input):
            groups[c.key] = c
    return dict(sorted(groups.items(), key=lambda kv: (kv[0][0].value, kv[0][1])))


@dataclass
class CampaignReport:
    execs: int
    vtime_s: float
    execs_per_sec: float
    queue_size: int
    unique_crashes: int
    crashes: list[CrashRecord]
    novelty: dict[str, int]
    timeouts: int
    edge_bits: int
    duc_bits: int
    series: list[dict]
    stop_reason: str
    dynamic_pairs: list[tuple[int, int, int]] = field(default_factory=list)
    wall_seconds: float = field(default=0.0, compare=False)
    wall_execs_per_sec: float = field(default=0.0, compare=False)

    def to_json(self) -> dict:
        d = asdict(self)
        d["crashes"] = [c.to_json() for c in self.crashes]
        return d


class Campaign:
    def __init__(
        self,
        program: Program,
        chains: ChainFile | None,
        seeds: Sequence[bytes],
        config: FuzzerConfig,
        *,
        _state: dict | None = None,
    ):
        if not seeds and _state is None:
            raise CampaignError("at least one initial seed is required")
        if config.mode.duc and chains is None:
            raise CampaignError(f"mode {config.mode.value} needs a chain file")
        if chains is not None and chains.target_id != program.target_id:
            raise CampaignError("chain file does not belong to this program (stale target id)")
        self.program = program
        self.chains = chains
        self.config = config
        self.executor = Executor(
            program, chains if config.mode.duc else None, config.mode, dynamic_chains=config.dynamic_chains
        )
        self._det_cache: tuple[int, list[bytes]] | None = None
        self._wall0 = time.perf_counter()
        self.out = config.out_dir
        if _state is not None:
            self._restore(_state)
        else:
            self._fresh(seeds)

    # ---- setup -------------------------------------------------------

    def _fresh(self, seeds: Sequence[bytes]) -> None:
        cfg = self.config
        self.rng = random.Random(cfg.rng_seed)
        self.virgin_edge = VirginMap()
        self.virgin_duc = VirginMap()
        self.queue: list[SeedEntry] = []
        self.crashes: dict[tuple[CrashKind, int], CrashRecord] = {}
        self.crash_files: dict[str, int] = {}
        self.execs = 0
        self.vtime_ns = 0
        self.timeouts = 0
        self.novelty = {"edge": 0, "duc": 0}
        self.edge_bits = 0
        self.duc_bits = 0
        self.cursor = {"seed": 0, "phase": "start", "pos": 0, "energy": 0, "idle": 0}
        self.series: list[dict] = []
        self.dynamic_pairs: set[tuple[int, int, int]] = set()
        self.stop_reason = ""
        if self.out is not None:
            for sub in ("queue", "crashes"):
                (self.out / sub).mkdir(parents=True, exist_ok=True)
            for name in ("stats.csv", "campaign.log"):
                (self.out / name).unlink(missing_ok=True)
            with open(self.out / "stats.csv", "w") as fh:
                fh.write(",".join(STATS_FIELDS) + "\n")
        self._log(f"start mode={cfg.mode.value} rng_seed={cfg.rng_seed} target={self.program.target_id[:16]}")
        steps = []
        for data in seeds:
            data = bytes(data[: cfg.max_input_len])
            st, kind, site, n, E, D = self.executor.run_raw(data, self.program.max_steps)
            steps.append(n)
            credit = self._classify(E, D)[1] if st == 0 else 0
            if st == 1:
                self._crash(data, kind, site, D)
            entry = SeedEntry(data, len(self.queue), None, "INITIAL", EXEC_COST_NS + STEP_COST_NS * n, credit)
            self.queue.append(entry)
            self._save_queue_file(entry)
            self._log(f"seed id={entry.id} len={len(data)} credit={credit}")
        if cfg.max_steps is not None:
            self.max_steps = cfg.max_steps
        else:
            med = int(statistics.median(steps)) if steps else 0
            self.max_steps = min(self.program.max_steps, max(5 * med, MIN_TIMEOUT_STEPS))
        self._next_sample_execs = 0
        self._next_sample_ns = 0
        self._sample()

    # ---- bookkeeping -------------------------------------------------

    def _log(self, line: str) -> None:
        if self.out is not None:
            with open(self.out / "campaign.log", "a") as fh:
                fh.write(line + "\n")

    def _save_queue_file(self, entry: SeedEntry) -> None:
        if self.out is not None:
            (self.out / "queue" / f"id_{entry.id:06d}_{entry.channel}").write_bytes(entry.data)

    def _now_s(self) -> float:
        if self.config.clock == "virtual":
            return self.vtime_ns / 1e9
        return time.perf_counter() - self._wall0

    def _sample(self) -> None:
        t = self._now_s()
        row = dict(
            unix_time=round(t, 6),
            execs=self.execs,
            execs_per_sec=round(self.execs / t, 3) if t > 0 else 0.0,
            queue_len=len(self.queue),
            unique_crashes=len(self.crashes),
            edge_virgin_bits_cleared=self.edge_bits,
            duc_virgin_bits_cleared=self.duc_bits,
        )
        self.series.append(row)
        if self.out is not None:
            with open(self.out / "stats.csv", "a") as fh:
                fh.write(",".join(str(row[k]) for k in STATS_FIELDS) + "\n")
        cfg = self.config
        self._next_sample_execs = (self.execs // cfg.sample_execs + 1) * cfg.sample_execs
        step = int(cfg.sample_secs * 1e9)
        if cfg.clock == "virtual":
            self._next_sample_ns = (self.vtime_ns // step + 1) * step
        else:
            self._next_sample_ns = int(t * 1e9) + step

    def _classify(self, E: dict, D: dict) -> tuple[Novelty, int, str]:
        mode = self.config.mode
        ne = nd = Novelty.NO_NEW
        ce = cd = 0
        if mode.edges:
            ne, ce = check_hits(E.items(), self.virgin_edge)
            self.edge_bits += ce
        if mode.duc:
            nd, cd = check_hits(D.items(), self.virgin_duc)
            self.duc_bits += cd
        if ne:
            self.novelty["edge"] += 1
        if nd:
            self.novelty["duc"] += 1
        channel = "BOTH" if ne and nd else "EDGE" if ne else "DUC" if nd else ""
        return max(ne, nd), ce + cd, channel

    def _crash(self, data: bytes, kind: str, site: int, D: dict) -> bool:
        kind = CrashKind(kind)
        key = (kind, site)
        rec = CrashRecord(data, kind, site, duc_signature(D), self.execs)
        best = self.crashes.get(key)
        new = best is None
        if new or len(data) < len(best.input):
            self.crashes[key] = rec
            tag = f"{kind.value}_{site:#x}"
            n = self.crash_files.get(tag, 0)
            if n < self.config.crash_files_per_key:
                self.crash_files[tag] = n + 1
                if self.out is not None:
                    (self.out / "crashes" / f"{tag}_{n}").write_bytes(data)
            self._log(
                f"exec={self.execs} crash kind={kind.value} site={site:#x} new={int(new)} "
                f"len={len(data)} sig={rec.duc_signature}"
            )
        return new

    # ---- main loop ---------------------------------------------------

    def _budget_left(self) -> bool:
        cfg = self.config
        if cfg.budget_execs is not None and self.execs >= cfg.budget_execs:
            self.stop_reason = "budget_execs"
            return False
        if cfg.budget_secs is not None and self._now_s() >= cfg.budget_secs:
            self.stop_reason = "budget_secs"
            return False
        if cfg.stop_on_crash and self.crashes:
            self.stop_reason = "crash"
            return False
        return True

    def _execute(self, data: bytes, parent: SeedEntry) -> None:
        st, kind, site, steps, E, D = self.executor.run_raw(data, self.max_steps)
        self.execs += 1
        cost = EXEC_COST_NS + STEP_COST_NS * steps
        self.vtime_ns += cost
        if st == 0:
            novelty, credit, channel = self._classify(E, D)
            if novelty:
                entry = SeedEntry(data, len(self.queue), parent.id, channel, cost, credit, found_at=self.execs)
                self.queue.append(entry)
                self._save_queue_file(entry)
                self._log(
                    f"exec={self.execs} admit id={entry.id} parent={parent.id} channel={channel} "
                    f"novelty={novelty.name} credit={credit} len={len(data)}"
                )
        elif st == 1:
            self._crash(data, kind, site, D)
        else:
            self.timeouts += 1
        if self.config.dynamic_chains and st != 2:
            # novel pairs need the full result; rerun only when asked for
            self.dynamic_pairs |= self.executor.run(data, self.max_steps).novel_pairs
        if self.execs >= self._next_sample_execs or self._clock_ns() >= self._next_sample_ns:
            self._sample()

    def merge_input(self, data: bytes, parent: int | None, execs: int) -> None:
        """Classify an input found elsewhere (another worker) against this campaign."""
        st, kind, site, steps, E, D = self.executor.run_raw(data, self.max_steps)
        if st == 0:
            novelty, credit, channel = self._classify(E, D)
            if novelty:
                entry = SeedEntry(data, len(self.queue), parent, channel,
                                  EXEC_COST_NS + STEP_COST_NS * steps, credit, found_at=execs)
                self.queue.append(entry)
                self._save_queue_file(entry)
                self._log(f"exec={execs} merge id={entry.id} channel={channel} credit={credit} len={len(data)}")
        elif st == 1:
            self._crash(data, kind, site, D)

    def _clock_ns(self) -> int:
        if self.config.clock == "virtual":
            return self.vtime_ns
        return int((time.perf_counter() - self._wall0) * 1e9)

    def _energy(self, entry: SeedEntry) -> int:
        total = sum(max(e.credit, 1) for e in self.queue)
        e = 256 * max(entry.credit, 1) * len(self.queue) // total
        return max(64, min(1024, e))

    def _mutants_det(self, entry: SeedEntry) -> list[bytes]:
        if self._det_cache is None or self._det_cache[0] != entry.id:
            self._det_cache = (entry.id, deterministic_mutants(entry.data))
        return self._det_cache[1]

    def run(self) -> CampaignReport:
        cfg = self.config
        cur = self.cursor
        havoc = Havoc(self.rng, cfg.max_input_len)
        while self._budget_left():
            entry = self.queue[cur["seed"]]
            if cur["phase"] == "start":
                if cfg.deterministic and not entry.det_done and len(entry.data) <= cfg.det_max_len:
                    cur.update(phase="det", pos=0)
                else:
                    cur.update(phase="havoc", pos=0, energy=self._energy(entry) if cfg.havoc else 0)
            if cur["phase"] == "det":
                mutants = self._mutants_det(entry)
                while cur["pos"] < len(mutants):
                    if not self._budget_left():
                        return self._finish()
                    m = mutants[cur["pos"]]
                    cur["pos"] += 1
                    cur["idle"] = 0
                    self._execute(m, entry)
                entry.det_done = True
                self._det_cache = None
                cur.update(phase="havoc", pos=0, energy=self._energy(entry) if cfg.havoc else 0)
            if cur["phase"] == "havoc":
                pool = [e.data for e in self.queue] if cfg.splice and len(self.queue) > 1 else ()
                while cur["pos"] < cur["energy"]:
                    if not self._budget_left():
                        return self._finish()
                    m = havoc.mutate(entry.data, pool)
                    cur["pos"] += 1
                    cur["idle"] = 0
                    self._execute(m, entry)
            entry.fuzz_count += 1
            cur["idle"] += 1
            if cur["idle"] > len(self.queue):
                self.stop_reason = "no_mutations"
                break
            cur.update(seed=(cur["seed"] + 1) % len(self.queue), phase="start", pos=0, energy=0)
        return self._finish()

    def _finish(self) -> CampaignReport:
        if self.out is not None:
            self.save_state(self.out / STATE_FILE)
        report = self.report()
        if self.out is not None:
            (self.out / "report.json").write_text(json.dumps(report.to_json(), indent=2) + "\n")
        return report

    def report(self) -> CampaignReport:
        t = self.vtime_ns / 1e9
        wall = time.perf_counter() - self._wall0
        return CampaignReport(
            execs=self.execs,
            vtime_s=t,
            execs_per_sec=self.execs / t if t > 0 else 0.0,
            queue_size=len(self.queue),
            unique_crashes=len(self.crashes),
            crashes=list(triage(self.crashes.values()).values()),
            novelty=dict(self.novelty),
            timeouts=self.timeouts,
            edge_bits=self.edge_bits,
            duc_bits=self.duc_bits,
            series=list(self.series),
            stop_reason=self.stop_reason,
            dynamic_pairs=sorted(self.dynamic_pairs),
            wall_seconds=wall,
            wall_execs_per_sec=self.execs / wall if wall > 0 else 0.0,
        )

    # ---- persistence -------------------------------------------------

    def state(self) -> dict:
        version, internal, gauss = self.rng.getstate()
        return dict(
            version=STATE_VERSION,
            target_id=self.program.target_id,
            chains_digest=_chains_digest(self.chains if self.config.mode.duc else None),
            mode=self.config.mode.value,
            rng=[version, list(internal), gauss],
            queue=[e.to_json() for e in self.queue],
            virgin_edge=_pack(self.virgin_edge.bits),
            virgin_duc=_pack(self.virgin_duc.bits),
            crashes=[c.to_json() for c in self.crashes.values()],
            crash_files=self.crash_files,
            execs=self.execs,
            vtime_ns=self.vtime_ns,
            timeouts=self.timeouts,
            novelty=self.novelty,
            edge_bits=self.edge_bits,
            duc_bits=self.duc_bits,
            cursor=self.cursor,
            series=self.series,
            dynamic_pairs=sorted(self.dynamic_pairs),
            max_steps=self.max_steps,
            next_sample=[self._next_sample_execs, self._next_sample_ns],
        )

    def save_state(self, path: Path) -> None:
        path = Path(path)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.state()))
        tmp.replace(path)

    def _restore(self, s: dict) -> None:
        try:
            if s["version"] != STATE_VERSION:
                raise StateError(f"unsupported state version {s['version']}")
            if s["target_id"] != self.program.target_id:
                raise StateError("saved state belongs to a different program")
            if s["mode"] != self.config.mode.value:
                raise StateError(f"saved state was for mode {s['mode']}, not {self.config.mode.value}")
            if s["chains_digest"] != _chains_digest(self.chains if self.config.mode.duc else None):
                raise StateError("saved state was made with a different chain set")
            self.rng = random.Random()
            v, internal, gauss = s["rng"]
            self.rng.setstate((v, tuple(internal), gauss))
            self.queue = [SeedEntry.from_json(d) for d in s["queue"]]
            if not self.queue:
                raise StateError("saved state has an empty queue")
            self.virgin_edge = VirginMap(_unpack(s["virgin_edge"]))
            self.virgin_duc = VirginMap(_unpack(s["virgin_duc"]))
            self.crashes = {c.key: c for c in map(CrashRecord.from_json, s["crashes"])}
            self.crash_files = dict(s["crash_files"])
            self.execs = s["execs"]
            self.vtime_ns = s["vtime_ns"]
            self.timeouts = s["timeouts"]
            self.novelty = dict(s["novelty"])
            self.edge_bits = s["edge_bits"]
            self.duc_bits = s["duc_bits"]
            self.cursor = dict(s["cursor"])
            self.series = list(s["series"])
            self.dynamic_pairs = {tuple(p) for p in s["dynamic_pairs"]}
            self.max_steps = s["max_steps"]
            self._next_sample_execs, self._next_sample_ns = s["next_sample"]
        except StateError:
            raise
        except (KeyError, TypeError, ValueError, zlib.error) as exc:
            raise StateError(f"corrupt campaign state: {exc}") from exc
        self.stop_reason = ""

    @classmethod
    def load_state(
        cls, path: Path, program: Program, chains: ChainFile | None, config: FuzzerConfig
    ) -> "Campaign":
        try:
            s = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise StateError(f"cannot read campaign state {path}: {exc}") from exc
        if not isinstance(s, dict):
            raise StateError("corrupt campaign state: not an object")
        return cls(program, chains, (), config, _state=s)


def _pack(bits: bytes) -> str:
    return base64.b64encode(zlib.compress(bytes(bits), 9)).decode()


def _unpack(text: str) -> bytes:
    return zlib.decompress(base64.b64decode(text.encode(), validate=True))


def _chains_digest(chains: ChainFile | None) -> str:
    if chains is None:
        return ""
    return hashlib.sha256(chains.to_json().encode()).hexdigest()


def fuzz(
    program: Program,
    chains: ChainFile | None,
    seeds: Sequence[bytes],
    config: FuzzerConfig,
    *,
    resume: bool = False,
) -> CampaignReport:
    """Run (or, with ``resume``, continue) a campaign until its budget is spent."""
    if resume:
        if config.out_dir is None:
            raise CampaignError("resume needs an output directory")
        camp = Campaign.load_state(config.out_dir / STATE_FILE, program, chains, config)
    else:
        camp = Campaign(program, chains, seeds, config)
    return camp.run()


def load_seeds(path: Path) -> list[bytes]:
    """Read every regular file in a seed directory, sorted by name."""
    path = Path(path)
    if not path.is_dir():
        raise CampaignError(f"seed directory {path} is not readable")
    seeds = [p.read_bytes() for p in sorted(path.iterdir()) if p.is_file()]
    if not seeds:
        raise CampaignError(f"seed directory {path} is empty")
    return seeds


def _worker(job: tuple) -> tuple[list[bytes], list[bytes], int, int]:
    program, chains, seeds, config = job
    camp = Campaign(program, chains, seeds, config)
    camp.run()
    found = [e.data for e in camp.queue if e.channel != "INITIAL"]
    return found, [c.input for c in camp.crashes.values()], camp.execs, camp.vtime_ns


def fuzz_parallel(
    program: Program,
    chains: ChainFile | None,
    seeds: Sequence[bytes],
    config: FuzzerConfig,
    workers: int,
    *,
    epoch_execs: int = 20_000,
) -> CampaignReport:
    """Run ``workers`` independent havoc campaigns in epochs, merging after each.

    Every epoch each worker starts from a snapshot of the merged queue with
    its own rng seed; afterwards the parent replays what the workers found
    against the global virgin maps.  Results depend on process timing only
    through wall-clock budgets, but the merge order and worker seeding make
    this mode a different search from the single-worker loop, and it is not
    covered by the determinism guarantees.
    """
    if workers < 1:
        raise CampaignError("workers must be >= 1")
    if config.budget_execs is None and config.budget_secs is None:
        raise CampaignError("parallel mode needs an exec or time budget")
    merger = Campaign(program, chains, seeds, config)
    wall0 = time.perf_counter()
    epoch = 0
    with ProcessPoolExecutor(max_workers=workers) as pool:
        while True:
            left = None if config.budget_execs is None else config.budget_execs - merger.execs
            if left is not None and left <= 0:
                merger.stop_reason = "budget_execs"
                break
            if config.budget_secs is not None and time.perf_counter() - wall0 >= config.budget_secs:
                merger.stop_reason = "budget_secs"
                break
            if config.stop_on_crash and merger.crashes:
                merger.stop_reason = "crash"
                break
            n = workers if left is None else min(workers, left)
            per = epoch_execs if left is None else min(epoch_execs, left // n)
            snapshot = [e.data for e in merger.queue]
            jobs = [
                (program, chains if config.mode.duc else None, snapshot,
                 replace(config, rng_seed=config.rng_seed + epoch * workers + w, budget_execs=per,
                         budget_secs=None, deterministic=False, out_dir=None))
                for w in range(n)
            ]
            for found, crashes, execs, vtime in pool.map(_worker, jobs):
                merger.execs += execs
                merger.vtime_ns += vtime
                for data in found:
                    merger.merge_input(data, None, merger.execs)
                for data in crashes:
                    merger.merge_input(data, None, merger.execs)
            merger._sample()
            epoch += 1
    return merger._finish()
