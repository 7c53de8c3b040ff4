"""The fuzzing loop: seed pool, select, mutate, run on every version, judge."""

from __future__ import annotations

import json
import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, TextIO

import numpy as np

from .dsl import ParseError, Program, TypedProgram, canonical_hash, iter_seed_files, parse, print_program, validate
from .mutation import MutationOperator, MutationSite, NoApplicableMutation, SpecialKind, pick_and_mutate
from .oracle import (BlameSet, ClusterKey, OracleConfig, Verdict, VerdictKind, classify_symptom, cluster_key,
                     compare, default_step_budget, outcome_to_json, run_all, verdict_to_json, vote)
from .tensor import DType, StructureKind, TensorError
from .versions import VersionRegistry

log = logging.getLogger("deltafuzz.campaign")


class EmptyPool(RuntimeError):
    pass


@dataclass(frozen=True)
class CampaignConfig:
    seed_dir: Path
    rng_seed: int = 0
    max_iterations: int | None = 1000
    max_seconds: float | None = None
    step_budget: int = field(default_factory=default_step_budget)
    oracle: OracleConfig = OracleConfig()

    def __post_init__(self):
        if self.max_iterations is None and self.max_seconds is None:
            raise ValueError("campaign needs an iteration or a time budget")
        if self.max_iterations is not None and self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        if self.max_seconds is not None and self.max_seconds <= 0:
            raise ValueError("max_seconds must be positive")
        if self.step_budget <= 0:
            raise ValueError("step_budget must be positive")
        if not 0 <= self.rng_seed < 2 ** 64:
            raise ValueError("rng_seed must fit in an unsigned 64-bit integer")


@dataclass(frozen=True)
class PoolEntry:
    typed: TypedProgram
    hash: str
    order: int
    lineage: tuple[tuple[str, MutationSite], ...] = ()

    @property
    def program(self) -> Program:
        return self.typed.program


class Pool:
    def __init__(self):
        self.entries: list[PoolEntry] = []
        self._hashes: set[str] = set()

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, h: str) -> bool:
        return h in self._hashes

    def add(self, entry: PoolEntry) -> bool:
        if entry.hash in self._hashes:
            return False
        self._hashes.add(entry.hash)
        self.entries.append(entry)
        return True


@dataclass(frozen=True)
class SeedRejection:
    path: str
    reason: str


def init_pool(seed_dir: str | Path, registry: VersionRegistry, cfg: CampaignConfig | None = None
              ) -> tuple[Pool, list[SeedRejection]]:
    """Seeds that parse, validate, and agree on every version, deduplicated."""
    if len(registry) < 2:
        raise ValueError("a campaign needs at least 2 versions")
    step_budget = cfg.step_budget if cfg else default_step_budget()
    oracle_cfg = cfg.oracle if cfg else OracleConfig()
    pool = Pool()
    rejected: list[SeedRejection] = []
    for path in iter_seed_files(seed_dir):
        try:
            typed = validate(parse(path.read_text(encoding="utf-8")))
        except (ParseError, TensorError) as exc:
            log.warning("skipping seed %s: %s", path.name, exc)
            rejected.append(SeedRejection(path.name, f"invalid: {exc}"))
            continue
        verdict = compare(run_all(typed, registry, step_budget), oracle_cfg)
        if verdict.kind is not VerdictKind.CONSISTENT:
            log.warning("incompatible seed %s: %s across versions", path.name, verdict.kind.value)
            rejected.append(SeedRejection(path.name, f"incompatible seed: {verdict.kind.value}"))
            continue
        if not pool.add(PoolEntry(typed, canonical_hash(typed.program), 0)):
            log.info("duplicate seed %s", path.name)
    if not pool.entries:
        raise EmptyPool(f"no usable seeds in {seed_dir}")
    return pool, rejected


@dataclass(frozen=True)
class BugReport:
    report_id: int
    iteration: int
    program_text: str
    lineage: tuple[tuple[str, MutationSite], ...]
    verdict: Verdict
    blame: BlameSet
    symptom: str
    key: ClusterKey
    cluster_id: int
    outcomes: dict
    timestamp: int
    rerun_count: int = 0

    def to_json(self) -> dict:
        return {
            "report_id": self.report_id,
            "iteration": self.iteration,
            "timestamp": self.timestamp,
            "symptom": self.symptom,
            "blamed": list(self.blame.blamed),
            "resolution": self.blame.resolution.value,
            "cluster_id": self.cluster_id,
            "cluster_key": self.key.to_json(),
            "verdict": verdict_to_json(self.verdict),
            "outcomes": self.outcomes,
            "lineage": [{"parent": h, "site": s.to_json()} for h, s in self.lineage],
            "rerun_count": self.rerun_count,
            "program": self.program_text,
        }


@dataclass(frozen=True)
class CampaignEvent:
    iteration: int
    parent: str
    site: MutationSite | None
    mutant_hash: str | None
    statically_valid: bool
    verdict: VerdictKind | None
    admitted: bool
    report_id: int | None
    skipped: bool = False


@dataclass
class Cluster:
    id: int
    key: ClusterKey
    first_report: int
    first_iteration: int
    count: int = 0


@dataclass
class CampaignState:
    pool: Pool
    iteration: int = 0
    reports: int = 0
    skipped: int = 0
    admitted: int = 0
    clusters: dict = field(default_factory=dict)
    symptoms: Counter = field(default_factory=Counter)
    blame: Counter = field(default_factory=Counter)
    initial_pool: int = 0


class Campaign:
    """Runs the loop and owns its state; ``step`` performs one iteration."""

    def __init__(self, cfg: CampaignConfig, registry: VersionRegistry, state: CampaignState | None = None):
        self.cfg = cfg
        self.registry = registry
        if state is None:
            pool, self.rejected = init_pool(cfg.seed_dir, registry, cfg)
            state = CampaignState(pool, initial_pool=len(pool))
        else:
            self.rejected = []
        self.state = state

    def rng(self, iteration: int) -> np.random.Generator:
        return np.random.default_rng([self.cfg.rng_seed, iteration])

    def step(self) -> tuple[CampaignEvent, BugReport | None]:
        st = self.state
        it = st.iteration
        st.iteration += 1
        rng = self.rng(it)
        entry = st.pool.entries[int(rng.integers(len(st.pool)))]
        try:
            mutant = pick_and_mutate(entry.typed, rng, entry.lineage)
        except NoApplicableMutation:
            st.skipped += 1
            log.info("iteration %d: no applicable mutation for %s", it, entry.hash[:12])
            return CampaignEvent(it, entry.hash, None, None, False, None, False, None, skipped=True), None
        site = mutant.lineage[-1][1]
        outcomes = run_all(mutant.typed if mutant.typed is not None else mutant.program,
                           self.registry, self.cfg.step_budget)
        verdict = compare(outcomes, self.cfg.oracle)
        mhash = canonical_hash(mutant.program)
        admitted = False
        report = None
        if verdict.kind is VerdictKind.CONSISTENT:
            if mutant.statically_valid:
                admitted = st.pool.add(PoolEntry(mutant.typed, mhash, entry.order + 1, mutant.lineage))
                st.admitted += admitted
        elif verdict.is_bug:
            report = self._report(it, mutant, verdict, outcomes)
        event = CampaignEvent(it, entry.hash, site, mhash, mutant.statically_valid, verdict.kind, admitted,
                              report.report_id if report else None)
        return event, report

    def _report(self, it: int, mutant, verdict: Verdict, outcomes) -> BugReport:
        st = self.state
        blame = vote(verdict, outcomes)
        key = cluster_key(verdict, blame, outcomes, self.cfg.oracle)
        symptom = classify_symptom(verdict)
        rid = st.reports
        st.reports += 1
        cluster = st.clusters.get(key)
        if cluster is None:
            cluster = st.clusters[key] = Cluster(len(st.clusters), key, rid, it)
        cluster.count += 1
        st.symptoms[symptom.name] += 1
        for v in blame.blamed:
            st.blame[v] += 1
        return BugReport(rid, it, print_program(mutant.program), mutant.lineage, verdict, blame, symptom.name, key,
                         cluster.id, {v: outcome_to_json(o) for v, o in outcomes.items()}, timestamp=it)

    def done(self, started: float) -> bool:
        if self.cfg.max_iterations is not None and self.state.iteration >= self.cfg.max_iterations:
            return True
        return self.cfg.max_seconds is not None and time.monotonic() - started >= self.cfg.max_seconds

    def run(self, reports: TextIO | None = None,
            on_event: Callable[[CampaignEvent, BugReport | None], None] | None = None,
            checkpoint: str | Path | None = None, checkpoint_every: int = 0) -> "CampaignSummary":
        started = time.monotonic()
        while not self.done(started):
            event, report = self.step()
            if report is not None and reports is not None:
                reports.write(json.dumps(report.to_json(), sort_keys=True) + "\n")
            if on_event is not None:
                on_event(event, report)
            if checkpoint and checkpoint_every and self.state.iteration % checkpoint_every == 0:
                save_checkpoint(self, checkpoint)
        if checkpoint:
            save_checkpoint(self, checkpoint)
        return self.summary()

    def summary(self) -> "CampaignSummary":
        st = self.state
        return CampaignSummary(
            iterations=st.iteration,
            initial_pool=st.initial_pool,
            pool_size=len(st.pool),
            admitted=st.admitted,
            skipped=st.skipped,
            reports=st.reports,
            unique_clusters=len(st.clusters),
            per_symptom=dict(sorted(st.symptoms.items())),
            per_version_blame={v: st.blame.get(v, 0) for v in self.registry.ids},
            clusters=[{"id": c.id, "key": c.key.to_json(), "count": c.count, "first_report": c.first_report,
                       "first_iteration": c.first_iteration} for c in st.clusters.values()],
        )


@dataclass(frozen=True)
class CampaignSummary:
    iterations: int
    initial_pool: int
    pool_size: int
    admitted: int
    skipped: int
    reports: int
    unique_clusters: int
    per_symptom: dict
    per_version_blame: dict
    clusters: list

    def to_json(self) -> dict:
        return {"record": "summary", **self.__dict__}


def run(cfg: CampaignConfig, registry: VersionRegistry, reports: TextIO | None = None) -> CampaignSummary:
    return Campaign(cfg, registry).run(reports)


# --- checkpoints ---------------------------------------------------------------------

def site_from_json(obj: dict) -> MutationSite:
    op = MutationOperator(obj["operator"])
    raw = obj["operand"]
    if op is MutationOperator.TensorType:
        operand = DType(raw)
    elif op is MutationOperator.TensorShape:
        operand = tuple(raw)
    elif op is MutationOperator.TensorStructure:
        operand = StructureKind(raw)
    elif op is MutationOperator.TensorRotate:
        operand = int(raw)
    else:
        operand = SpecialKind(raw)
    return MutationSite(int(obj["stmt"]), op, operand, obj.get("param"))


def save_checkpoint(campaign: Campaign, path: str | Path) -> None:
    st = campaign.state
    data = {
        "rng_seed": campaign.cfg.rng_seed,
        "iteration": st.iteration,
        "reports": st.reports,
        "skipped": st.skipped,
        "admitted": st.admitted,
        "initial_pool": st.initial_pool,
        "symptoms": dict(st.symptoms),
        "blame": dict(st.blame),
        "clusters": [{"id": c.id, "key": c.key.to_json(), "first_report": c.first_report,
                      "first_iteration": c.first_iteration, "count": c.count} for c in st.clusters.values()],
        "pool": [{"program": print_program(e.program), "hash": e.hash, "order": e.order,
                  "lineage": [{"parent": h, "site": s.to_json()} for h, s in e.lineage]} for e in st.pool.entries],
    }
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(data, sort_keys=True), encoding="utf-8")
    tmp.replace(path)


def load_checkpoint(path: str | Path, cfg: CampaignConfig, registry: VersionRegistry) -> Campaign:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data["rng_seed"] != cfg.rng_seed:
        raise ValueError(f"checkpoint was written with rng seed {data['rng_seed']}, not {cfg.rng_seed}")
    pool = Pool()
    for e in data["pool"]:
        typed = validate(parse(e["program"]))
        lineage = tuple((x["parent"], site_from_json(x["site"])) for x in e["lineage"])
        # keep the recorded hash so dedup matches the uninterrupted run
        pool.add(PoolEntry(typed, e["hash"], e["order"], lineage))
    clusters = {}
    for c in data["clusters"]:
        blamed, symptom, signature, faults = c["key"]
        key = ClusterKey(tuple(blamed), symptom, signature, tuple(faults))
        clusters[key] = Cluster(c["id"], key, c["first_report"], c["first_iteration"], c["count"])
    state = CampaignState(pool, data["iteration"], data["reports"], data["skipped"], data["admitted"], clusters,
                          Counter(data["symptoms"]), Counter(data["blame"]), data["initial_pool"])
    return Campaign(cfg, registry, state)
