"""Declared-element coverage for the reference engine.

Engine code declares its instrumentation points at import time with
:func:`declare` and marks them with :func:`probe`.  Probes are no-ops unless
a sink is active (see :func:`recording`), so the fuzzing hot path pays one
context-variable lookup per probe.

The analysis half of the module turns covered-id sets into per-component
tables and Venn-style overlap region counts.
"""

from __future__ import annotations

import contextlib
import contextvars
import enum
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from itertools import combinations
from typing import Iterable, Iterator, Sequence


class ArchLevel(enum.Enum):
    """The five architecture levels used to tag faults and coverage elements."""

    UserLevelAPI = "UserLevelAPI"
    GraphLevelImpl = "GraphLevelImpl"
    OperationImpl = "OperationImpl"
    GeneralUtility = "GeneralUtility"
    EnvDependentProcessing = "EnvDependentProcessing"

    @classmethod
    def parse(cls, text: str) -> "ArchLevel":
        try:
            return cls(text)
        except ValueError:
            raise ValueError(f"unknown architecture level {text!r}") from None


class ElementKind(enum.Enum):
    LINE = "Line"
    BRANCH = "Branch"
    FUNCTION = "Function"


@dataclass(frozen=True)
class CoverageElement:
    id: str
    kind: ElementKind
    component: ArchLevel


_UNIVERSE: dict[str, CoverageElement] = {}
_SINK: contextvars.ContextVar[set | None] = contextvars.ContextVar("deltafuzz_cov", default=None)


def declare(element_id: str, kind: ElementKind, component: ArchLevel) -> str:
    old = _UNIVERSE.get(element_id)
    if old is not None and (old.kind, old.component) != (kind, component):
        raise ValueError(f"coverage element {element_id!r} redeclared differently")
    _UNIVERSE[element_id] = CoverageElement(element_id, kind, component)
    return element_id


def probe(element_id: str) -> None:
    sink = _SINK.get()
    if sink is not None:
        sink.add(element_id)


def active() -> bool:
    return _SINK.get() is not None


@contextlib.contextmanager
def recording() -> Iterator[set]:
    """Collect every probed element id inside the block into the yielded set."""
    hits: set = set()
    token = _SINK.set(hits)
    try:
        yield hits
    finally:
        _SINK.reset(token)


def universe() -> dict[str, CoverageElement]:
    # importing the engine modules populates the declarations
    from . import dsl, oracle, tensor, versions  # noqa: F401

    return dict(_UNIVERSE)


@dataclass
class CoverageSet:
    label: str
    covered: frozenset = field(default_factory=frozenset)

    def __len__(self) -> int:
        return len(self.covered)


def collect(programs: Iterable, version_id: str, registry, label: str = "corpus",
            step_budget: int = 10_000) -> CoverageSet:
    """Union of elements touched by executing every program on one version."""
    from .oracle import execute

    version = registry.get(version_id)
    known = universe()
    covered: set = set()
    for program in programs:
        with recording() as hits:
            execute(program, version, step_budget)
        covered |= hits
    stray = covered - known.keys()
    if stray:
        raise RuntimeError(f"undeclared coverage elements probed: {sorted(stray)}")
    return CoverageSet(label, frozenset(covered))


@dataclass(frozen=True)
class CoverageRow:
    component: str
    covered: int
    total: int
    percent: float


def _percent(num: int, den: int) -> float:
    if den == 0:
        return 0.0
    value = Decimal(num * 100) / Decimal(den)
    return float(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def coverage_table(cov: CoverageSet | Iterable[str], universe_map: dict[str, CoverageElement] | None = None,
                   kind: ElementKind | None = None) -> list[CoverageRow]:
    """One row per architecture level plus an ``Overall`` row."""
    if universe_map is None:
        universe_map = universe()
    covered = cov.covered if isinstance(cov, CoverageSet) else frozenset(cov)
    missing = covered - universe_map.keys()
    if missing:
        raise ValueError(f"covered set is not a subset of the universe: {sorted(missing)[:5]}")
    elements = [e for e in universe_map.values() if kind is None or e.kind is kind]
    rows = []
    for level in ArchLevel:
        ids = {e.id for e in elements if e.component is level}
        hit = len(ids & covered)
        rows.append(CoverageRow(level.value, hit, len(ids), _percent(hit, len(ids))))
    all_ids = {e.id for e in elements}
    hit = len(all_ids & covered)
    rows.append(CoverageRow("Overall", hit, len(all_ids), _percent(hit, len(all_ids))))
    return rows


class TooManySets(ValueError):
    pass


def overlap(sets: Sequence[CoverageSet | Iterable]) -> dict[tuple[int, ...], int]:
    """Count elements in every nonempty Venn region of two or three sets.

    Keys are the sorted indices of the sets a region belongs to, so for two
    sets the keys are ``(0,)``, ``(1,)`` and ``(0, 1)``.
    """
    if len(sets) > 3:
        raise TooManySets(f"overlap supports at most 3 sets, got {len(sets)}")
    if len(sets) < 2:
        raise ValueError("overlap needs at least 2 sets")
    members = [s.covered if isinstance(s, CoverageSet) else frozenset(s) for s in sets]
    n = len(members)
    regions = {}
    for r in range(1, n + 1):
        for combo in combinations(range(n), r):
            regions[combo] = 0
    for element in frozenset().union(*members):
        key = tuple(i for i in range(n) if element in members[i])
        regions[key] += 1
    return regions


def region_name(key: tuple[int, ...], labels: Sequence[str]) -> str:
    inside = [labels[i] for i in key]
    if len(inside) == 1:
        return f"only {inside[0]}"
    return " & ".join(inside)


def format_table(rows: list[CoverageRow], title: str = "") -> str:
    width = max(len(r.component) for r in rows)
    lines = [title] if title else []
    lines.append(f"{'component':<{width}}  {'covered':>7}  {'total':>5}  {'percent':>8}")
    for r in rows:
        lines.append(f"{r.component:<{width}}  {r.covered:>7}  {r.total:>5}  {r.percent:>7.2f}%")
    return "\n".join(lines)


def export_lines(cov: CoverageSet, universe_map: dict[str, CoverageElement] | None = None) -> str:
    """One ``element_id<TAB>component`` line per covered element, sorted."""
    if universe_map is None:
        universe_map = universe()
    return "".join(f"{eid}\t{universe_map[eid].component.value}\n" for eid in sorted(cov.covered))
