"""Bug-taxonomy bookkeeping and the statistics used to analyse it."""

from __future__ import annotations

import csv
import enum
import math
import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Hashable, Iterable, Sequence

from .coverage import ArchLevel


class _Labelled(enum.Enum):
    @classmethod
    def parse(cls, text: str):
        key = re.sub(r"[\s_\-]", "", text).lower()
        for member in cls:
            if member.name.lower() == key or re.sub(r"[\s_\-]", "", member.value).lower() == key:
                return member
        raise ValueError(f"unknown {cls.__name__} {text!r}")


class RootCause(_Labelled):
    IncorrectAlgorithmImpl = "Incorrect Algorithm Implementation"
    TypeIssue = "Type Issue"
    Misconfiguration = "Misconfiguration"
    TensorShapeMisalignment = "Tensor Shape Misalignment"
    ApiMisuse = "API Misuse"
    EnvironmentIncompatibility = "Environment Incompatibility"
    IncorrectExceptionHandling = "Incorrect Exception Handling"
    IncorrectAssignment = "Incorrect Assignment"
    NumericalIssue = "Numerical Issue"
    Others = "Others"
    ApiIncompatibility = "API Incompatibility"
    ConcurrencyIssue = "Concurrency Issue"
    DependentModuleIssue = "Dependent Module Issue"


class SubCause(_Labelled):
    DLRelated = "DL-related"
    DLUnrelated = "DL-unrelated"
    TensorTypeIssue = "Tensor Type Issue"
    ConventionalTypeIssue = "Conventional Type Issue"
    ConditionMissingOrRedundancy = "Condition Missing or Redundancy"
    ApiMissingOrRedundancy = "API Missing or Redundancy"
    WrongApiArgs = "Wrong API Args"
    WrongApiName = "Wrong API Name"
    WrongApiReceiver = "Wrong API Receiver"
    MissingException = "Missing Exception"
    SpuriousException = "Spurious Exception"
    WrongExceptionMessage = "Wrong Exception Message"
    ExternalIncompatibility = "External Incompatibility"
    InternalIncompatibility = "Internal Incompatibility"


SUB_CAUSES: dict[RootCause, tuple[SubCause, ...]] = {
    RootCause.IncorrectAlgorithmImpl: (SubCause.DLRelated, SubCause.DLUnrelated),
    RootCause.TypeIssue: (SubCause.TensorTypeIssue, SubCause.ConventionalTypeIssue),
    RootCause.ApiMisuse: (SubCause.ConditionMissingOrRedundancy, SubCause.ApiMissingOrRedundancy,
                          SubCause.WrongApiArgs, SubCause.WrongApiName, SubCause.WrongApiReceiver),
    RootCause.IncorrectExceptionHandling: (SubCause.MissingException, SubCause.SpuriousException,
                                           SubCause.WrongExceptionMessage),
    RootCause.ApiIncompatibility: (SubCause.ExternalIncompatibility, SubCause.InternalIncompatibility),
}


class Symptom(_Labelled):
    Crash = "Crash"
    IncorrectFunctionality = "Incorrect Functionality"
    BuildFailure = "Build Failure"
    PoorPerformance = "Poor Performance"
    Hang = "Hang"
    Unreported = "Unreported"


class Stage(_Labelled):
    Installation = "Installation"
    Preprocessing = "Preprocessing"
    Training = "Training"
    Deployment = "Deployment"
    UtilityOperation = "Utility Operation"


@dataclass(frozen=True)
class TaxonomyRecord:
    bug_id: str
    framework: str
    root_cause: RootCause
    symptom: Symptom
    stage: Stage
    level: ArchLevel | None = None
    sub_cause: SubCause | None = None

    def __post_init__(self):
        if self.sub_cause is not None and self.sub_cause not in SUB_CAUSES.get(self.root_cause, ()):
            raise ValueError(f"{self.sub_cause.value!r} is not a sub-category of {self.root_cause.value!r}")


# --- bug-fixing PR filter ----------------------------------------------------

BUG_KEYWORDS = ("fix", "defect", "error", "bug", "issue", "mistake", "correct", "fault", "flaw")
_KEYWORD_RE = re.compile(r"\b(?:" + "|".join(BUG_KEYWORDS) + r")", re.IGNORECASE)


def is_bug_fixing_title(title: str, tags: Iterable[str] = ()) -> bool:
    """True when the title or a tag contains a bug keyword at the start of a word."""
    text = " ".join([title, *tags])
    return _KEYWORD_RE.search(text) is not None


# --- agreement and correlation -----------------------------------------------------

class LengthMismatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class DegenerateInput(ValueError):
    pass


@dataclass(frozen=True)
class KappaResult:
    kappa: float
    observed: Fraction
    expected: Fraction
    degenerate: bool


def kappa_details(labels_a: Sequence[Hashable], labels_b: Sequence[Hashable]) -> KappaResult:
    if len(labels_a) != len(labels_b):
        raise LengthMismatch(f"{len(labels_a)} vs {len(labels_b)} labels")
    n = len(labels_a)
    if n == 0:
        raise EmptyInput("no labels")
    agree = sum(1 for a, b in zip(labels_a, labels_b) if a == b)
    p_o = Fraction(agree, n)
    count_a: dict = {}
    count_b: dict = {}
    for a, b in zip(labels_a, labels_b):
        count_a[a] = count_a.get(a, 0) + 1
        count_b[b] = count_b.get(b, 0) + 1
    p_e = sum((Fraction(c, n) * Fraction(count_b.get(label, 0), n) for label, c in count_a.items()), Fraction(0))
    if p_e == 1:
        # every label constant on both sides: perfect agreement is 1, otherwise report 0
        return KappaResult(1.0 if p_o == 1 else 0.0, p_o, p_e, degenerate=p_o != 1)
    return KappaResult(float((p_o - p_e) / (1 - p_e)), p_o, p_e, degenerate=False)


def cohen_kappa(labels_a: Sequence[Hashable], labels_b: Sequence[Hashable]) -> float:
    """Cohen's kappa, computed in exact rational arithmetic and rounded once."""
    return kappa_details(labels_a, labels_b).kappa


def mid_ranks(xs: Sequence[float]) -> list[Fraction]:
    """1-based ranks with ties replaced by the average of the tied positions."""
    order = sorted(range(len(xs)), key=lambda i: xs[i])
    ranks: list[Fraction] = [Fraction(0)] * len(xs)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and xs[order[j + 1]] == xs[order[i]]:
            j += 1
        avg = Fraction(i + j + 2, 2)
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman's rho: Pearson correlation of mid-ranks."""
    if len(xs) != len(ys):
        raise LengthMismatch(f"{len(xs)} vs {len(ys)} values")
    if len(xs) < 2:
        raise DegenerateInput("need at least two pairs")
    if any(isinstance(v, float) and math.isnan(v) for v in [*xs, *ys]):
        raise DegenerateInput("NaN values have no rank")
    rx, ry = mid_ranks(xs), mid_ranks(ys)
    n = len(xs)
    mx, my = sum(rx) / n, sum(ry) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    sxx = sum((a - mx) ** 2 for a in rx)
    syy = sum((b - my) ** 2 for b in ry)
    if sxx == 0 or syy == 0:
        raise DegenerateInput("constant input has no rank correlation")
    rho = float(sxy) / math.sqrt(float(sxx * syy))
    return max(-1.0, min(1.0, rho))


class Band(enum.Enum):
    VeryStrong = "very strong"
    Strong = "strong"
    Moderate = "moderate"
    WeakOrNone = "weak or none"


def correlation_band(rho: float) -> Band:
    """Lower-inclusive bands: [0.8,1], [0.6,0.8), [0.4,0.6), and everything below."""
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"correlation {rho} outside [-1, 1]")
    if rho >= 0.8:
        return Band.VeryStrong
    if rho >= 0.6:
        return Band.Strong
    if rho >= 0.4:
        return Band.Moderate
    return Band.WeakOrNone


def describe_correlation(rho: float) -> str:
    band = correlation_band(rho)
    return band.value + (" (negative)" if rho < 0 else "")


# --- distributions ---------------------------------------------------------------

AXES = {
    "symptom": Symptom,
    "stage": Stage,
    "root_cause": RootCause,
    "level": ArchLevel,
    "sub_cause": SubCause,
}


def _axis_value(record: TaxonomyRecord, axis: str):
    if axis == "framework":
        return record.framework
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}; choose from {sorted([*AXES, 'framework'])}")
    return getattr(record, axis)


def _axis_order(axis: str, present: Iterable) -> list:
    if axis == "framework":
        return sorted(set(present))
    return [m for m in AXES[axis] if m in set(present)]


def percent(count: int, total: int) -> float:
    value = Decimal(count * 100) / Decimal(total)
    return float(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class DistributionRow:
    label: str
    count: int
    percent: float


def _label(v) -> str:
    return v.value if isinstance(v, enum.Enum) else str(v)


def distribution(records: Sequence[TaxonomyRecord], axis: str) -> list[DistributionRow]:
    """Counts and 2-decimal percentages per label, largest first.

    Records with no value on the axis (e.g. no level) are left out of both
    the counts and the total.
    """
    values = [_axis_value(r, axis) for r in records]
    values = [v for v in values if v is not None]
    if not values:
        raise EmptyInput("no records with a value on this axis")
    order = _axis_order(axis, values)
    counts = {v: 0 for v in order}
    for v in values:
        counts[v] += 1
    ranked = sorted(order, key=lambda v: (-counts[v], order.index(v)))
    total = len(values)
    return [DistributionRow(_label(v), counts[v], percent(counts[v], total)) for v in ranked]


@dataclass(frozen=True)
class Crosstab:
    rows: tuple[str, ...]
    cols: tuple[str, ...]
    cells: tuple[tuple[int, ...], ...]

    @property
    def row_totals(self) -> tuple[int, ...]:
        return tuple(sum(r) for r in self.cells)

    @property
    def col_totals(self) -> tuple[int, ...]:
        return tuple(sum(c) for c in zip(*self.cells)) if self.cells else ()

    @property
    def total(self) -> int:
        return sum(self.row_totals)

    def cell(self, row, col) -> int:
        return self.cells[self.rows.index(_label(row))][self.cols.index(_label(col))]


def crosstab(records: Sequence[TaxonomyRecord], axis1: str, axis2: str) -> Crosstab:
    pairs = [(_axis_value(r, axis1), _axis_value(r, axis2)) for r in records]
    pairs = [(a, b) for a, b in pairs if a is not None and b is not None]
    if not pairs:
        raise EmptyInput("no records with values on both axes")
    rows = _axis_order(axis1, [a for a, _ in pairs])
    cols = _axis_order(axis2, [b for _, b in pairs])
    grid = [[0] * len(cols) for _ in rows]
    for a, b in pairs:
        grid[rows.index(a)][cols.index(b)] += 1
    return Crosstab(tuple(_label(r) for r in rows), tuple(_label(c) for c in cols),
                    tuple(tuple(r) for r in grid))


# --- record I/O ------------------------------------------------------------------

RECORD_FIELDS = ("bug_id", "framework", "root_cause", "symptom", "stage", "level")


def load_records(path: str | Path) -> list[TaxonomyRecord]:
    """Read a delimited table with a header row.  Unknown labels are errors."""
    text = Path(path).read_text(encoding="utf-8")
    dialect = csv.Sniffer().sniff(text.splitlines()[0], delimiters=",\t;")
    reader = csv.DictReader(text.splitlines(), dialect=dialect)
    missing = [f for f in RECORD_FIELDS if f not in (reader.fieldnames or [])]
    if missing:
        raise ValueError(f"record table is missing columns {missing}")
    out = []
    seen = set()
    for lineno, row in enumerate(reader, 2):
        try:
            bug_id = row["bug_id"].strip()
            if bug_id in seen:
                raise ValueError(f"duplicate bug id {bug_id!r}")
            seen.add(bug_id)
            level = row["level"].strip()
            sub = (row.get("sub_cause") or "").strip()
            out.append(TaxonomyRecord(
                bug_id=bug_id,
                framework=row["framework"].strip(),
                root_cause=RootCause.parse(row["root_cause"]),
                symptom=Symptom.parse(row["symptom"]),
                stage=Stage.parse(row["stage"]),
                level=ArchLevel.parse(level) if level else None,
                sub_cause=SubCause.parse(sub) if sub else None,
            ))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


def dump_records(records: Sequence[TaxonomyRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*RECORD_FIELDS, "sub_cause"])
        for r in records:
            w.writerow([r.bug_id, r.framework, r.root_cause.name, r.symptom.name, r.stage.name,
                        r.level.value if r.level else "", r.sub_cause.name if r.sub_cause else ""])


def study_records_path() -> Path:
    return Path(__file__).parent / "data" / "study_records.csv"


def format_distribution(rows: Sequence[DistributionRow]) -> str:
    width = max(len(r.label) for r in rows)
    return "\n".join(f"{r.label:<{width}}  {r.count:>5}  {r.percent:>6.2f}%" for r in rows)


def format_crosstab(tab: Crosstab) -> str:
    head = [""] + list(tab.cols) + ["Total"]
    body = [[r] + [str(c) for c in cells] + [str(t)] for r, cells, t in zip(tab.rows, tab.cells, tab.row_totals)]
    body.append(["Total"] + [str(c) for c in tab.col_totals] + [str(tab.total)])
    widths = [max(len(row[i]) for row in [head, *body]) for i in range(len(head))]
    lines = []
    for row in [head, *body]:
        lines.append("  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths))))
    return "\n".join(lines)
