"""Cross-version execution, outcome comparison, and blame voting."""

from __future__ import annotations

import enum
import hashlib
import math
import os
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .analytics import Symptom
from .coverage import ArchLevel, ElementKind, declare, probe
from .dsl import Let, Observe, Program, TypedProgram, validate
from .tensor import OpKind, StructureKind, TensorError, TensorValue, Trap, element_count
from .versions import EngineVersion, HangSignal, OpContext, VersionRegistry

DEFAULT_STEP_BUDGET = 10_000
STEP_BUDGET_ENV = "DELTAFUZZ_STEP_BUDGET"
CRASH_PREFIX = 40


def default_step_budget() -> int:
    raw = os.environ.get(STEP_BUDGET_ENV)
    if not raw:
        return DEFAULT_STEP_BUDGET
    value = int(raw)
    if value <= 0:
        raise ValueError(f"{STEP_BUDGET_ENV} must be positive, got {value}")
    return value


# --- outcomes ----------------------------------------------------------------

@dataclass(frozen=True)
class Value:
    values: Mapping[str, TensorValue]
    faults: tuple[str, ...] = ()


@dataclass(frozen=True)
class Crash:
    message: str
    stmt: int | None
    faults: tuple[str, ...] = ()


@dataclass(frozen=True)
class Hang:
    stmt: int | None = None
    faults: tuple[str, ...] = ()


@dataclass(frozen=True)
class StaticReject:
    error: str
    stmt: int | None = None
    faults: tuple[str, ...] = ()


Outcome = Value | Crash | Hang | StaticReject


# --- interpreter ---------------------------------------------------------------

declare("graph.exec", ElementKind.FUNCTION, ArchLevel.GraphLevelImpl)
declare("graph.exec.observe", ElementKind.LINE, ArchLevel.GraphLevelImpl)
declare("graph.exec.densify_input", ElementKind.BRANCH, ArchLevel.GraphLevelImpl)
declare("graph.exec.budget_exhausted", ElementKind.BRANCH, ArchLevel.GraphLevelImpl)
declare("graph.exec.runtime_error", ElementKind.BRANCH, ArchLevel.GraphLevelImpl)
declare("graph.exec.reject", ElementKind.BRANCH, ArchLevel.GraphLevelImpl)
for _k in OpKind:
    declare(f"api.{_k.value}", ElementKind.FUNCTION, ArchLevel.UserLevelAPI)
declare("api.params", ElementKind.BRANCH, ArchLevel.UserLevelAPI)


def _typed(program: Program | TypedProgram) -> TypedProgram | StaticReject:
    if isinstance(program, TypedProgram):
        return program
    try:
        return validate(program)
    except TensorError as exc:
        probe("graph.exec.reject")
        return StaticReject(f"{type(exc).__name__}: {exc}", exc.stmt_index)


def execute(program: Program | TypedProgram, version: EngineVersion, step_budget: int | None = None,
            trace: list | None = None) -> Outcome:
    """Run a program on one version.

    Validation runs first; a program that fails it is a ``StaticReject``
    without executing anything.  Every op costs ``max(1, output size)``
    steps; exceeding ``step_budget`` gives ``Hang``.  When ``trace`` is a
    list, the ``OpContext`` of every op attempted is appended to it.
    """
    typed = _typed(program)
    if isinstance(typed, StaticReject):
        return typed
    budget = default_step_budget() if step_budget is None else step_budget
    probe("graph.exec")
    env: dict[str, TensorValue] = {}
    observed: dict[str, TensorValue] = {}
    fired: list[str] = []
    steps = 0
    for i, (stmt, info) in enumerate(zip(typed.program.statements, typed.stmt_types)):
        if isinstance(stmt, Let):
            probe(f"api.literal.{stmt.value.kind.value}")
            env[stmt.name] = stmt.value
            continue
        if isinstance(stmt, Observe):
            probe("graph.exec.observe")
            observed[stmt.name] = env[stmt.name]
            continue
        probe(f"api.{stmt.kind.value}")
        if stmt.params:
            probe("api.params")
        inputs = [env[a] for a in stmt.args]
        if any(t.kind is not StructureKind.DENSE for t in inputs):
            probe("graph.exec.densify_input")
        steps += max(1, element_count(info.shape))
        if steps > budget:
            probe("graph.exec.budget_exhausted")
            return Hang(i, tuple(fired))
        params = stmt.param_dict
        ctx = OpContext.of(stmt.kind, inputs, params)
        if trace is not None:
            trace.append(ctx)
        try:
            value, fault = version.apply(stmt.kind, inputs, params, ctx)
        except HangSignal as sig:
            probe("graph.exec.budget_exhausted")
            return Hang(i, tuple(fired) + ((sig.fault_id,) if sig.fault_id else ()))
        except Trap as exc:
            if exc.fault_id is not None:
                return Crash(exc.message, i, tuple(fired) + (exc.fault_id,))
            probe("graph.exec.runtime_error")
            return StaticReject(f"{type(exc).__name__}: {exc}", i, tuple(fired))
        except TensorError as exc:
            # a fault upstream changed a shape or dtype the static pass relied on
            probe("graph.exec.runtime_error")
            return StaticReject(f"{type(exc).__name__}: {exc}", i, tuple(fired))
        if fault is not None:
            fired.append(fault.id)
        env[stmt.name] = value
    return Value(observed, tuple(fired))


_BASE = EngineVersion("__base__")


def run_all(program: Program | TypedProgram, registry: VersionRegistry,
            step_budget: int | None = None) -> dict[str, Outcome]:
    """Outcome per registered version, in registration order.

    The faultless engine runs once while recording every op it attempts.
    Versions none of whose faults match any recorded op cannot behave
    differently, so they share that outcome and only the rest re-execute.
    """
    if len(registry) < 2:
        raise ValueError("differential testing needs at least 2 versions")
    typed = _typed(program)
    if isinstance(typed, StaticReject):
        return {vid: typed for vid in registry.ids}
    trace: list[OpContext] = []
    base = execute(typed, _BASE, step_budget, trace)
    out: dict[str, Outcome] = {}
    for version in registry:
        if version.faults and any(version.fault_for(ctx) is not None for ctx in trace):
            out[version.id] = execute(typed, version, step_budget)
        else:
            out[version.id] = base
    return out


def run_all_naive(program: Program | TypedProgram, registry: VersionRegistry,
                  step_budget: int | None = None) -> dict[str, Outcome]:
    """Reference implementation of ``run_all``: every version runs in full."""
    if len(registry) < 2:
        raise ValueError("differential testing needs at least 2 versions")
    return {v.id: execute(program, v, step_budget) for v in registry}


# --- comparison ----------------------------------------------------------------

@dataclass(frozen=True)
class OracleConfig:
    abs_tol: float = 1e-6
    rel_tol: float = 1e-5
    nan_equal: bool = True

    def __post_init__(self):
        if not (self.abs_tol >= 0 and self.rel_tol >= 0):
            raise ValueError("tolerances must be non-negative")


class VerdictKind(enum.Enum):
    CONSISTENT = "Consistent"
    DIVERGENCE = "Divergence"
    CRASH_SOME = "CrashSome"
    HANG_SOME = "HangSome"
    ALL_REJECT = "AllReject"


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    classes: tuple[tuple[str, ...], ...]
    digests: dict[str, str] = field(default_factory=dict)
    max_abs_diff: float = 0.0
    max_rel_diff: float = 0.0
    crashing: tuple[str, ...] = ()
    hanging: tuple[str, ...] = ()

    @property
    def is_bug(self) -> bool:
        return self.kind not in (VerdictKind.CONSISTENT, VerdictKind.ALL_REJECT)


def _tensor_diff(a: TensorValue, b: TensorValue, cfg: OracleConfig) -> tuple[bool, float, float]:
    """(equal under tolerance, max abs diff, max rel diff) for one observed tensor."""
    if a.dtype is not b.dtype or a.shape != b.shape:
        return False, math.inf, math.inf
    if a.data.tobytes() == b.data.tobytes() and (cfg.nan_equal or not a.dtype.is_float
                                                   or not np.isnan(a.data).any()):
        return True, 0.0, 0.0
    if not a.dtype.is_float:
        # integers and bools compare exactly
        x, y = a.data.astype(object), b.data.astype(object)
        diffs = [abs(int(p) - int(q)) for p, q in zip(x, y)]
        rels = [d / max(abs(int(p)), abs(int(q))) if d else 0.0 for d, p, q in zip(diffs, x, y)]
        return max(diffs) == 0, float(max(diffs)), float(max(rels))
    x = a.data.astype(np.float64)
    y = b.data.astype(np.float64)
    nx, ny = np.isnan(x), np.isnan(y)
    with np.errstate(all="ignore"):
        same = (x == y) | (nx & ny & cfg.nan_equal)
        absd = np.where(same, 0.0, np.abs(x - y))
        absd = np.where(np.isnan(absd), math.inf, absd)
        scale = np.maximum(np.abs(x), np.abs(y))
        ok = same | (absd <= cfg.abs_tol + cfg.rel_tol * scale)
        reld = np.where(absd == 0, 0.0, absd / scale)
        reld = np.where(np.isnan(reld), math.inf, reld)
    return bool(ok.all()), float(absd.max(initial=0.0)), float(reld.max(initial=0.0))


def _value_diff(a: Value, b: Value, cfg: OracleConfig) -> tuple[bool, float, float]:
    if a.values.keys() != b.values.keys():
        return False, math.inf, math.inf
    eq, ma, mr = True, 0.0, 0.0
    for name in a.values:
        e, da, dr = _tensor_diff(a.values[name], b.values[name], cfg)
        eq, ma, mr = eq and e, max(ma, da), max(mr, dr)
    return eq, ma, mr


def outcomes_equal(a: Outcome, b: Outcome, cfg: OracleConfig) -> bool:
    if isinstance(a, Value) and isinstance(b, Value):
        return _value_diff(a, b, cfg)[0]
    if isinstance(a, Crash) and isinstance(b, Crash):
        return a.message[:CRASH_PREFIX] == b.message[:CRASH_PREFIX]
    return type(a) is type(b)


def digest(outcome: Outcome, cfg: OracleConfig = OracleConfig()) -> str:
    """Hash of an outcome, with float payloads snapped to the ``abs_tol`` grid."""
    h = hashlib.sha256()
    h.update(type(outcome).__name__.encode())
    if isinstance(outcome, Value):
        for name in sorted(outcome.values):
            t = outcome.values[name]
            h.update(f"|{name}:{t.dtype.value}:{t.shape}|".encode())
            if t.dtype.is_float and cfg.abs_tol > 0:
                x = t.data.astype(np.float64)
                with np.errstate(all="ignore"):
                    snapped = np.where(np.isfinite(x), np.round(x / cfg.abs_tol), x) + 0.0
                if cfg.nan_equal:
                    snapped = np.where(np.isnan(snapped), np.nan, snapped)
                h.update(snapped.tobytes())
            else:
                h.update(t.data.tobytes())
    elif isinstance(outcome, Crash):
        h.update(outcome.message[:CRASH_PREFIX].encode())
    return h.hexdigest()[:16]


def compare(outcomes: Mapping[str, Outcome], cfg: OracleConfig = OracleConfig()) -> Verdict:
    if len(outcomes) < 2:
        raise ValueError("compare needs at least 2 outcomes")
    ids = list(outcomes)
    n = len(ids)
    # union-find over the pairwise equality graph
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    max_abs = max_rel = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            a, b = outcomes[ids[i]], outcomes[ids[j]]
            if isinstance(a, Value) and isinstance(b, Value):
                eq, da, dr = _value_diff(a, b, cfg)
                max_abs, max_rel = max(max_abs, da), max(max_rel, dr)
            else:
                eq = outcomes_equal(a, b, cfg)
            if eq:
                parent[find(i)] = find(j)
    groups: dict[int, list[str]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(ids[i])
    classes = tuple(sorted((tuple(g) for g in groups.values()), key=lambda g: ids.index(g[0])))

    crashing = tuple(v for v in ids if isinstance(outcomes[v], Crash))
    hanging = tuple(v for v in ids if isinstance(outcomes[v], Hang))
    if crashing:
        kind = VerdictKind.CRASH_SOME
    elif hanging:
        kind = VerdictKind.HANG_SOME
    elif all(isinstance(o, StaticReject) for o in outcomes.values()):
        kind = VerdictKind.ALL_REJECT
    elif len(classes) == 1:
        kind = VerdictKind.CONSISTENT
    else:
        kind = VerdictKind.DIVERGENCE
    digests = {v: digest(outcomes[v], cfg) for v in ids} if kind is not VerdictKind.CONSISTENT else {}
    return Verdict(kind, classes, digests, max_abs, max_rel, crashing, hanging)


# --- voting and triage ---------------------------------------------------------

class Resolution(enum.Enum):
    MAJORITY = "Majority"
    UNRESOLVED = "Unresolved"


@dataclass(frozen=True)
class BlameSet:
    blamed: tuple[str, ...]
    resolution: Resolution


def vote(verdict: Verdict, outcomes: Mapping[str, Outcome]) -> BlameSet:
    """Blame the versions outside a strict-majority agreement class.

    A majority class made of crashes or hangs is itself to blame, so a
    failure shared by every version blames all of them.  Without a strict
    majority the crashing and hanging versions are blamed, unresolved.
    """
    if verdict.kind is VerdictKind.CONSISTENT:
        raise ValueError("nothing to vote on for a consistent verdict")
    ids = list(outcomes)
    failing = set(verdict.crashing) | set(verdict.hanging)
    largest = max(verdict.classes, key=len)
    if 2 * len(largest) > len(ids):
        if isinstance(outcomes[largest[0]], (Crash, Hang)):
            blamed = set(largest) | failing
        else:
            blamed = set(ids) - set(largest)
        return BlameSet(tuple(v for v in ids if v in blamed), Resolution.MAJORITY)
    return BlameSet(tuple(v for v in ids if v in failing), Resolution.UNRESOLVED)


_SYMPTOM = {
    VerdictKind.CRASH_SOME: Symptom.Crash,
    VerdictKind.DIVERGENCE: Symptom.IncorrectFunctionality,
    VerdictKind.HANG_SOME: Symptom.Hang,
    VerdictKind.ALL_REJECT: Symptom.BuildFailure,
    VerdictKind.CONSISTENT: None,
}


def classify_symptom(verdict: Verdict) -> Symptom | None:
    return _SYMPTOM[verdict.kind]


@dataclass(frozen=True)
class ClusterKey:
    blamed: tuple[str, ...]
    symptom: str
    signature: str
    faults: tuple[str, ...]

    def to_json(self) -> list:
        return [list(self.blamed), self.symptom, self.signature, list(self.faults)]


def _diverging_names(outcomes: Mapping[str, Outcome], cfg: OracleConfig) -> list[str]:
    values = [o for o in outcomes.values() if isinstance(o, Value)]
    names = sorted(set().union(*(o.values.keys() for o in values))) if values else []
    out = []
    for name in names:
        ts = [o.values.get(name) for o in values]
        if any(t is None for t in ts) or not all(_tensor_diff(ts[0], t, cfg)[0] for t in ts[1:]):
            out.append(name)
    return out


def cluster_key(verdict: Verdict, blame: BlameSet, outcomes: Mapping[str, Outcome],
                cfg: OracleConfig = OracleConfig()) -> ClusterKey:
    """Deduplication key for a bug verdict.

    When the engine reports which injected faults fired, those ids identify
    the bug and the signature is only the crash message prefix (if any).
    Otherwise the set of diverging observed names stands in.
    """
    symptom = classify_symptom(verdict)
    faults = tuple(sorted({f for o in outcomes.values() for f in o.faults}))
    if verdict.kind is VerdictKind.CRASH_SOME:
        msgs = sorted({outcomes[v].message[:CRASH_PREFIX] for v in verdict.crashing})
        signature = " | ".join(msgs)
    elif faults:
        signature = ""
    elif verdict.kind is VerdictKind.DIVERGENCE:
        signature = ",".join(_diverging_names(outcomes, cfg))
    else:
        signature = ""
    return ClusterKey(blame.blamed, symptom.name if symptom else "None", signature, faults)


def outcome_to_json(outcome: Outcome) -> dict:
    if isinstance(outcome, Value):
        return {"kind": "Value", "faults": list(outcome.faults),
                "values": {k: {"dtype": t.dtype.value, "shape": list(t.shape)} for k, t in outcome.values.items()}}
    if isinstance(outcome, Crash):
        return {"kind": "Crash", "message": outcome.message, "stmt": outcome.stmt, "faults": list(outcome.faults)}
    if isinstance(outcome, Hang):
        return {"kind": "Hang", "stmt": outcome.stmt, "faults": list(outcome.faults)}
    return {"kind": "StaticReject", "error": outcome.error, "stmt": outcome.stmt}


def verdict_to_json(verdict: Verdict) -> dict:
    return {
        "kind": verdict.kind.value,
        "classes": [list(c) for c in verdict.classes],
        "digests": dict(verdict.digests),
        "max_abs_diff": _num(verdict.max_abs_diff),
        "max_rel_diff": _num(verdict.max_rel_diff),
        "crashing": list(verdict.crashing),
        "hanging": list(verdict.hanging),
    }


def _num(x: float):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf") if not math.isnan(x) else "nan"


def is_statically_valid(program: Program) -> bool:
    try:
        validate(program)
    except TensorError:
        return False
    return True


__all__ = [
    "Value", "Crash", "Hang", "StaticReject", "Outcome", "execute", "run_all", "run_all_naive",
    "OracleConfig", "VerdictKind", "Verdict", "compare", "outcomes_equal", "digest", "Resolution",
    "BlameSet", "vote", "classify_symptom", "ClusterKey", "cluster_key", "default_step_budget",
    "outcome_to_json", "verdict_to_json", "is_statically_valid",
]
