"""Engine versions: the base engine plus injected faults.

A fault manifest is a JSON-lines file.  Blank lines and lines starting with
``#`` are ignored.  An optional header record fixes the version order::

    {"versions": ["v2.5.0", "v2.6.0", "v2.7.0", "v2.8.0"]}

Every other record is one fault::

    {"id": "F01", "versions": ["v2.8.0"], "component": "OperationImpl",
     "trigger": {"op": "adadelta_update", "input_dtypes": [null, "f16"]},
     "effect": {"kind": "crash", "message": "Aborted (core dumped)"},
     "doc": "free text"}

``versions`` may also be given as a single ``"version"`` string or ``"*"``
for every declared version.  Trigger keys (all optional, all must hold):

``op``            op name or list of names
``input_dtypes``  per-input dtype names, ``null`` meaning any
``any_dtype``     some input has this dtype
``any_structure`` some input is stored as dense/sparse/ragged
``input_rank``    some input has this rank
``params``        ``{name: {"eq"|"ne"|"lt"|"le"|"gt"|"ge": value}}`` or
                  ``{name: {"isnan": true}}``

Effects: ``{"kind": "perturb", "scale": 1.0, "offset": 0.0}``,
``{"kind": "crash", "message": ...}``, ``{"kind": "hang"}`` and
``{"kind": "shape_skew", "dim": 0, "delta": 1}``.
"""

from __future__ import annotations

import json
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .coverage import ArchLevel
from .tensor import DType, OpKind, StructureKind, TensorValue, Trap, evaluate


class DuplicateVersion(ValueError):
    pass


class UnknownVersion(KeyError):
    pass


class ManifestError(ValueError):
    pass


class HangSignal(Exception):
    """Raised when an op never finishes; the interpreter charges the whole budget."""

    def __init__(self, fault_id: str | None = None):
        super().__init__("step budget exhausted")
        self.fault_id = fault_id


_CMP = {"eq": operator.eq, "ne": operator.ne, "lt": operator.lt,
        "le": operator.le, "gt": operator.gt, "ge": operator.ge}


@dataclass(frozen=True)
class OpContext:
    kind: OpKind
    dtypes: tuple[DType, ...]
    shapes: tuple[tuple[int, ...], ...]
    structures: tuple[StructureKind, ...]
    params: dict

    @classmethod
    def of(cls, kind: OpKind, inputs: Sequence[TensorValue], params: dict) -> "OpContext":
        return cls(kind, tuple(t.dtype for t in inputs), tuple(t.shape for t in inputs),
                   tuple(t.kind for t in inputs), params)


@dataclass(frozen=True)
class Trigger:
    ops: frozenset | None = None
    input_dtypes: tuple | None = None
    any_dtype: DType | None = None
    any_structure: StructureKind | None = None
    input_rank: int | None = None
    params: tuple = ()

    def matches(self, ctx: OpContext) -> bool:
        if self.ops is not None and ctx.kind not in self.ops:
            return False
        if self.input_dtypes is not None:
            if len(self.input_dtypes) != len(ctx.dtypes):
                return False
            for want, got in zip(self.input_dtypes, ctx.dtypes):
                if want is not None and want is not got:
                    return False
        if self.any_dtype is not None and self.any_dtype not in ctx.dtypes:
            return False
        if self.any_structure is not None and self.any_structure not in ctx.structures:
            return False
        if self.input_rank is not None and all(len(s) != self.input_rank for s in ctx.shapes):
            return False
        for name, test, ref in self.params:
            if name not in ctx.params:
                return False
            value = ctx.params[name]
            if test == "isnan":
                is_nan = isinstance(value, float) and math.isnan(value)
                if is_nan != bool(ref):
                    return False
            elif not isinstance(value, (int, float)) or not _CMP[test](value, ref):
                return False
        return True

    @classmethod
    def from_json(cls, obj: dict) -> "Trigger":
        unknown = set(obj) - {"op", "input_dtypes", "any_dtype", "any_structure", "input_rank", "params"}
        if unknown:
            raise ManifestError(f"unknown trigger fields {sorted(unknown)}")
        ops = obj.get("op")
        if isinstance(ops, str):
            ops = [ops]
        params = []
        for name, cond in (obj.get("params") or {}).items():
            for test, ref in cond.items():
                if test != "isnan" and test not in _CMP:
                    raise ManifestError(f"unknown parameter test {test!r}")
                params.append((name, test, ref))
        return cls(
            ops=frozenset(OpKind.parse(o) for o in ops) if ops is not None else None,
            input_dtypes=tuple(None if d is None else DType.parse(d) for d in obj["input_dtypes"])
            if "input_dtypes" in obj else None,
            any_dtype=DType.parse(obj["any_dtype"]) if "any_dtype" in obj else None,
            any_structure=StructureKind(obj["any_structure"]) if "any_structure" in obj else None,
            input_rank=obj.get("input_rank"),
            params=tuple(params),
        )

    def to_json(self) -> dict:
        out: dict[str, Any] = {}
        if self.ops is not None:
            out["op"] = sorted(k.value for k in self.ops)
        if self.input_dtypes is not None:
            out["input_dtypes"] = [None if d is None else d.value for d in self.input_dtypes]
        if self.any_dtype is not None:
            out["any_dtype"] = self.any_dtype.value
        if self.any_structure is not None:
            out["any_structure"] = self.any_structure.value
        if self.input_rank is not None:
            out["input_rank"] = self.input_rank
        if self.params:
            p: dict = {}
            for name, test, ref in self.params:
                p.setdefault(name, {})[test] = ref
            out["params"] = p
        return out


@dataclass(frozen=True)
class ValuePerturb:
    scale: float = 1.0
    offset: float = 0.0


@dataclass(frozen=True)
class CrashTrap:
    message: str


@dataclass(frozen=True)
class HangLoop:
    pass


@dataclass(frozen=True)
class ShapeSkew:
    dim: int
    delta: int


Effect = ValuePerturb | CrashTrap | HangLoop | ShapeSkew


def _effect_from_json(obj: dict) -> Effect:
    kind = obj.get("kind")
    if kind == "perturb":
        return ValuePerturb(float(obj.get("scale", 1.0)), float(obj.get("offset", 0.0)))
    if kind == "crash":
        return CrashTrap(str(obj["message"]))
    if kind == "hang":
        return HangLoop()
    if kind == "shape_skew":
        return ShapeSkew(int(obj["dim"]), int(obj["delta"]))
    raise ManifestError(f"unknown effect kind {kind!r}")


def _effect_to_json(effect: Effect) -> dict:
    if isinstance(effect, ValuePerturb):
        return {"kind": "perturb", "scale": effect.scale, "offset": effect.offset}
    if isinstance(effect, CrashTrap):
        return {"kind": "crash", "message": effect.message}
    if isinstance(effect, HangLoop):
        return {"kind": "hang"}
    return {"kind": "shape_skew", "dim": effect.dim, "delta": effect.delta}


@dataclass(frozen=True)
class Fault:
    id: str
    trigger: Trigger
    effect: Effect
    component: ArchLevel
    doc: str = ""


def apply_effect(effect: Effect, value: TensorValue, fault_id: str) -> TensorValue:
    if isinstance(effect, CrashTrap):
        raise Trap("FAULT", effect.message, fault_id=fault_id)
    if isinstance(effect, HangLoop):
        raise HangSignal(fault_id)
    if isinstance(effect, ValuePerturb):
        if value.dtype is DType.BOOL:
            return value
        with np.errstate(all="ignore"):
            raw = value.data.astype(np.float64) * effect.scale + effect.offset
            if value.dtype.is_float:
                data = raw.astype(value.dtype.np)
            else:
                bits = value.dtype.np.itemsize * 8
                data = np.array([_wrap(int(v), bits) if math.isfinite(v) else 0 for v in np.trunc(raw)],
                                dtype=value.dtype.np)
        return TensorValue(value.dtype, value.shape, data)
    # ShapeSkew: resize one extent, truncating or zero-padding the payload
    if not value.shape:
        return value
    dims = list(value.shape)
    d = effect.dim % len(dims)
    dims[d] = max(0, dims[d] + effect.delta)
    n = math.prod(dims)
    data = np.zeros(n, dtype=value.dtype.np)
    keep = min(n, value.size)
    data[:keep] = value.data[:keep]
    return TensorValue(value.dtype, dims, data)


def _wrap(v: int, bits: int) -> int:
    v &= (1 << bits) - 1
    return v - (1 << bits) if v >= 1 << (bits - 1) else v


@dataclass
class EngineVersion:
    id: str
    faults: list[Fault] = field(default_factory=list)

    def fault_for(self, ctx: OpContext) -> Fault | None:
        for fault in self.faults:
            if fault.trigger.matches(ctx):
                return fault
        return None

    def apply(self, kind: OpKind, inputs: Sequence[TensorValue], params: dict | None = None,
              ctx: OpContext | None = None) -> tuple[TensorValue, Fault | None]:
        """Evaluate one op on this version; returns the value and the fault that fired."""
        params = params or {}
        fault = None
        if self.faults:
            fault = self.fault_for(ctx or OpContext.of(kind, inputs, params))
        if fault is not None and isinstance(fault.effect, (CrashTrap, HangLoop)):
            apply_effect(fault.effect, None, fault.id)  # raises
        value = evaluate(kind, inputs, params)
        if fault is not None:
            value = apply_effect(fault.effect, value, fault.id)
        return value, fault


class VersionRegistry:
    """Ordered collection of engine versions keyed by id."""

    def __init__(self, versions: Iterable[EngineVersion] = ()):
        self._versions: dict[str, EngineVersion] = {}
        for v in versions:
            self.register(v)

    def register(self, version: EngineVersion) -> "VersionRegistry":
        if version.id in self._versions:
            raise DuplicateVersion(version.id)
        self._versions[version.id] = version
        return self

    def get(self, version_id: str) -> EngineVersion:
        try:
            return self._versions[version_id]
        except KeyError:
            raise UnknownVersion(version_id) from None

    def __iter__(self):
        return iter(self._versions.values())

    def __len__(self) -> int:
        return len(self._versions)

    def __contains__(self, version_id: str) -> bool:
        return version_id in self._versions

    @property
    def ids(self) -> list[str]:
        return list(self._versions)

    def eval_versioned(self, version_id: str, kind: OpKind, inputs: Sequence[TensorValue],
                       params: dict | None = None) -> TensorValue:
        """Evaluate one op on a version.  Crashes raise ``Trap``, hangs raise ``Hang``."""
        return self.get(version_id).apply(kind, inputs, params)[0]

    def faults(self) -> dict[str, Fault]:
        out = {}
        for v in self:
            for f in v.faults:
                out.setdefault(f.id, f)
        return out

    def fault_versions(self, fault_id: str) -> list[str]:
        return [v.id for v in self if any(f.id == fault_id for f in v.faults)]


@dataclass
class Manifest:
    versions: list[str]
    faults: list[tuple[Fault, list[str]]]

    def registry(self, select: int | Sequence[str] | None = None) -> VersionRegistry:
        if select is None:
            ids = list(self.versions)
        elif isinstance(select, int):
            if not 2 <= select <= len(self.versions):
                raise ManifestError(f"need between 2 and {len(self.versions)} versions, got {select}")
            ids = list(self.versions[:select])
        else:
            ids = list(select)
            unknown = [v for v in ids if v not in self.versions]
            if unknown:
                raise ManifestError(f"versions not declared in manifest: {unknown}")
        reg = VersionRegistry()
        for vid in ids:
            reg.register(EngineVersion(vid, [f for f, vs in self.faults if vid in vs]))
        return reg


def parse_manifest(text: str) -> Manifest:
    versions: list[str] = []
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {lineno}: {exc}") from None
        if "versions" in obj and "id" not in obj:
            versions = [str(v) for v in obj["versions"]]
            continue
        records.append((lineno, obj))
    faults = []
    seen = set()
    for lineno, obj in records:
        try:
            fid = str(obj["id"])
            if fid in seen:
                raise ManifestError(f"duplicate fault id {fid!r}")
            seen.add(fid)
            if "version" in obj:
                vs = [obj["version"]]
            else:
                vs = obj["versions"]
            if vs == "*" or vs == ["*"]:
                vs = list(versions)
            for v in vs:
                if v not in versions:
                    versions.append(v)
            fault = Fault(fid, Trigger.from_json(obj.get("trigger", {})), _effect_from_json(obj["effect"]),
                          ArchLevel.parse(obj["component"]), str(obj.get("doc", "")))
        except (KeyError, ValueError, TypeError) as exc:
            raise ManifestError(f"line {lineno}: {exc}") from None
        faults.append((fault, list(vs)))
    return Manifest(versions, faults)


def load_manifest(path: str | Path) -> Manifest:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def dump_manifest(manifest: Manifest) -> str:
    lines = [json.dumps({"versions": manifest.versions})]
    for fault, vs in manifest.faults:
        lines.append(json.dumps({
            "id": fault.id, "versions": vs, "component": fault.component.value,
            "trigger": fault.trigger.to_json(), "effect": _effect_to_json(fault.effect), "doc": fault.doc,
        }))
    return "\n".join(lines) + "\n"


def demo_manifest_path() -> Path:
    return Path(__file__).parent / "data" / "demo_faults.jsonl"


def demo_registry(select: int | Sequence[str] | None = None) -> VersionRegistry:
    return load_manifest(demo_manifest_path()).registry(select)
