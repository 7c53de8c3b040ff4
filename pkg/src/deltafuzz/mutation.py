"""Mutation operators over seed programs.

Five operators rewrite either a literal tensor or a numeric op parameter:
dtype change, reshape, storage-structure change, rotation, and special
parameter values.  ``applicable_sites`` enumerates every concrete rewrite a
program admits; ``pick_and_mutate`` draws one at random.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any

import numpy as np

from .dsl import Apply, Let, Program, TypedProgram, canonical_hash, validate
from .tensor import (MAX_RANK, OP_SPECS, DType, ParamType, StructureKind, TensorError, TensorValue, cast,
                     convert_structure, element_count)


class MutationOperator(enum.Enum):
    TensorType = "TensorType"
    TensorShape = "TensorShape"
    TensorStructure = "TensorStructure"
    TensorRotate = "TensorRotate"
    ParameterSpecial = "ParameterSpecial"


class SpecialKind(enum.Enum):
    Negate = "Negate"
    Zero = "Zero"
    NaN = "NaN"
    TypeMax = "TypeMax"
    TypeMin = "TypeMin"


ANGLES = tuple(range(30, 271, 30))


class SiteMismatch(ValueError):
    pass


class NoApplicableMutation(ValueError):
    pass


@dataclass(frozen=True)
class MutationSite:
    stmt: int
    operator: MutationOperator
    operand: Any
    param: str | None = None

    def describe(self) -> str:
        op = self.operand
        if isinstance(op, enum.Enum):
            op = op.value
        elif isinstance(op, tuple):
            op = "[" + ",".join(str(d) for d in op) + "]"
        where = f"{self.stmt}.{self.param}" if self.param else str(self.stmt)
        return f"{self.operator.value}@{where}:{op}"

    def to_json(self) -> dict:
        op = self.operand
        if isinstance(op, enum.Enum):
            op = op.value
        elif isinstance(op, tuple):
            op = list(op)
        out = {"stmt": self.stmt, "operator": self.operator.value, "operand": op}
        if self.param:
            out["param"] = self.param
        return out


@dataclass(frozen=True)
class Mutant:
    program: Program
    lineage: tuple[tuple[str, MutationSite], ...]
    statically_valid: bool
    typed: TypedProgram | None = None
    error: str | None = None

    @property
    def order(self) -> int:
        return len(self.lineage)


# --- enumeration -------------------------------------------------------------

@lru_cache(maxsize=None)
def factorizations(n: int, max_rank: int = MAX_RANK) -> tuple[tuple[int, ...], ...]:
    """Every ordered tuple of positive ints with product ``n`` and length 1..max_rank."""
    out = []

    def rec(rest: int, prefix: tuple[int, ...]):
        if prefix and rest == 1:
            out.append(prefix)
        if len(prefix) == max_rank:
            return
        for d in range(1, rest + 1):
            if rest % d == 0:
                rec(rest // d, prefix + (d,))

    if n >= 1:
        rec(n, ())
    return tuple(sorted(set(out), key=lambda s: (len(s), s)))


def _type_targets(value: TensorValue) -> list[DType]:
    finite = True
    if value.dtype.is_float:
        finite = bool(np.isfinite(value.data).all())
    return [d for d in DType if d is not value.dtype and (finite or not d.is_int)]


def _shape_targets(value: TensorValue) -> list[tuple[int, ...]]:
    n = element_count(value.shape)
    if n < 2:
        return []
    targets = [s for s in factorizations(n) if s != value.shape]
    if value.kind is StructureKind.RAGGED:
        targets = [s for s in targets if len(s) == 2]
    return targets


def _special_kinds(ptype: ParamType) -> list[SpecialKind]:
    if ptype is ParamType.FLOAT:
        return list(SpecialKind)
    return [k for k in SpecialKind if k is not SpecialKind.NaN]


def applicable_sites(p: Program | TypedProgram) -> list[MutationSite]:
    """All sites, in statement order then operator order."""
    program = p.program if isinstance(p, TypedProgram) else p
    sites: list[MutationSite] = []
    for i, stmt in enumerate(program.statements):
        if isinstance(stmt, Let):
            v = stmt.value
            sites += [MutationSite(i, MutationOperator.TensorType, d) for d in _type_targets(v)]
            sites += [MutationSite(i, MutationOperator.TensorShape, s) for s in _shape_targets(v)]
            if v.kind is StructureKind.DENSE:
                sites.append(MutationSite(i, MutationOperator.TensorStructure, StructureKind.SPARSE))
                if v.rank == 2:
                    sites.append(MutationSite(i, MutationOperator.TensorStructure, StructureKind.RAGGED))
            if v.rank in (2, 3):
                sites += [MutationSite(i, MutationOperator.TensorRotate, a) for a in ANGLES]
        elif isinstance(stmt, Apply):
            schema = dict(OP_SPECS[stmt.kind].params)
            for name, _ in stmt.params:
                ptype = schema.get(name)
                if ptype in (ParamType.INT, ParamType.FLOAT):
                    sites += [MutationSite(i, MutationOperator.ParameterSpecial, k, name) for k in _special_kinds(ptype)]
    return sites


# --- rotation ------------------------------------------------------------------

_S3 = math.sqrt(3) / 2
_TRIG = {  # exact cos/sin for multiples of 30 degrees
    0: (1.0, 0.0), 30: (_S3, 0.5), 60: (0.5, _S3), 90: (0.0, 1.0), 120: (-0.5, _S3), 150: (-_S3, 0.5),
    180: (-1.0, 0.0), 210: (-_S3, -0.5), 240: (-0.5, -_S3), 270: (0.0, -1.0), 300: (0.5, -_S3), 330: (_S3, -0.5),
}


def rotate(grid: np.ndarray, angle: int) -> np.ndarray:
    """Rotate the last two axes counterclockwise by ``angle`` degrees.

    Right angles are exact index permutations.  Other multiples of 30 keep
    the shape: each output cell reads the input cell nearest its
    back-rotated position about the centre, and zero when that falls
    outside.
    """
    angle %= 360
    if angle not in _TRIG:
        raise ValueError(f"rotation angle must be a multiple of 30, got {angle}")
    if grid.ndim < 2:
        raise ValueError("rotation needs at least 2 axes")
    if angle % 90 == 0:
        return np.ascontiguousarray(np.rot90(grid, k=angle // 90, axes=(-2, -1)))
    h, w = grid.shape[-2:]
    c, s = _TRIG[angle]
    cy, cx = (h - 1) / 2, (w - 1) / 2
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    x, y = jj - cx, cy - ii
    src_j = np.floor(c * x + s * y + cx + 0.5).astype(np.int64)
    src_i = np.floor(cy - (-s * x + c * y) + 0.5).astype(np.int64)
    inside = (src_i >= 0) & (src_i < h) & (src_j >= 0) & (src_j < w)
    out = np.zeros_like(grid)
    out[..., inside] = grid[..., src_i[inside], src_j[inside]]
    return out


# --- application ---------------------------------------------------------------

def special_value(kind: SpecialKind, ptype: ParamType, current: int | float) -> int | float:
    dtype = DType.F32 if ptype is ParamType.FLOAT else DType.I32
    if kind is SpecialKind.Negate:
        if ptype is ParamType.INT:
            v = -int(current)
            return v if dtype.min <= v <= dtype.max else dtype.min  # -MIN wraps to MIN
        return -float(current)
    if kind is SpecialKind.Zero:
        return 0.0 if ptype is ParamType.FLOAT else 0
    if kind is SpecialKind.NaN:
        if ptype is not ParamType.FLOAT:
            raise SiteMismatch("NaN only applies to float parameters")
        return math.nan
    return dtype.max if kind is SpecialKind.TypeMax else dtype.min


def _mutate_literal(value: TensorValue, site: MutationSite) -> TensorValue:
    op = site.operator
    if op is MutationOperator.TensorType:
        return cast(value, site.operand)
    if op is MutationOperator.TensorShape:
        return TensorValue(value.dtype, site.operand, value.data, value.kind)
    if op is MutationOperator.TensorStructure:
        return convert_structure(value, site.operand)
    if op is MutationOperator.TensorRotate:
        rotated = rotate(value.array(), site.operand)
        out = TensorValue(value.dtype, rotated.shape, rotated)
        return out if value.kind is StructureKind.DENSE else convert_structure(out, value.kind)
    raise SiteMismatch(f"{op.value} does not rewrite literals")


def apply_site(p: Program | TypedProgram, site: MutationSite,
               lineage: tuple[tuple[str, MutationSite], ...] = ()) -> Mutant:
    """Apply a site without checking that it is applicable."""
    program = p.program if isinstance(p, TypedProgram) else p
    stmt = program.statements[site.stmt]
    if site.operator is MutationOperator.ParameterSpecial:
        if not isinstance(stmt, Apply):
            raise SiteMismatch(f"statement {site.stmt} has no parameters")
        ptype = dict(OP_SPECS[stmt.kind].params)[site.param]
        params = tuple((k, special_value(site.operand, ptype, v) if k == site.param else v) for k, v in stmt.params)
        new = Apply(stmt.name, stmt.kind, stmt.args, params, stmt.line)
    else:
        if not isinstance(stmt, Let):
            raise SiteMismatch(f"statement {site.stmt} is not a literal")
        new = Let(stmt.name, _mutate_literal(stmt.value, site), stmt.line)
    mutated = program.replace(site.stmt, new)
    lineage = tuple(lineage) + ((canonical_hash(program), site),)
    try:
        typed = validate(mutated)
    except TensorError as exc:
        # kept on purpose: ill-typed programs exercise error handling
        return Mutant(mutated, lineage, False, None, f"{type(exc).__name__}: {exc}")
    return Mutant(mutated, lineage, True, typed)


def apply(p: Program | TypedProgram, site: MutationSite,
          lineage: tuple[tuple[str, MutationSite], ...] = ()) -> Mutant:
    if site not in applicable_sites(p):
        raise SiteMismatch(f"site {site.describe()} is not applicable")
    return apply_site(p, site, lineage)


def choose_site(sites: list[MutationSite], rng: np.random.Generator) -> MutationSite:
    """Uniform over operators with at least one site, then uniform over its sites."""
    by_op: dict[MutationOperator, list[MutationSite]] = {}
    for site in sites:
        by_op.setdefault(site.operator, []).append(site)
    if not by_op:
        raise NoApplicableMutation("program has no mutable literal or parameter")
    ops = [op for op in MutationOperator if op in by_op]
    group = by_op[ops[int(rng.integers(len(ops)))]]
    return group[int(rng.integers(len(group)))]


def pick_site(p: Program | TypedProgram, rng: np.random.Generator) -> MutationSite:
    return choose_site(applicable_sites(p), rng)


def pick_and_mutate(p: Program | TypedProgram, rng: np.random.Generator,
                    lineage: tuple[tuple[str, MutationSite], ...] = ()) -> Mutant:
    return apply_site(p, pick_site(p, rng), lineage)
