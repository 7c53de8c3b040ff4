"""Deterministic reference tensor engine.

Small, pure, and boring on purpose: every op has a fixed arity and parameter
schema, there is no broadcasting, float16/float32 arithmetic is carried out
in float64 and rounded once per op, and integer arithmetic wraps.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Sequence

import numpy as np

from .coverage import ArchLevel, ElementKind, active, declare, probe

MAX_RANK = 4

_F, _L, _B = ElementKind.FUNCTION, ElementKind.LINE, ElementKind.BRANCH
_OI, _GU, _ENV = ArchLevel.OperationImpl, ArchLevel.GeneralUtility, ArchLevel.EnvDependentProcessing


class TensorError(Exception):
    """Base class for engine errors.  ``stmt_index`` is filled in by callers."""

    stmt_index: int | None = None

    def at(self, index: int) -> "TensorError":
        self.stmt_index = index
        return self


class PromotionError(TensorError):
    pass


class ShapeError(TensorError):
    pass


class StructureError(TensorError):
    pass


class ValidationError(TensorError):
    """Arity or parameter-schema violation."""


class Trap(TensorError):
    """A runtime fault inside a kernel (the engine's analog of a crash)."""

    def __init__(self, kind: str, message: str, fault_id: str | None = None):
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.message = message
        self.fault_id = fault_id


class DType(enum.Enum):
    I32 = "i32"
    I64 = "i64"
    F16 = "f16"
    F32 = "f32"
    F64 = "f64"
    BOOL = "bool"

    @property
    def np(self) -> np.dtype:
        return _NP[self]

    @property
    def is_float(self) -> bool:
        return self in (DType.F16, DType.F32, DType.F64)

    @property
    def is_int(self) -> bool:
        return self in (DType.I32, DType.I64)

    @property
    def order(self) -> int:
        return _ORDER[self]

    @property
    def max(self):
        if self is DType.BOOL:
            return True
        if self.is_int:
            return int(np.iinfo(self.np).max)
        return float(np.finfo(self.np).max)

    @property
    def min(self):
        if self is DType.BOOL:
            return False
        if self.is_int:
            return int(np.iinfo(self.np).min)
        return float(np.finfo(self.np).min)

    @property
    def nan(self) -> float:
        if not self.is_float:
            raise PromotionError(f"{self.value} has no NaN")
        return math.nan

    @classmethod
    def parse(cls, text: str) -> "DType":
        try:
            return cls(text.lower())
        except ValueError:
            raise ValueError(f"unknown dtype {text!r}") from None


_NP = {
    DType.I32: np.dtype(np.int32),
    DType.I64: np.dtype(np.int64),
    DType.F16: np.dtype(np.float16),
    DType.F32: np.dtype(np.float32),
    DType.F64: np.dtype(np.float64),
    DType.BOOL: np.dtype(np.bool_),
}
_ORDER = {DType.I32: 0, DType.I64: 1, DType.F16: 2, DType.F32: 3, DType.F64: 4}
_UINT_VIEW = {2: np.uint16, 4: np.uint32, 8: np.uint64}

NUMERIC_DTYPES = (DType.I32, DType.I64, DType.F16, DType.F32, DType.F64)


class StructureKind(enum.Enum):
    DENSE = "dense"
    SPARSE = "sparse"
    RAGGED = "ragged"


def element_count(shape: Sequence[int]) -> int:
    return math.prod(shape)


def _nonzero_mask(data: np.ndarray) -> np.ndarray:
    # bitwise test: -0.0 and NaN count as stored values
    if data.dtype.kind == "f":
        return data.view(_UINT_VIEW[data.dtype.itemsize]) != 0
    return data != 0


class TensorValue:
    """An immutable tensor: dtype, shape, storage structure, and payload.

    ``data`` is always the logical dense payload in row-major order.  Sparse
    coordinates are derived from it; ragged tensors additionally carry their
    row lengths, and every position past a row's length is zero.
    """

    __slots__ = ("dtype", "shape", "kind", "data", "row_lengths", "__dict__")

    def __init__(self, dtype: DType, shape: Sequence[int], data: np.ndarray,
                 kind: StructureKind = StructureKind.DENSE, row_lengths: Sequence[int] | None = None):
        shape = tuple(int(d) for d in shape)
        if any(d < 0 for d in shape):
            raise ShapeError(f"negative extent in shape {list(shape)}")
        if len(shape) > MAX_RANK:
            raise ShapeError(f"rank {len(shape)} exceeds the maximum rank {MAX_RANK}")
        data = np.ascontiguousarray(data, dtype=dtype.np).reshape(-1)
        if data.size != element_count(shape):
            raise ShapeError(f"payload has {data.size} elements but shape {list(shape)} needs {element_count(shape)}")
        if kind is StructureKind.RAGGED:
            if len(shape) != 2:
                raise StructureError(f"ragged tensors must be rank 2, got rank {len(shape)}")
            if row_lengths is None:
                row_lengths = _trailing_lengths(data.reshape(shape))
            row_lengths = tuple(int(n) for n in row_lengths)
            if len(row_lengths) != shape[0] or any(n < 0 or n > shape[1] for n in row_lengths):
                raise StructureError(f"row lengths {list(row_lengths)} do not fit shape {list(shape)}")
            grid = data.reshape(shape)
            for r, n in enumerate(row_lengths):
                if _nonzero_mask(grid[r, n:]).any():
                    raise StructureError(f"ragged row {r} has values past its length {n}")
        elif row_lengths is not None:
            raise StructureError("row_lengths only apply to ragged tensors")
        data.flags.writeable = False
        self.dtype = dtype
        self.shape = shape
        self.kind = kind
        self.data = data
        self.row_lengths = row_lengths

    @classmethod
    def from_values(cls, dtype: DType, shape: Sequence[int], values: Sequence[Any]) -> "TensorValue":
        """Build a dense tensor from Python numbers, checking representability."""
        return cls(dtype, shape, _coerce_values(dtype, values))

    @classmethod
    def sparse(cls, dtype: DType, shape: Sequence[int], entries: Sequence[tuple[Sequence[int], Any]]) -> "TensorValue":
        shape = tuple(shape)
        coords = [tuple(int(c) for c in coord) for coord, _ in entries]
        if coords != sorted(set(coords)):
            raise StructureError("sparse coordinates must be strictly increasing")
        values = _coerce_values(dtype, [v for _, v in entries])
        dense = np.zeros(element_count(shape), dtype=dtype.np)
        for coord, value in zip(coords, values):
            if len(coord) != len(shape) or any(c < 0 or c >= d for c, d in zip(coord, shape)):
                raise StructureError(f"coordinate {list(coord)} out of bounds for shape {list(shape)}")
            dense[np.ravel_multi_index(coord, shape)] = value
        if len(values) and not _nonzero_mask(values).all():
            raise StructureError("sparse tensors store nonzero values only")
        return cls(dtype, shape, dense, StructureKind.SPARSE)

    @classmethod
    def ragged(cls, dtype: DType, shape: Sequence[int], rows: Sequence[Sequence[Any]]) -> "TensorValue":
        shape = tuple(shape)
        if len(shape) != 2:
            raise StructureError(f"ragged tensors must be rank 2, got rank {len(shape)}")
        if len(rows) != shape[0]:
            raise StructureError(f"ragged literal has {len(rows)} rows, shape needs {shape[0]}")
        dense = np.zeros(shape, dtype=dtype.np)
        for r, row in enumerate(rows):
            if len(row) > shape[1]:
                raise StructureError(f"ragged row {r} longer than {shape[1]}")
            dense[r, :len(row)] = _coerce_values(dtype, row)
        return cls(dtype, shape, dense, StructureKind.RAGGED, [len(row) for row in rows])

    # --- views -----------------------------------------------------------
    @property
    def rank(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return self.data.size

    def array(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    @cached_property
    def coords(self) -> tuple[tuple[int, ...], ...]:
        idx = np.flatnonzero(_nonzero_mask(self.data))
        if not self.shape:
            return tuple(() for _ in idx)
        return tuple(tuple(int(c) for c in np.unravel_index(i, self.shape)) for i in idx)

    @cached_property
    def stored_values(self) -> np.ndarray:
        return self.data[_nonzero_mask(self.data)]

    def rows(self) -> list[np.ndarray]:
        grid = self.array()
        lengths = self.row_lengths if self.kind is StructureKind.RAGGED else [self.shape[1]] * self.shape[0]
        return [grid[r, :n] for r, n in enumerate(lengths)]

    def dense(self) -> "TensorValue":
        if self.kind is StructureKind.DENSE:
            return self
        return TensorValue(self.dtype, self.shape, self.data)

    # --- identity ---------------------------------------------------------
    def _key(self):
        return (self.dtype, self.shape, self.kind, self.row_lengths, self.data.tobytes())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TensorValue):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())

    def __repr__(self) -> str:
        return f"TensorValue({self.dtype.value}, {list(self.shape)}, {self.kind.value}, {self.data.tolist()})"


def _trailing_lengths(grid: np.ndarray) -> list[int]:
    lengths = []
    for row in grid:
        nz = np.flatnonzero(_nonzero_mask(row))
        lengths.append(int(nz[-1]) + 1 if nz.size else 0)
    return lengths


def _coerce_values(dtype: DType, values: Sequence[Any]) -> np.ndarray:
    values = list(values)
    if dtype is DType.BOOL:
        out = []
        for v in values:
            if isinstance(v, (bool, np.bool_)) or v in (0, 1):
                out.append(bool(v))
            else:
                raise PromotionError(f"{v!r} is not a bool literal")
        return np.array(out, dtype=np.bool_)
    if dtype.is_int:
        info = np.iinfo(dtype.np)
        out = []
        for v in values:
            fv = float(v) if not isinstance(v, (int, np.integer)) else v
            if isinstance(fv, float) and (not math.isfinite(fv) or fv != int(fv)):
                raise PromotionError(f"{v!r} is not representable as {dtype.value}")
            iv = int(fv)
            if not info.min <= iv <= info.max:
                raise PromotionError(f"{iv} is out of range for {dtype.value}")
            out.append(iv)
        return np.array(out, dtype=dtype.np)
    # float literals are read as float64 and rounded once to the target width
    with np.errstate(over="ignore"):
        return np.array([float(v) for v in values], dtype=np.float64).astype(dtype.np)


# --- promotion -------------------------------------------------------------

declare("util.promote", _F, _GU)
declare("util.promote.bool_mismatch", _B, _GU)


def promote(a: DType, b: DType) -> DType:
    """Join of two dtypes on I32 < I64 < F16 < F32 < F64; BOOL only joins BOOL."""
    probe("util.promote")
    if a is DType.BOOL or b is DType.BOOL:
        if a is b:
            return a
        probe("util.promote.bool_mismatch")
        raise PromotionError(f"cannot promote {a.value} with {b.value} implicitly")
    return a if a.order >= b.order else b


# --- op vocabulary -----------------------------------------------------------

class OpKind(enum.Enum):
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    NEG = "neg"
    SQRT = "sqrt"
    RELU = "relu"
    MATMUL = "matmul"
    RESHAPE = "reshape"
    TRANSPOSE = "transpose"
    REDUCE_SUM = "reduce_sum"
    SOFTMAX = "softmax"
    CAST = "cast"
    ADADELTA_UPDATE = "adadelta_update"

    @classmethod
    def parse(cls, text: str) -> "OpKind":
        try:
            return cls(text.lower())
        except ValueError:
            raise ValueError(f"unknown op {text!r}") from None


class ParamType(enum.Enum):
    INT = "int"          # declared numeric type I32
    FLOAT = "float"      # declared numeric type F32
    DIMS = "dims"
    DTYPE = "dtype"


PARAM_NUMERIC_DTYPE = {ParamType.INT: DType.I32, ParamType.FLOAT: DType.F32}

ELEMENTWISE_BINARY = (OpKind.ADD, OpKind.SUB, OpKind.MUL, OpKind.DIV)
ELEMENTWISE_UNARY = (OpKind.NEG, OpKind.SQRT, OpKind.RELU)


@dataclass(frozen=True)
class OpSpec:
    arity: int
    params: tuple[tuple[str, ParamType], ...] = ()
    float_only: bool = False


OP_SPECS: dict[OpKind, OpSpec] = {
    OpKind.ADD: OpSpec(2),
    OpKind.SUB: OpSpec(2),
    OpKind.MUL: OpSpec(2),
    OpKind.DIV: OpSpec(2),
    OpKind.NEG: OpSpec(1),
    OpKind.SQRT: OpSpec(1),
    OpKind.RELU: OpSpec(1),
    OpKind.MATMUL: OpSpec(2),
    OpKind.RESHAPE: OpSpec(1, (("shape", ParamType.DIMS),)),
    OpKind.TRANSPOSE: OpSpec(1),
    OpKind.REDUCE_SUM: OpSpec(1, (("axis", ParamType.INT),)),
    OpKind.SOFTMAX: OpSpec(1, (("axis", ParamType.INT),), float_only=True),
    OpKind.CAST: OpSpec(1, (("dtype", ParamType.DTYPE),)),
    OpKind.ADADELTA_UPDATE: OpSpec(
        2, (("learning_rate", ParamType.FLOAT), ("rho", ParamType.FLOAT), ("epsilon", ParamType.FLOAT)),
        float_only=True),
}


def round_param(ptype: ParamType, value: Any) -> Any:
    """Normalize a parameter value to its declared type (floats rounded to F32)."""
    if ptype is ParamType.FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"expected a float parameter, got {value!r}")
        with np.errstate(over="ignore"):
            return float(np.float32(value))
    if ptype is ParamType.INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"expected an integer parameter, got {value!r}")
        if not DType.I32.min <= value <= DType.I32.max:
            raise ValidationError(f"integer parameter {value} out of i32 range")
        return int(value)
    if ptype is ParamType.DIMS:
        if not isinstance(value, (list, tuple)) or not all(isinstance(d, int) and not isinstance(d, bool) for d in value):
            raise ValidationError(f"expected a dims list, got {value!r}")
        return tuple(int(d) for d in value)
    if not isinstance(value, DType):
        raise ValidationError(f"expected a dtype parameter, got {value!r}")
    return value


def _check_params(kind: OpKind, params: dict) -> dict:
    spec = OP_SPECS[kind]
    expected = dict(spec.params)
    for name in params:
        if name not in expected:
            raise ValidationError(f"{kind.value} has no parameter {name!r}")
    out = {}
    for name, ptype in spec.params:
        if name not in params:
            raise ValidationError(f"{kind.value} is missing parameter {name!r}")
        out[name] = round_param(ptype, params[name])
    return out


def _norm_axis(kind: OpKind, axis: int, rank: int) -> int:
    if rank == 0 or not -rank <= axis < rank:
        raise ShapeError(f"{kind.value}: axis {axis} out of range for rank {rank}")
    return axis % rank


def infer_shape(kind: OpKind, input_shapes: Sequence[Sequence[int]], params: dict | None = None) -> tuple[int, ...]:
    params = _check_params(kind, params or {})
    spec = OP_SPECS[kind]
    if len(input_shapes) != spec.arity:
        raise ValidationError(f"{kind.value} takes {spec.arity} inputs, got {len(input_shapes)}")
    shapes = [tuple(s) for s in input_shapes]
    if kind in ELEMENTWISE_BINARY or kind is OpKind.ADADELTA_UPDATE:
        a, b = shapes
        if a != b:
            raise ShapeError(f"{kind.value}: shapes {list(a)} and {list(b)} differ (no broadcasting)")
        return a
    if kind in ELEMENTWISE_UNARY or kind is OpKind.CAST:
        return shapes[0]
    if kind is OpKind.MATMUL:
        a, b = shapes
        if len(a) != 2 or len(b) != 2:
            raise ShapeError(f"matmul: needs rank-2 operands, got {list(a)} and {list(b)}")
        if a[1] != b[0]:
            raise ShapeError(f"matmul: inner dims differ, {list(a)} x {list(b)}")
        return (a[0], b[1])
    if kind is OpKind.RESHAPE:
        target = params["shape"]
        if any(d < 0 for d in target):
            raise ShapeError(f"reshape: negative extent in target {list(target)}")
        if len(target) > MAX_RANK:
            raise ShapeError(f"reshape: target rank {len(target)} exceeds {MAX_RANK}")
        if element_count(target) != element_count(shapes[0]):
            raise ShapeError(f"reshape: cannot reshape {list(shapes[0])} ({element_count(shapes[0])} elements) "
                             f"to {list(target)} ({element_count(target)} elements)")
        return tuple(target)
    if kind is OpKind.TRANSPOSE:
        return tuple(reversed(shapes[0]))
    if kind is OpKind.REDUCE_SUM:
        axis = _norm_axis(kind, params["axis"], len(shapes[0]))
        return shapes[0][:axis] + shapes[0][axis + 1:]
    if kind is OpKind.SOFTMAX:
        _norm_axis(kind, params["axis"], len(shapes[0]))
        return shapes[0]
    raise AssertionError(kind)


def infer_dtype(kind: OpKind, input_dtypes: Sequence[DType], params: dict | None = None) -> DType:
    spec = OP_SPECS[kind]
    if len(input_dtypes) != spec.arity:
        raise ValidationError(f"{kind.value} takes {spec.arity} inputs, got {len(input_dtypes)}")
    if kind is OpKind.CAST:
        return _check_params(kind, params or {})["dtype"]
    out = input_dtypes[0]
    for dt in input_dtypes[1:]:
        out = promote(out, dt)
    if out is DType.BOOL and kind not in (OpKind.RESHAPE, OpKind.TRANSPOSE):
        raise PromotionError(f"{kind.value} does not accept bool inputs")
    if spec.float_only and not out.is_float:
        raise PromotionError(f"{kind.value} needs floating inputs, got {out.value}")
    return out


def infer(kind: OpKind, input_dtypes: Sequence[DType], input_shapes: Sequence[Sequence[int]],
          params: dict | None = None) -> tuple[DType, tuple[int, ...]]:
    shape = infer_shape(kind, input_shapes, params)
    return infer_dtype(kind, input_dtypes, params), shape


# --- kernels -----------------------------------------------------------------

for _k in OpKind:
    declare(f"op.{_k.value}", _F, _OI)
    declare(f"op.{_k.value}.float", _L, _OI)
    if _k not in (OpKind.SOFTMAX, OpKind.ADADELTA_UPDATE):
        declare(f"op.{_k.value}.int", _L, _OI)
declare("op.reshape.bool", _L, _OI)
declare("op.transpose.bool", _L, _OI)
declare("op.div.zero_divisor", _B, _OI)
declare("op.div.nonzero_divisor", _B, _OI)
declare("op.sqrt.negative_int", _B, _OI)
declare("op.relu.negative_seen", _B, _OI)
declare("op.softmax.nonfinite_input", _B, _OI)
declare("op.matmul.empty_inner", _B, _OI)
declare("op.reduce_sum.last_axis", _B, _OI)
declare("op.reduce_sum.inner_axis", _B, _OI)
declare("op.adadelta_update.mixed_dtype", _B, _OI)
for _name in ("f16_emulation", "f32_rounding", "f64_native", "int32_wrap", "int64_wrap"):
    declare(f"env.{_name}", _L, _ENV)
declare("env.overflow_to_inf", _B, _ENV)
declare("env.int_overflow_wrapped", _B, _ENV)
declare("env.large_tensor", _B, _ENV)
declare("env.small_tensor", _B, _ENV)
declare("util.densify", _F, _GU)
declare("util.sparsify", _F, _GU)
declare("util.raggedify", _F, _GU)
for _name in ("identity", "float_to_float", "float_to_int", "int_to_float", "int_to_int", "to_bool", "from_bool"):
    declare(f"util.cast.{_name}", _L, _GU)
declare("util.cast", _F, _GU)
declare("util.cast.nonfinite_trap", _B, _GU)
declare("util.cast.wrapped", _B, _GU)

LARGE_TENSOR = 64


def _finish_float(values: np.ndarray, dtype: DType) -> np.ndarray:
    """Round a float64 result to ``dtype`` (once per op)."""
    if dtype is DType.F16:
        probe("env.f16_emulation")
    elif dtype is DType.F32:
        probe("env.f32_rounding")
    else:
        probe("env.f64_native")
    with np.errstate(over="ignore", invalid="ignore"):
        out = values.astype(dtype.np)
    if active() and np.isinf(out).any() and not np.isinf(values).any():
        probe("env.overflow_to_inf")
    return out


def _finish_int(values: np.ndarray, dtype: DType) -> np.ndarray:
    probe("env.int32_wrap" if dtype is DType.I32 else "env.int64_wrap")
    out = values.astype(dtype.np)
    if active() and values.dtype != out.dtype and (out.astype(values.dtype) != values).any():
        probe("env.int_overflow_wrapped")
    return out


def _as(values: np.ndarray, dtype: DType) -> np.ndarray:
    """Input payload converted to the compute type for ``dtype``."""
    if dtype.is_float:
        return values.astype(np.float64)
    return values.astype(np.int64)


def _wrap_int(value: int, dtype: DType) -> int:
    bits = dtype.np.itemsize * 8
    value &= (1 << bits) - 1
    return value - (1 << bits) if value >= 1 << (bits - 1) else value


def cast(t: TensorValue, target: DType) -> TensorValue:
    """Convert payload to ``target``; shape and structure are preserved.

    Floats truncate toward zero into integers and wrap on overflow; NaN or
    infinity into an integer is a Trap.
    """
    probe("util.cast")
    if target is t.dtype:
        probe("util.cast.identity")
        return t
    src = t.data
    if target is DType.BOOL:
        probe("util.cast.to_bool")
        out = src != 0
    elif t.dtype is DType.BOOL:
        probe("util.cast.from_bool")
        out = src.astype(target.np)
    elif target.is_float:
        probe("util.cast.float_to_float" if t.dtype.is_float else "util.cast.int_to_float")
        with np.errstate(over="ignore"):
            out = src.astype(target.np)
    elif t.dtype.is_float:
        probe("util.cast.float_to_int")
        if not np.isfinite(src).all():
            probe("util.cast.nonfinite_trap")
            raise Trap("CAST", f"cannot cast non-finite {t.dtype.value} value to {target.value}")
        ints = [int(v) for v in np.trunc(src.astype(np.float64))]
        wrapped = [_wrap_int(v, target) for v in ints]
        if wrapped != ints:
            probe("util.cast.wrapped")
        out = np.array(wrapped, dtype=target.np)
    else:
        probe("util.cast.int_to_int")
        out = src.astype(target.np)
        if active() and (out.astype(np.int64) != src.astype(np.int64)).any():
            probe("util.cast.wrapped")
    dense = TensorValue(target, t.shape, out)
    if t.kind is StructureKind.DENSE:
        return dense
    return convert_structure(dense, t.kind)


def convert_structure(t: TensorValue, target: StructureKind) -> TensorValue:
    """Re-store ``t`` as ``target``; logical values are untouched."""
    if target is StructureKind.DENSE:
        probe("util.densify")
        return t.dense()
    if target is StructureKind.SPARSE:
        probe("util.sparsify")
        return TensorValue(t.dtype, t.shape, t.data, StructureKind.SPARSE)
    probe("util.raggedify")
    if t.rank != 2:
        raise StructureError(f"ragged tensors must be rank 2, got rank {t.rank}")
    if t.kind is StructureKind.RAGGED:
        return t
    return TensorValue(t.dtype, t.shape, t.data, StructureKind.RAGGED)


def _elementwise(kind: OpKind, xs: list[np.ndarray], dtype: DType) -> np.ndarray:
    a = xs[0]
    if kind is OpKind.ADD:
        return a + xs[1]
    if kind is OpKind.SUB:
        return a - xs[1]
    if kind is OpKind.MUL:
        return a * xs[1]
    if kind is OpKind.NEG:
        return -a
    if kind is OpKind.RELU:
        if active() and (a < 0).any():
            probe("op.relu.negative_seen")
        return np.where(a < 0, np.zeros_like(a), a)
    if kind is OpKind.DIV:
        b = xs[1]
        if dtype.is_float:
            return a / b
        if (b == 0).any():
            probe("op.div.zero_divisor")
            raise Trap("DIV", "integer division by zero")
        probe("op.div.nonzero_divisor")
        q = a // b
        # truncate toward zero like C
        q = np.where((q < 0) & (q * b != a), q + 1, q)
        return q
    if kind is OpKind.SQRT:
        if dtype.is_float:
            return np.sqrt(a)
        if (a < 0).any():
            probe("op.sqrt.negative_int")
            raise Trap("SQRT", "square root of a negative integer")
        return np.array([math.isqrt(int(v)) for v in a], dtype=np.int64)
    raise AssertionError(kind)


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    if active() and not np.isfinite(x).all():
        probe("op.softmax.nonfinite_input")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def adadelta_step(var: np.ndarray, grad: np.ndarray, lr: float, rho: float, eps: float) -> np.ndarray:
    """One Adadelta update from zero accumulators, elementwise in float64."""
    acc_grad = np.zeros_like(var)
    acc_delta = np.zeros_like(var)
    acc_grad = rho * acc_grad + (1.0 - rho) * grad * grad
    delta = -np.sqrt(acc_delta + eps) / np.sqrt(acc_grad + eps) * grad
    acc_delta = rho * acc_delta + (1.0 - rho) * delta * delta
    return var + lr * delta


def evaluate(kind: OpKind, inputs: Sequence[TensorValue], params: dict | None = None) -> TensorValue:
    """Apply one op.  Pure: equal inputs always give byte-identical output."""
    params = params or {}
    out_dtype, out_shape = infer(kind, [t.dtype for t in inputs], [t.shape for t in inputs], params)
    params = _check_params(kind, params)
    probe(f"op.{kind.value}")
    if active():
        n = max((t.size for t in inputs), default=0)
        probe("env.large_tensor" if n > LARGE_TENSOR else "env.small_tensor")

    if kind is OpKind.CAST:
        probe("op.cast.float" if inputs[0].dtype.is_float else "op.cast.int")
        return cast(inputs[0].dense(), out_dtype)
    if out_dtype is DType.BOOL:
        probe(f"op.{kind.value}.bool")
        src = inputs[0]
        if kind is OpKind.RESHAPE:
            return TensorValue(out_dtype, out_shape, src.data)
        return TensorValue(out_dtype, out_shape, np.ascontiguousarray(src.array().transpose()))

    path = "float" if out_dtype.is_float else "int"
    probe(f"op.{kind.value}.{path}")
    if kind is OpKind.RESHAPE:
        return TensorValue(out_dtype, out_shape, cast(inputs[0].dense(), out_dtype).data)
    if kind is OpKind.TRANSPOSE:
        return TensorValue(out_dtype, out_shape, np.ascontiguousarray(inputs[0].array().transpose()))

    xs = [_as(t.data, out_dtype) for t in inputs]
    with np.errstate(all="ignore"):
        if kind in ELEMENTWISE_BINARY or kind in ELEMENTWISE_UNARY:
            raw = _elementwise(kind, xs, out_dtype)
        elif kind is OpKind.MATMUL:
            (m, k), (_, n) = inputs[0].shape, inputs[1].shape
            a, b = xs[0].reshape(m, k), xs[1].reshape(k, n)
            raw = np.zeros((m, n), dtype=a.dtype)
            if k == 0:
                probe("op.matmul.empty_inner")
            for p in range(k):
                raw = raw + a[:, p:p + 1] * b[p:p + 1, :]
        elif kind is OpKind.REDUCE_SUM:
            src = inputs[0]
            axis = params["axis"] % src.rank
            probe("op.reduce_sum.last_axis" if axis == src.rank - 1 else "op.reduce_sum.inner_axis")
            grid = xs[0].reshape(src.shape)
            raw = np.zeros(out_shape, dtype=grid.dtype)
            for i in range(src.shape[axis]):
                raw = raw + np.take(grid, i, axis=axis)
        elif kind is OpKind.SOFTMAX:
            src = inputs[0]
            raw = _softmax(xs[0].reshape(src.shape), params["axis"] % src.rank)
        elif kind is OpKind.ADADELTA_UPDATE:
            if inputs[0].dtype is not inputs[1].dtype:
                probe("op.adadelta_update.mixed_dtype")
            raw = adadelta_step(xs[0], xs[1], params["learning_rate"], params["rho"], params["epsilon"])
        else:
            raise AssertionError(kind)
    raw = np.asarray(raw).reshape(-1)
    data = _finish_float(raw, out_dtype) if out_dtype.is_float else _finish_int(raw, out_dtype)
    return TensorValue(out_dtype, out_shape, data)
