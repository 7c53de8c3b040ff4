"""Seed-test language: parser, canonical printer, and static checker.

One statement per line, ``#`` starts a comment::

    let a = tensor f32 [2,3] {1.0, 2.0, 3.0, 4.0, 5.0, 6.0}
    let s = sparse f32 [2,2] {(0,1): 5.0}
    let r = ragged f32 [2,3] {[1.0, 2.0], [3.0]}
    let b = reshape(a; shape=[3,2])
    let c = matmul(a, b)
    observe c
"""

from __future__ import annotations

import hashlib
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .coverage import ArchLevel, ElementKind, declare, probe
from .tensor import (OP_SPECS, DType, OpKind, ParamType, StructureKind, TensorError, TensorValue,
                     ValidationError, infer, round_param)


class ParseError(ValueError):
    def __init__(self, message: str, line: int, column: int, expected: str = ""):
        super().__init__(f"{line}:{column}: {message}" + (f" (expected {expected})" if expected else ""))
        self.line = line
        self.column = column
        self.expected = expected


# --- AST ---------------------------------------------------------------------

def _pkey(v: Any):
    if isinstance(v, float):
        return ("f", struct.pack("<d", v))
    if isinstance(v, bool):
        return ("b", v)
    if isinstance(v, int):
        return ("i", v)
    if isinstance(v, tuple):
        return ("t", tuple(_pkey(x) for x in v))
    if isinstance(v, DType):
        return ("d", v.value)
    return ("s", str(v))


@dataclass(frozen=True)
class Let:
    name: str
    value: TensorValue
    line: int = field(default=0, compare=False)


@dataclass(frozen=True, eq=False)
class Apply:
    name: str
    kind: OpKind
    args: tuple[str, ...]
    params: tuple[tuple[str, Any], ...] = ()
    line: int = 0

    def _key(self):
        return (self.name, self.kind, self.args, tuple((k, _pkey(v)) for k, v in self.params))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Apply):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())

    @property
    def param_dict(self) -> dict:
        return dict(self.params)


@dataclass(frozen=True)
class Observe:
    name: str
    line: int = field(default=0, compare=False)


Stmt = Let | Apply | Observe


@dataclass(frozen=True)
class Program:
    statements: tuple[Stmt, ...]

    @property
    def observed(self) -> list[str]:
        return [s.name for s in self.statements if isinstance(s, Observe)]

    def replace(self, index: int, stmt: Stmt) -> "Program":
        stmts = list(self.statements)
        stmts[index] = stmt
        return Program(tuple(stmts))

    def __str__(self) -> str:
        return print_program(self)


# --- tokenizer ---------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>[ \t]+)
  | (?P<comment>\#.*)
  | (?P<number>[-+]?(?:(?:inf|nan)\b|(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?))
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[=\[\]{}(),;:])
""", re.VERBOSE)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize_line(text: str, lineno: int) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", lineno, pos + 1)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), lineno, pos + 1))
        pos = m.end()
    toks.append(_Tok("eol", "", lineno, len(text) + 1))
    return toks


def _number(tok: _Tok) -> int | float:
    t = tok.text
    if re.fullmatch(r"[-+]?\d+", t):
        return int(t)
    return float(t)


class _LineParser:
    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, expected: str, message: str | None = None) -> ParseError:
        t = self.tok
        found = repr(t.text) if t.kind != "eol" else "end of line"
        return ParseError(message or f"unexpected {found}", t.line, t.col, expected)

    def take(self, kind: str, text: str | None = None) -> _Tok:
        t = self.tok
        if t.kind != kind or (text is not None and t.text != text):
            raise self.fail(repr(text) if text else kind)
        self.i += 1
        return t

    def peek(self, text: str) -> bool:
        return self.tok.kind == "punct" and self.tok.text == text

    def int_list(self, open_: str, close: str) -> tuple[int, ...]:
        self.take("punct", open_)
        out = []
        if not self.peek(close):
            while True:
                t = self.take("number")
                v = _number(t)
                if not isinstance(v, int):
                    raise ParseError(f"expected an integer, found {t.text!r}", t.line, t.col, "integer")
                out.append(v)
                if self.peek(close):
                    break
                self.take("punct", ",")
        self.take("punct", close)
        return tuple(out)

    def scalar(self) -> int | float | bool:
        t = self.tok
        if t.kind == "number":
            self.i += 1
            return _number(t)
        if t.kind == "name" and t.text in ("true", "false"):
            self.i += 1
            return t.text == "true"
        raise self.fail("number")

    def value_list(self, close: str) -> list:
        out = []
        if not self.peek(close):
            while True:
                out.append(self.scalar())
                if self.peek(close):
                    break
                self.take("punct", ",")
        return out


declare("api.literal.dense", ElementKind.LINE, ArchLevel.UserLevelAPI)
declare("api.literal.sparse", ElementKind.LINE, ArchLevel.UserLevelAPI)
declare("api.literal.ragged", ElementKind.LINE, ArchLevel.UserLevelAPI)


def _literal(p: _LineParser, form: str) -> TensorValue:
    dtype_tok = p.take("name")
    try:
        dtype = DType.parse(dtype_tok.text)
    except ValueError:
        raise ParseError(f"unknown dtype {dtype_tok.text!r}", dtype_tok.line, dtype_tok.col, "dtype") from None
    dims = p.int_list("[", "]")
    start = p.take("punct", "{")
    try:
        if form == "tensor":
            values = p.value_list("}")
            p.take("punct", "}")
            return TensorValue.from_values(dtype, dims, values)
        if form == "sparse":
            entries = []
            if not p.peek("}"):
                while True:
                    coord = p.int_list("(", ")")
                    p.take("punct", ":")
                    entries.append((coord, p.scalar()))
                    if p.peek("}"):
                        break
                    p.take("punct", ",")
            p.take("punct", "}")
            return TensorValue.sparse(dtype, dims, entries)
        rows = []
        if not p.peek("}"):
            while True:
                p.take("punct", "[")
                rows.append(p.value_list("]"))
                p.take("punct", "]")
                if p.peek("}"):
                    break
                p.take("punct", ",")
        p.take("punct", "}")
        return TensorValue.ragged(dtype, dims, rows)
    except (TensorError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"invalid literal: {exc}", start.line, start.col, "a well-formed literal") from None


def _param_value(p: _LineParser, ptype: ParamType | None) -> Any:
    t = p.tok
    if p.peek("["):
        return p.int_list("[", "]")
    if t.kind == "name":
        p.i += 1
        try:
            return DType.parse(t.text)
        except ValueError:
            return t.text
    value = p.scalar()
    if ptype is not None:
        try:
            return round_param(ptype, value)
        except ValidationError:
            pass
    return value


def parse(text: str) -> Program:
    """Parse program text.  Names must be bound before use and bound once."""
    stmts: list[Stmt] = []
    bound: set[str] = set()
    last_line = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        last_line = lineno
        toks = _tokenize_line(raw, lineno)
        if toks[0].kind == "eol":
            continue
        p = _LineParser(toks)
        head = p.take("name")
        if head.text == "observe":
            t = p.take("name")
            if t.text not in bound:
                raise ParseError(f"unbound name {t.text!r}", t.line, t.col, "a bound name")
            stmts.append(Observe(t.text, lineno))
        elif head.text == "let":
            t = p.take("name")
            if t.text in bound:
                raise ParseError(f"name {t.text!r} is already bound", t.line, t.col, "a fresh name")
            p.take("punct", "=")
            form = p.take("name")
            if form.text in ("tensor", "sparse", "ragged"):
                stmts.append(Let(t.text, _literal(p, form.text), lineno))
            else:
                try:
                    kind = OpKind.parse(form.text)
                except ValueError:
                    raise ParseError(f"unknown op {form.text!r}", form.line, form.col, "an op name or literal") from None
                p.take("punct", "(")
                args = []
                if not p.peek(")") and not p.peek(";"):
                    while True:
                        a = p.take("name")
                        if a.text not in bound:
                            raise ParseError(f"unbound name {a.text!r}", a.line, a.col, "a bound name")
                        args.append(a.text)
                        if not p.peek(","):
                            break
                        p.take("punct", ",")
                params = []
                schema = dict(OP_SPECS[kind].params)
                if p.peek(";"):
                    p.take("punct", ";")
                    while True:
                        k = p.take("name")
                        if any(k.text == name for name, _ in params):
                            raise ParseError(f"duplicate parameter {k.text!r}", k.line, k.col, "a new parameter")
                        p.take("punct", "=")
                        params.append((k.text, _param_value(p, schema.get(k.text))))
                        if not p.peek(","):
                            break
                        p.take("punct", ",")
                p.take("punct", ")")
                stmts.append(Apply(t.text, kind, tuple(args), tuple(params), lineno))
            bound.add(t.text)
        else:
            raise ParseError(f"unexpected {head.text!r}", head.line, head.col, "'let' or 'observe'")
        p.take("eol")
    if not any(isinstance(s, Observe) for s in stmts):
        raise ParseError("program has no observe statement", last_line + 1, 1, "'observe'")
    return Program(tuple(stmts))


def parse_file(path: str | Path) -> Program:
    return parse(Path(path).read_text(encoding="utf-8"))


# --- printer -----------------------------------------------------------------

def format_float(value: float, dtype: DType) -> str:
    """Shortest text that reads back (via float64) to the same ``dtype`` value."""
    v = dtype.np.type(value)
    if math.isnan(v):
        return "nan"
    text = str(v)
    back = np.array([float(text)], dtype=np.float64).astype(dtype.np)[0]
    if back.tobytes() != v.tobytes():
        text = repr(float(v))
    if re.fullmatch(r"-?\d+", text):
        text += ".0"
    return text


def _fmt_scalar(v: Any, dtype: DType) -> str:
    if dtype is DType.BOOL:
        return "true" if v else "false"
    if dtype.is_int:
        return str(int(v))
    return format_float(v, dtype)


def _fmt_param(v: Any) -> str:
    if isinstance(v, DType):
        return v.value
    if isinstance(v, tuple):
        return "[" + ",".join(str(d) for d in v) + "]"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return format_float(v, DType.F32) if np.float32(v) == v or math.isnan(v) else format_float(v, DType.F64)
    return str(v)


def format_literal(t: TensorValue) -> str:
    dims = "[" + ",".join(str(d) for d in t.shape) + "]"
    head = f"{t.kind.value if t.kind is not StructureKind.DENSE else 'tensor'} {t.dtype.value} {dims}"
    if t.kind is StructureKind.DENSE:
        body = ", ".join(_fmt_scalar(v, t.dtype) for v in t.data.tolist())
    elif t.kind is StructureKind.SPARSE:
        body = ", ".join("(" + ",".join(str(c) for c in coord) + "): " + _fmt_scalar(v, t.dtype)
                         for coord, v in zip(t.coords, t.stored_values.tolist()))
    else:
        body = ", ".join("[" + ", ".join(_fmt_scalar(v, t.dtype) for v in row.tolist()) + "]" for row in t.rows())
    return f"{head} {{{body}}}"


def format_stmt(s: Stmt) -> str:
    if isinstance(s, Observe):
        return f"observe {s.name}"
    if isinstance(s, Let):
        return f"let {s.name} = {format_literal(s.value)}"
    args = ", ".join(s.args)
    if s.params:
        args += "; " + ", ".join(f"{k}={_fmt_param(v)}" for k, v in s.params)
    return f"let {s.name} = {s.kind.value}({args})"


def print_program(p: Program) -> str:
    return "".join(format_stmt(s) + "\n" for s in p.statements)


def canonical_hash(p: Program) -> str:
    return hashlib.sha256(print_program(p).encode("utf-8")).hexdigest()


# --- static checking -------------------------------------------------------------

declare("graph.validate", ElementKind.FUNCTION, ArchLevel.GraphLevelImpl)
declare("graph.validate.ok", ElementKind.BRANCH, ArchLevel.GraphLevelImpl)
declare("graph.validate.reject", ElementKind.BRANCH, ArchLevel.GraphLevelImpl)


@dataclass(frozen=True)
class TypeInfo:
    dtype: DType
    shape: tuple[int, ...]
    kind: StructureKind = StructureKind.DENSE


@dataclass(frozen=True)
class TypedProgram:
    program: Program
    stmt_types: tuple[TypeInfo | None, ...]

    @property
    def types(self) -> dict[str, TypeInfo]:
        return {s.name: t for s, t in zip(self.program.statements, self.stmt_types) if t is not None}


def validate(p: Program) -> TypedProgram:
    """Annotate every statement with its dtype and shape.

    Raises the first ``TensorError`` (ShapeError, PromotionError or
    ValidationError) with ``stmt_index`` set to the offending statement.
    """
    probe("graph.validate")
    env: dict[str, TypeInfo] = {}
    out: list[TypeInfo | None] = []
    for i, s in enumerate(p.statements):
        if isinstance(s, Let):
            info = TypeInfo(s.value.dtype, s.value.shape, s.value.kind)
        elif isinstance(s, Apply):
            missing = [a for a in s.args if a not in env]
            if missing:
                probe("graph.validate.reject")
                raise ValidationError(f"unbound names {missing}").at(i)
            ins = [env[a] for a in s.args]
            try:
                dtype, shape = infer(s.kind, [t.dtype for t in ins], [t.shape for t in ins], s.param_dict)
            except TensorError as exc:
                probe("graph.validate.reject")
                raise exc.at(i)
            info = TypeInfo(dtype, shape)
        else:
            if s.name not in env:
                probe("graph.validate.reject")
                raise ValidationError(f"observed name {s.name!r} is unbound").at(i)
            out.append(None)
            continue
        env[s.name] = info
        out.append(info)
    probe("graph.validate.ok")
    return TypedProgram(p, tuple(out))


def iter_seed_files(directory: str | Path) -> Iterator[Path]:
    yield from sorted(Path(directory).glob("*.tft"))
