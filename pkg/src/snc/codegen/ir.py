"""SNC-IR: a postfix stack-machine program and its binary encoding.

Byte layout (big-endian)::

    "SNCI" | version:u8 | arity:u32 | vec_len:u32 | instr_count:u32 | instrs...

Each instruction is an opcode byte followed by its operand: LoadArg u32,
Const f64, PowI i32, Call u8 (function id); Add/Mul/Pow carry none.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple, Sequence

from ..expr import FUNCTIONS, Expr, Number, Symbol, SymbolTable, postorder

MAGIC = b"SNCI"
VERSION = 1
POWI_LIMIT = 64

_HEADER = struct.Struct(">4sBIII")


class Op(IntEnum):
    LOAD_ARG = 0
    CONST = 1
    ADD = 2
    MUL = 3
    POW = 4
    POWI = 5
    CALL = 6


class Instr(NamedTuple):
    op: Op
    arg: int | float | None = None

    def __repr__(self):
        if self.op == Op.CALL:
            return f"Call {FUNCTIONS[self.arg]}"
        name = {Op.LOAD_ARG: "LoadArg", Op.CONST: "Const", Op.ADD: "Add", Op.MUL: "Mul",
                Op.POW: "Pow", Op.POWI: "PowI"}[self.op]
        return name if self.arg is None else f"{name} {self.arg!r}"


def load_arg(i: int) -> Instr:
    return Instr(Op.LOAD_ARG, i)


def const(v: float) -> Instr:
    return Instr(Op.CONST, float(v))


def powi(n: int) -> Instr:
    return Instr(Op.POWI, n)


def call(fname: str) -> Instr:
    return Instr(Op.CALL, FUNCTIONS.index(fname))


ADD = Instr(Op.ADD)
MUL = Instr(Op.MUL)
POW = Instr(Op.POW)

# net stack effect of each opcode
_EFFECT = {Op.LOAD_ARG: 1, Op.CONST: 1, Op.ADD: -1, Op.MUL: -1, Op.POW: -1, Op.POWI: 0, Op.CALL: 0}
_NEEDS = {Op.LOAD_ARG: 0, Op.CONST: 0, Op.ADD: 2, Op.MUL: 2, Op.POW: 2, Op.POWI: 1, Op.CALL: 1}


class IRError(ValueError):
    """Invalid or undecodable IR. ``code`` names the failure class."""

    BAD_MAGIC = "bad-magic"
    BAD_VERSION = "bad-version"
    TRUNCATED = "truncated"
    STACK_IMBALANCE = "stack-imbalance"
    BAD_OPCODE = "bad-opcode"
    BAD_OPERAND = "bad-operand"
    TRAILING = "trailing-bytes"
    UNBOUND = "unbound-symbol"

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class InstrList:
    arity: int
    vec_len: int
    code: tuple

    def __post_init__(self):
        object.__setattr__(self, "code", tuple(self.code))

    def __len__(self):
        return len(self.code)

    def __iter__(self):
        return iter(self.code)

    def validate(self) -> "InstrList":
        validate(self)
        return self

    def with_vec_len(self, vec_len: int) -> "InstrList":
        return InstrList(self.arity, vec_len, self.code)


def validate(ir: InstrList) -> None:
    """Reject programs that underflow, leave != 1 value, or reference bad operands."""
    if not (0 <= ir.arity < 2 ** 32 and 0 <= ir.vec_len < 2 ** 32):
        raise IRError(IRError.BAD_OPERAND, "arity/vec_len out of range")
    depth = 0
    for pc, ins in enumerate(ir.code):
        op, arg = ins
        if op not in _EFFECT:
            raise IRError(IRError.BAD_OPCODE, f"opcode {op!r} at {pc}")
        if depth < _NEEDS[op]:
            raise IRError(IRError.STACK_IMBALANCE, f"stack underflow at instruction {pc} ({ins!r})")
        if op == Op.LOAD_ARG and not (0 <= arg < ir.arity):
            raise IRError(IRError.BAD_OPERAND, f"argument index {arg} >= arity {ir.arity}")
        if op == Op.CALL and not (0 <= arg < len(FUNCTIONS)):
            raise IRError(IRError.BAD_OPERAND, f"unknown function id {arg}")
        if op == Op.POWI and not (-POWI_LIMIT <= arg <= POWI_LIMIT):
            raise IRError(IRError.BAD_OPERAND, f"powi exponent {arg} outside +/-{POWI_LIMIT}")
        depth += _EFFECT[op]
    if depth != 1:
        raise IRError(IRError.STACK_IMBALANCE, f"program leaves {depth} values on the stack")


def _powi_exponent(e: Expr):
    if isinstance(e, Number) and float(e.value).is_integer() and abs(e.value) <= POWI_LIMIT:
        return int(e.value)
    return None


def linearize(e: Expr, args: Sequence[Symbol] | SymbolTable, vec_len: int = 0) -> InstrList:
    """Build the stack program for ``e`` from its post-order atom list.

    Mirrors a pushdown-stack IR builder: each stack slot holds the code that
    produces one value, and a power whose exponent slot is an integral
    constant with magnitude <= 64 collapses to PowI.
    """
    table = args if isinstance(args, SymbolTable) else SymbolTable(args)
    stack: list[tuple[list, Expr | None]] = []
    for atom in postorder(e):
        if isinstance(atom, Symbol):
            if atom not in table:
                raise IRError(IRError.UNBOUND, f"symbol {atom.name!r} is not an argument")
            stack.append(([load_arg(table.index_of(atom))], None))
        elif isinstance(atom, Number):
            stack.append(([const(atom.value)], atom))
        elif atom in ("+", "*"):
            r, l = stack.pop(), stack.pop()
            stack.append((l[0] + r[0] + [ADD if atom == "+" else MUL], None))
        elif atom == "^":
            p, b = stack.pop(), stack.pop()
            n = _powi_exponent(p[1]) if p[1] is not None else None
            code = b[0] + [powi(n)] if n is not None else b[0] + p[0] + [POW]
            stack.append((code, None))
        else:
            a = stack.pop()
            stack.append((a[0] + [call(atom)], None))
    (code, _), = stack
    return InstrList(len(table), vec_len, code)


# -- binary encoding ---------------------------------------------------------

def serialize_ir(ir: InstrList) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, ir.arity, ir.vec_len, len(ir.code))]
    for op, arg in ir.code:
        if op == Op.LOAD_ARG:
            parts.append(struct.pack(">BI", op, arg))
        elif op == Op.CONST:
            parts.append(struct.pack(">Bd", op, arg))
        elif op == Op.POWI:
            parts.append(struct.pack(">Bi", op, arg))
        elif op == Op.CALL:
            parts.append(struct.pack(">BB", op, arg))
        else:
            parts.append(struct.pack(">B", op))
    return b"".join(parts)


_OPERAND = {Op.LOAD_ARG: struct.Struct(">I"), Op.CONST: struct.Struct(">d"),
            Op.POWI: struct.Struct(">i"), Op.CALL: struct.Struct(">B")}


def _decode_one(data: bytes, pos: int) -> tuple[InstrList, int]:
    if len(data) - pos < 4:
        raise IRError(IRError.TRUNCATED, "shorter than magic")
    if data[pos:pos + 4] != MAGIC:
        raise IRError(IRError.BAD_MAGIC, f"expected {MAGIC!r}, got {bytes(data[pos:pos + 4])!r}")
    if len(data) - pos < _HEADER.size:
        raise IRError(IRError.TRUNCATED, "header truncated")
    _, version, arity, vec_len, count = _HEADER.unpack_from(data, pos)
    if version != VERSION:
        raise IRError(IRError.BAD_VERSION, f"unsupported IR version {version}")
    pos += _HEADER.size
    code = []
    for _ in range(count):
        if pos >= len(data):
            raise IRError(IRError.TRUNCATED, f"instruction {len(code)} missing")
        raw = data[pos]
        pos += 1
        try:
            op = Op(raw)
        except ValueError:
            raise IRError(IRError.BAD_OPCODE, f"unknown opcode {raw}") from None
        fmt = _OPERAND.get(op)
        if fmt is None:
            code.append(Instr(op))
            continue
        if len(data) - pos < fmt.size:
            raise IRError(IRError.TRUNCATED, f"operand of instruction {len(code)} truncated")
        (arg,) = fmt.unpack_from(data, pos)
        pos += fmt.size
        code.append(Instr(op, arg))
    ir = InstrList(arity, vec_len, code)
    validate(ir)
    return ir, pos


def deserialize_ir(data: bytes) -> InstrList:
    """Decode exactly one program; validation runs before it is returned."""
    ir, pos = _decode_one(data, 0)
    if pos != len(data):
        raise IRError(IRError.TRAILING, f"{len(data) - pos} bytes after program")
    return ir


def serialize_batch(irs: Sequence[InstrList]) -> bytes:
    """Concatenate programs; a batch function ships as one blob per expression."""
    return b"".join(serialize_ir(ir) for ir in irs)


def deserialize_batch(data: bytes) -> list[InstrList]:
    out, pos = [], 0
    while pos < len(data) or not out:
        ir, pos = _decode_one(data, pos)
        out.append(ir)
    arities = {(ir.arity, ir.vec_len) for ir in out}
    if len(arities) != 1:
        raise IRError(IRError.BAD_OPERAND, "batch programs disagree on arity/vec_len")
    return out
