"""Reference stack-machine interpreter for SNC-IR.

This is the correctness oracle for the native backend: operations run in
strict program order and PowI uses the same binary exponentiation sequence
the code generator emits, so results agree bit-for-bit whenever the math
library calls agree.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .ir import InstrList, Op, validate

_INF = math.inf
_NAN = math.nan


def powi(b: float, n: int) -> float:
    """b**n by repeated squaring (same multiply order as the JIT backend)."""
    m = -n if n < 0 else n
    r = 1.0
    while True:
        if m & 1:
            r *= b
        m >>= 1
        if m == 0:
            break
        b *= b
    if n < 0:
        return _recip(r)
    return r


def _recip(r: float) -> float:
    if r == 0.0:
        return math.copysign(_INF, r)
    return 1.0 / r


def _guard(f):
    # C semantics: domain errors give nan, overflow gives inf, never raise
    def g(*a):
        try:
            return f(*a)
        except (ValueError, OverflowError, ZeroDivisionError):
            with np.errstate(all="ignore"):
                return float(_NP_EQUIV[f](*(np.float64(v) for v in a)))
    return g


_NP_EQUIV = {math.sin: np.sin, math.cos: np.cos, math.tan: np.tan, math.exp: np.exp,
             math.log: np.log, math.sqrt: np.sqrt, math.fabs: np.fabs, math.pow: np.power}

FUNCS = tuple(_guard(f) for f in (math.sin, math.cos, math.tan, math.exp,
                                  math.log, math.sqrt, math.fabs))
_pow = _guard(math.pow)


def interpret(ir: InstrList, args: Sequence[float], *, checked: bool = True) -> float:
    """Evaluate a scalar program at one argument tuple."""
    if checked:
        validate(ir)
        if len(args) != ir.arity:
            raise ValueError(f"expected {ir.arity} arguments, got {len(args)}")
    stack: list[float] = []
    push, pop = stack.append, stack.pop
    for op, arg in ir.code:
        if op == Op.LOAD_ARG:
            push(float(args[arg]))
        elif op == Op.CONST:
            push(arg)
        elif op == Op.MUL:
            r = pop()
            push(pop() * r)
        elif op == Op.ADD:
            r = pop()
            push(pop() + r)
        elif op == Op.POWI:
            push(powi(pop(), arg))
        elif op == Op.POW:
            p = pop()
            push(_pow(pop(), p))
        else:
            push(FUNCS[arg](pop()))
    return stack[0]


_NP_FUNCS = (np.sin, np.cos, np.tan, np.exp, np.log, np.sqrt, np.fabs)


def powi_array(b: np.ndarray, n: int) -> np.ndarray:
    m = -n if n < 0 else n
    r = None
    while True:
        if m & 1:
            r = b if r is None else r * b
        m >>= 1
        if m == 0:
            break
        b = b * b
    if r is None:
        r = np.ones_like(b)
    return 1.0 / r if n < 0 else r


def interpret_vec(ir: InstrList, args: np.ndarray) -> np.ndarray:
    """Evaluate a program at many points; ``args`` has shape (arity, n).

    Still an instruction-at-a-time interpreter, but each step is a whole-array
    operation, so it is the strongest interpreted baseline available.
    """
    validate(ir)
    args = np.asarray(args, dtype=np.float64)
    if args.ndim != 2 or args.shape[0] != ir.arity:
        raise ValueError(f"expected args of shape ({ir.arity}, n), got {args.shape}")
    n = args.shape[1]
    stack: list = []
    with np.errstate(all="ignore"):
        for op, arg in ir.code:
            if op == Op.LOAD_ARG:
                stack.append(args[arg])
            elif op == Op.CONST:
                stack.append(np.full(n, arg))
            elif op == Op.MUL:
                r = stack.pop()
                stack.append(stack.pop() * r)
            elif op == Op.ADD:
                r = stack.pop()
                stack.append(stack.pop() + r)
            elif op == Op.POWI:
                stack.append(powi_array(stack.pop(), arg))
            elif op == Op.POW:
                p = stack.pop()
                stack.append(np.power(stack.pop(), p))
            else:
                stack.append(_NP_FUNCS[arg](stack.pop()))
    return np.array(stack[0], dtype=np.float64, copy=True)
