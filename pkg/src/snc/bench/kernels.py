"""Expression-evaluation kernels: truncated Taylor series of e^x and sums of n-th roots."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..codegen import interpret_vec, linearize
from ..expr import Expr, SymbolTable, num, sym
from .common import BenchRow, Evaluator, best_of

X = sym("x")


def taylor_expr(N: int) -> Expr:
    """sum_{n=0}^{N} x^n / n!, with each 1/n! folded to one constant."""
    if N < 0:
        raise ValueError("N must be >= 0")
    return sum((num(1.0 / math.factorial(n)) * X ** n for n in range(N + 1)), num(0))


def fracpow_expr(N: int) -> Expr:
    """sum_{n=1}^{N} x^(1/n)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return sum((X ** num(1.0 / n) if n > 1 else X for n in range(1, N + 1)), num(0))


@dataclass
class TimingReport:
    kernel: str
    N: int
    points: int
    jit_seconds: float
    interp_seconds: float
    compile_seconds: float
    backend: str
    jit_values: np.ndarray
    interp_values: np.ndarray

    @property
    def speedup(self) -> float:
        return self.interp_seconds / self.jit_seconds if self.jit_seconds > 0 else math.inf

    @property
    def max_rel_diff(self) -> float:
        a, b = self.jit_values, self.interp_values
        scale = np.maximum(np.abs(b), np.finfo(float).tiny)
        return float(np.max(np.abs(a - b) / scale)) if a.size else 0.0

    def rows(self) -> list[BenchRow]:
        v = float(self.jit_values[0]) if self.jit_values.size else math.nan
        w = float(self.interp_values[0]) if self.interp_values.size else math.nan
        return [BenchRow(self.kernel, self.N, "jit", self.jit_seconds, v),
                BenchRow(self.kernel, self.N, "interp", self.interp_seconds, w)]


def time_vec(kernel: str, N: int, e: Expr, points: np.ndarray, repeat: int = 3) -> TimingReport:
    """Time one vectorized call of ``e`` over ``points``: JIT against the numpy interpreter."""
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1)
    t_compile, ev = best_of(lambda: Evaluator([X], [e], vec_len=points.size), 1)
    t_jit, jv = best_of(lambda: ev(points)[0], repeat)
    ir = linearize(e, SymbolTable([X]), points.size)
    args = points.reshape(1, -1)
    t_int, iv = best_of(lambda: interpret_vec(ir, args), repeat)
    return TimingReport(kernel, N, points.size, t_jit, t_int, t_compile, ev.backend, jv, iv)


def bench_taylor(N: int = 9, x: float = 0.5, reps: int = 10 ** 6, points=None,
                 repeat: int = 3) -> TimingReport:
    """Evaluate the order-N Taylor polynomial ``reps`` times at ``x`` (or at ``points``)."""
    pts = np.full(reps, float(x)) if points is None else points
    return time_vec("taylor", N, taylor_expr(N), pts, repeat)


def bench_fracpow(N: int = 9, x: float = 0.5, reps: int = 10 ** 6, points=None,
                  repeat: int = 3) -> TimingReport:
    if x <= 0 and points is None:
        raise ValueError("fractional powers need x > 0")
    pts = np.full(reps, float(x)) if points is None else points
    return time_vec("fracpow", N, fracpow_expr(N), pts, repeat)
