"""Griewank minimization with symbolic gradients and gradient descent.

f(x) = sum_i x_i^2 / 4000 - prod_i cos(x_i / sqrt(i)) + 1
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..expr import Expr, cos, diff, num, sym
from .common import Evaluator

ARMIJO_C = 1e-4
SHRINK = 0.5
_EPS = np.finfo(float).eps


def griewank_symbols(d: int):
    width = len(str(d))
    return [sym(f"x{i:0{width}d}") for i in range(1, d + 1)]


def griewank_expr(d: int) -> tuple[list, Expr]:
    if d < 1:
        raise ValueError("d must be >= 1")
    xs = griewank_symbols(d)
    quad = sum((x ** 2 / 4000 for x in xs), num(0))
    prod = num(1)
    for i, x in enumerate(xs, start=1):
        prod = prod * cos(x * num(1.0 / math.sqrt(i)) if i > 1 else x)
    return xs, quad - prod + 1


def griewank_numpy(x) -> float:
    """Direct numpy evaluation, independent of the expression engine."""
    x = np.asarray(x, dtype=np.float64)
    i = np.arange(1, x.size + 1)
    return float(np.sum(x * x) / 4000 - np.prod(np.cos(x / np.sqrt(i))) + 1)


@dataclass
class GriewankResult:
    x: np.ndarray
    f: float
    grad_norm: float
    iterations: int
    converged: bool
    evaluations: int


def objective(d: int, mode: str = "jit", remote: str | None = None) -> Evaluator:
    """Batch function returning [f, df/dx1, ..., df/dxd]."""
    xs, f = griewank_expr(d)
    return Evaluator(xs, [f] + [diff(f, x) for x in xs], mode=mode, remote=remote)


def griewank_minimize(d: int = 10, start=None, tol: float = 1e-8, max_iter: int = 10 ** 5,
                      mode: str = "jit", remote: str | None = None) -> GriewankResult:
    """Steepest descent with backtracking (Armijo) line search.

    Near the minimum, f is only known to about eps*(1 + |f|) because of the
    "+1" and the cosine product, so the sufficient-decrease test allows that
    much noise. Without it the search stalls long before the gradient
    tolerance is reachable.
    """
    ev = objective(d, mode, remote)
    try:
        x = np.full(d, 0.01) if start is None else np.array(start, dtype=np.float64)
        if x.shape != (d,):
            raise ValueError(f"start must have {d} entries")
        out = ev(x)
        fx, g = out[0], out[1:]
        evals, it = 1, 0
        gn = float(np.linalg.norm(g))
        while gn >= tol and it < max_iter:
            t, g2 = 1.0, gn * gn
            noise = 4 * _EPS * (1.0 + abs(fx))
            while True:
                xn = x - t * g
                out = ev(xn)
                evals += 1
                if out[0] <= fx - ARMIJO_C * t * g2 + noise:
                    break
                t *= SHRINK
                if t < 1e-20:
                    break
            x, fx, g = xn, out[0], out[1:]
            gn = float(np.linalg.norm(g))
            it += 1
        return GriewankResult(x, float(fx), gn, it, gn < tol, evals)
    finally:
        ev.close()
