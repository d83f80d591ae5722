"""Benchmark and demo kernels with a CSV report."""
from __future__ import annotations

import time

from .common import BenchRow, Evaluator, format_rows, write_csv
from .fem import FemSystem, fem_assemble, structured_mesh
from .griewank import GriewankResult, griewank_expr, griewank_minimize
from .kernels import TimingReport, bench_fracpow, bench_taylor, fracpow_expr, taylor_expr
from .mc import QUADRATURE_REFERENCE, McResult, in_domain, mc_integrate

__all__ = [
    "BenchRow", "Evaluator", "format_rows", "write_csv", "FemSystem", "fem_assemble",
    "structured_mesh", "GriewankResult", "griewank_expr", "griewank_minimize", "TimingReport",
    "bench_fracpow", "bench_taylor", "fracpow_expr", "taylor_expr", "QUADRATURE_REFERENCE",
    "McResult", "in_domain", "mc_integrate", "run_kernel", "KERNELS",
]

KERNELS = ("taylor", "fracpow", "mc", "fem", "griewank")


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return time.perf_counter() - t0, out


def run_kernel(kernel: str, *, modes=("jit", "interp"), remote: str | None = None,
               n: int | None = None, d: int = 10, seed: int = 0, x: float = 0.5,
               N: int = 9) -> list[BenchRow]:
    """Run one kernel in each mode and return report rows.

    Sizes: ``n`` is repetitions (taylor, fracpow), points (mc) or grid
    cells per axis (fem); ``d`` is the Griewank dimension.
    """
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}")
    if remote and "remote" not in modes:
        modes = tuple(modes) + ("remote",)
    rows: list[BenchRow] = []
    if kernel in ("taylor", "fracpow"):
        reps = n or 10 ** 6
        bench = bench_taylor if kernel == "taylor" else bench_fracpow
        rep = bench(N, x=x, reps=reps)
        rows += [r for r in rep.rows() if r.mode in modes]
        if "remote" in modes:
            expr = taylor_expr(N) if kernel == "taylor" else fracpow_expr(N)
            from .kernels import X
            import numpy as np

            ev = Evaluator([X], [expr], vec_len=reps, mode="remote", remote=remote)
            try:
                secs, out = _timed(lambda: ev(np.full(reps, float(x))))
            finally:
                ev.close()
            rows.append(BenchRow(kernel, N, "remote", secs, float(out[0, 0])))
        return rows
    for mode in modes:
        addr = remote if mode == "remote" else None
        if kernel == "mc":
            size = n or 10 ** 6
            secs, r = _timed(lambda: mc_integrate(size, seed, mode=mode, remote=addr))
            rows.append(BenchRow("mc", size, mode, secs, r.estimate, seed))
        elif kernel == "fem":
            size = n or 8
            secs, s = _timed(lambda: fem_assemble(size, mode=mode, remote=addr))
            rows.append(BenchRow("fem", size, mode, secs, float(s.b.sum())))
        else:
            secs, g = _timed(lambda: griewank_minimize(d, mode=mode, remote=addr))
            rows.append(BenchRow("griewank", d, mode, secs, g.f))
    return rows
