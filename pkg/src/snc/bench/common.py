"""Shared evaluation plumbing and report rows for the benchmark kernels."""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..codegen import JIT, linearize
from ..expr import Expr, SymbolTable

MODES = ("jit", "interp", "remote")


@dataclass
class BenchRow:
    kernel: str
    size: int
    mode: str
    seconds: float
    value: float
    seed: int | None = None


CSV_FIELDS = ["kernel", "size", "mode", "seconds", "value", "seed"]


def write_csv(rows: Sequence[BenchRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in rows:
            d = asdict(r)
            d["value"] = format(d["value"], ".17g")
            d["seconds"] = format(d["seconds"], ".6g")
            w.writerow(d)


def format_rows(rows: Sequence[BenchRow]) -> str:
    lines = [f"{'kernel':<10}{'size':>10}  {'mode':<7}{'seconds':>12}  value"]
    for r in rows:
        lines.append(f"{r.kernel:<10}{r.size:>10}  {r.mode:<7}{r.seconds:>12.6f}  {r.value:.17g}")
    return "\n".join(lines)


def best_of(fn, repeat: int = 3):
    """(min wall seconds, last result) over ``repeat`` calls."""
    best, out = float("inf"), None
    for _ in range(max(1, repeat)):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


class Evaluator:
    """Evaluate a list of expressions through the JIT, the interpreter or the cloud.

    ``vec_len > 0`` evaluates each expression at that many points; the call
    takes args shaped (arity, vec_len) and returns (count, vec_len).
    Without ``vec_len`` it takes one argument tuple and returns (count,).
    """

    def __init__(self, args, exprs: Sequence[Expr], *, vec_len: int = 0, mode: str = "jit",
                 remote: str | None = None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.args = SymbolTable(args)
        self.exprs = list(exprs)
        self.vec_len = vec_len
        self.mode = mode
        if mode == "remote":
            from ..client import CloudConfig, CloudFunc, CloudSD

            if not remote:
                raise ValueError("remote mode needs a scheduler address")
            self.config = CloudConfig(remote, threshold=0)
            self._cloud = CloudFunc(self.args, self.exprs, vec_len=vec_len, config=self.config)
            # one input and one output name per evaluator, overwritten on every call
            self._inp, self._out = CloudSD(config=self.config), CloudSD(config=self.config)
            self.backend = "remote"
        else:
            irs = [linearize(e, self.args, vec_len) for e in self.exprs]
            jit = JIT("auto" if mode == "jit" else "interp")
            self._fn = jit.compile_ir(irs)
            self.backend = jit.backend

    def __call__(self, flat) -> np.ndarray:
        flat = np.ascontiguousarray(flat, dtype=np.float64).reshape(-1)
        if self.mode == "remote":
            self._cloud.apply(self._out, self._inp.init(flat))
            if not self._out.fetch_to_local():
                raise RuntimeError(f"fetching the result failed: {self._out.last_error}")
            res = self._out.data
        else:
            res = np.asarray(self._fn(flat), dtype=np.float64)
        if self.vec_len:
            return res.reshape(len(self.exprs), self.vec_len)
        return res.reshape(len(self.exprs))

    def close(self):
        if self.mode == "remote":
            self.config.close()
