"""Client SDK: CloudConfig, CloudFunc and CloudSD.

A typical session::

    set_global_target("127.0.0.1:7701")
    x, y = symbols("x y")
    fun = CloudFunc([x, y], diff(R, y))
    inp = CloudSD("input").init(0.362, 0.556)
    out = CloudSD("output")
    fun.apply(out, inp)
    if out.fetch_to_local():
        print(out.get_data(0))

Functions whose total node count is at most ``threshold`` never leave the
process; they are compiled and evaluated locally with the same IR.
"""
from __future__ import annotations

import os
import threading
import uuid
from typing import Sequence

import numpy as np

from .codegen import InstrList, JIT, linearize, serialize_batch
from .expr import Expr, SymbolTable, node_count
from .protocol import (
    CloudFuncRequest, CloudQueryRequest, CloudSDRequest, ProtocolError, QType, Response, Status,
    TransportError,
)
from .services.net import Connection

__all__ = [
    "CloudConfig", "CloudFunc", "CloudSD", "CloudError", "ConfigError", "set_global_target",
    "global_config", "cloud_func", "apply", "fetch_to_local",
]


class ConfigError(RuntimeError):
    """No scheduler address was configured for a remote operation."""


class CloudError(RuntimeError):
    """A nonzero status from the cloud, or a transport failure (status None)."""

    def __init__(self, status: int | None, message: str):
        super().__init__(f"[status {status}] {message}" if status is not None else message)
        self.status = status
        self.message = message


def _threshold_from_env() -> int:
    raw = os.environ.get("SNC_THRESHOLD", "")
    return int(raw) if raw.strip() else 0


class CloudConfig:
    """Where to send work. Addresses are only resolved when first used.

    ``data_addr`` defaults to the task scheduler, which forwards data
    requests to its data scheduler.
    """

    def __init__(self, sched_addr: str | None = None, data_addr: str | None = None,
                 threshold: int | None = None):
        self.sched_addr = sched_addr or os.environ.get("SNC_SCHED_ADDR") or None
        self.data_addr = data_addr or os.environ.get("SNC_DATA_ADDR") or None
        self.threshold = _threshold_from_env() if threshold is None else int(threshold)
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        self._conns: dict[str, Connection] = {}
        self._lock = threading.Lock()

    def set_target(self, sched_addr: str, data_addr: str | None = None) -> None:
        self.close()
        self.sched_addr = sched_addr
        self.data_addr = data_addr

    def _conn(self, which: str) -> Connection:
        addr = self.sched_addr if which == "sched" else (self.data_addr or self.sched_addr)
        if not addr:
            raise ConfigError("no cloud target configured; call set_global_target() "
                              "or set SNC_SCHED_ADDR")
        with self._lock:
            conn = self._conns.get(which)
            if conn is None:
                conn = self._conns[which] = Connection(addr)
            return conn

    def request(self, which: str, msg) -> Response:
        try:
            return self._conn(which).request(msg)
        except (OSError, TransportError, ProtocolError) as exc:
            raise CloudError(None, f"transport failure talking to the {which} scheduler: {exc}") from exc

    def close(self) -> None:
        with self._lock:
            for conn in self._conns.values():
                conn.close()
            self._conns.clear()

    def __repr__(self):
        return (f"CloudConfig(sched_addr={self.sched_addr!r}, data_addr={self.data_addr!r}, "
                f"threshold={self.threshold})")


_GLOBAL: CloudConfig | None = None
_GLOBAL_LOCK = threading.Lock()


def global_config() -> CloudConfig:
    global _GLOBAL
    with _GLOBAL_LOCK:
        if _GLOBAL is None:
            _GLOBAL = CloudConfig()
        return _GLOBAL


def set_global_target(addr: str | None, data_addr: str | None = None,
                      threshold: int | None = None) -> CloudConfig:
    """Point handles created afterwards at ``addr``; ``None`` clears the target."""
    global _GLOBAL
    cfg = CloudConfig(addr, data_addr, threshold)
    if addr is None:
        cfg.sched_addr = None
        cfg.data_addr = data_addr
    with _GLOBAL_LOCK:
        old, _GLOBAL = _GLOBAL, cfg
    if old is not None:
        old.close()
    return cfg


def _unique_name(prefix: str) -> str:
    return f"{prefix}-{uuid.uuid4().hex}"


class CloudSD:
    """A named float64 array shared with the data scheduler."""

    def __init__(self, name: str | None = None, config: CloudConfig | None = None):
        self.name = name or _unique_name("sd")
        self.config = config or global_config()
        self._data: np.ndarray | None = None
        self.dirty = False
        self.remote = False
        self.last_error: CloudError | None = None

    def init(self, *values) -> "CloudSD":
        """``init(0.362, 0.556)`` or ``init([0.362, 0.556])``."""
        if len(values) == 1 and np.ndim(values[0]) > 0:
            values = values[0]
        self._data = np.array(values, dtype=np.float64).reshape(-1)
        self.dirty = True
        return self

    @property
    def data(self) -> np.ndarray | None:
        return self._data

    def get_data(self, i: int = 0) -> float:
        if self._data is None:
            raise LookupError(f"{self.name!r} has no local data; call fetch_to_local() first")
        return float(self._data[i])

    def push(self) -> None:
        if self._data is None:
            raise LookupError(f"{self.name!r} has no local data to push")
        resp = self.config.request("data", CloudSDRequest(self.name, self._data))
        if not resp.ok:
            raise CloudError(resp.status, resp.text)
        self.dirty = False
        self.remote = True

    def fetch_to_local(self) -> bool:
        """Fill the local cache from the cloud; False (cache untouched) on any failure."""
        if not self.remote and self._data is not None:
            # produced by a local-mode apply
            return True
        try:
            resp = self.config.request("data", CloudQueryRequest(QType.FETCH, self.name))
        except (CloudError, ConfigError) as exc:
            self.last_error = exc if isinstance(exc, CloudError) else CloudError(None, str(exc))
            return False
        if not resp.ok:
            self.last_error = CloudError(resp.status, resp.text)
            return False
        try:
            self._data = resp.array()
        except ProtocolError as exc:
            self.last_error = CloudError(None, str(exc))
            return False
        self.last_error = None
        self.dirty = False
        return True

    def _local_values(self) -> np.ndarray:
        if self._data is None and not self.fetch_to_local():
            raise CloudError(self.last_error.status, f"cannot read {self.name!r}: "
                                                      f"{self.last_error.message}")
        return self._data

    def __repr__(self):
        n = None if self._data is None else self._data.size
        return f"CloudSD({self.name!r}, local={n}, dirty={self.dirty}, remote={self.remote})"


class CloudFunc:
    """A function shipped to the cloud as SNC-IR.

    ``exprs`` may be one expression or a list; ``vec_len > 0`` builds the
    vectorized variant where every argument is an array of that length.
    """

    def __init__(self, args: Sequence, exprs: Expr | Sequence[Expr], *, vec_len: int = 0,
                 config: CloudConfig | None = None, name: str | None = None):
        self.config = config or global_config()
        self.args = SymbolTable(args)
        self.exprs = [exprs] if isinstance(exprs, Expr) else list(exprs)
        if not self.exprs:
            raise ValueError("CloudFunc needs at least one expression")
        self.vec_len = int(vec_len)
        self.irs: list[InstrList] = [linearize(e, self.args, self.vec_len) for e in self.exprs]
        self.name = name or _unique_name("fn")
        self.nodes = sum(node_count(e) for e in self.exprs)
        self.local = self.nodes <= self.config.threshold
        self.registered = False
        self._compiled = None
        if not self.local:
            self.register()

    def register(self) -> None:
        resp = self.config.request("sched", CloudFuncRequest(self.name, serialize_batch(self.irs)))
        if not resp.ok:
            raise CloudError(resp.status, resp.text)
        self.registered = True

    def _local_fn(self):
        if self._compiled is None:
            self._compiled = JIT().compile_ir(self.irs)
        return self._compiled

    def apply(self, out: CloudSD, *ins: CloudSD) -> CloudSD:
        if len(ins) == 1 and isinstance(ins[0], (list, tuple)):
            ins = tuple(ins[0])
        if self.local:
            values = [d._local_values() for d in ins]
            flat = np.concatenate(values) if values else np.empty(0)
            try:
                result = self._local_fn()(flat)
            except ValueError as exc:
                raise CloudError(Status.EVAL_FAULT, str(exc)) from exc
            out._data = np.atleast_1d(np.asarray(result, dtype=np.float64)).reshape(-1)
            out.dirty, out.remote = False, False
            return out
        for d in ins:
            if d.dirty or (not d.remote and d._data is not None):
                d.push()
        resp = self.config.request(
            "sched", CloudQueryRequest(QType.EVALUATE, self.name, out.name, [d.name for d in ins]))
        if not resp.ok:
            raise CloudError(resp.status, resp.text)
        out.remote, out.dirty, out._data = True, False, None
        return out

    __call__ = apply

    def __repr__(self):
        mode = "local" if self.local else "remote"
        return f"CloudFunc({self.name!r}, args={self.args.names}, exprs={len(self.exprs)}, {mode})"


def cloud_func(args, e, **kw) -> CloudFunc:
    return CloudFunc(args, e, **kw)


def apply(f: CloudFunc, out: CloudSD, ins: Sequence[CloudSD]) -> CloudSD:
    return f.apply(out, *ins)


def fetch_to_local(d: CloudSD) -> bool:
    return d.fetch_to_local()
