"""Task scheduler, data scheduler and PE worker, plus an in-process cluster helper."""
from __future__ import annotations

import argparse
import logging
import signal
import threading

from .data import DataService, DataStore
from .net import (
    DEFAULT_DATA_PORT, DEFAULT_SCHED_PORT, Connection, FrameServer, env_addr, parse_addr,
)
from .pe import PEWorker
from .scheduler import DEFAULT_PE_TIMEOUT, FuncStore, TaskScheduler

__all__ = [
    "Cluster", "Connection", "DataService", "DataStore", "FrameServer", "FuncStore",
    "PEWorker", "TaskScheduler", "DEFAULT_SCHED_PORT", "DEFAULT_DATA_PORT",
]


class Cluster:
    """Data scheduler, task scheduler and ``n_pes`` workers on loopback ports.

    With ``single=True`` the task scheduler also hosts the data store.
    """

    def __init__(self, n_pes: int = 1, *, single: bool = False, host: str = "127.0.0.1",
                 pe_timeout: float = DEFAULT_PE_TIMEOUT, task_delay: float = 0.0,
                 backend: str = "auto"):
        self.host = host
        self.single = single
        self.data_server: FrameServer | None = None
        if not single:
            self.data_server = FrameServer((host, 0), DataService()).start()
        data_addr = self.data_server.address if self.data_server else None
        self.scheduler = TaskScheduler(data_addr, single=single, pe_timeout=pe_timeout)
        self.sched_server = FrameServer((host, 0), self.scheduler).start()
        self.task_delay = task_delay
        self.backend = backend
        self.pes: list[PEWorker] = []
        for _ in range(n_pes):
            self.add_pe()
        if not self.scheduler.wait_for_pes(n_pes):
            raise RuntimeError("PE workers did not register")

    @property
    def sched_addr(self) -> str:
        return self.sched_server.address

    @property
    def data_addr(self) -> str:
        return self.data_server.address if self.data_server else self.sched_addr

    @property
    def data_store(self) -> DataStore:
        service = self.scheduler.data if self.single else self.data_server.service
        return service.store

    def add_pe(self, **kw) -> PEWorker:
        kw.setdefault("task_delay", self.task_delay)
        kw.setdefault("backend", self.backend)
        pe = PEWorker(self.sched_addr, name=f"pe{len(self.pes)}", **kw).start()
        self.pes.append(pe)
        return pe

    def close(self):
        for pe in self.pes:
            pe.stop()
        self.sched_server.stop()
        if self.data_server:
            self.data_server.stop()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# -- daemons ------------------------------------------------------------------------

def _logging(verbose: bool):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _serve_until_signal(server: FrameServer, label: str):
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    server.start()
    print(f"{label} listening on {server.address}", flush=True)
    stop.wait()
    server.stop()


def sched_main(argv=None):
    p = argparse.ArgumentParser(prog="snc-sched", description="SNC task scheduler")
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=DEFAULT_SCHED_PORT)
    p.add_argument("--data-addr", default=env_addr("SNC_DATA_ADDR"),
                   help="data scheduler host:port (env SNC_DATA_ADDR)")
    p.add_argument("--single", action="store_true", help="also host the data store")
    p.add_argument("--pe-timeout", type=float, default=DEFAULT_PE_TIMEOUT,
                   help="seconds a task may wait for an idle PE")
    p.add_argument("-v", "--verbose", action="store_true")
    a = p.parse_args(argv)
    _logging(a.verbose)
    if not a.single and not a.data_addr:
        p.error("--data-addr is required without --single")
    sched = TaskScheduler(a.data_addr, single=a.single, pe_timeout=a.pe_timeout)
    _serve_until_signal(FrameServer((a.host, a.port), sched), "task scheduler")


def data_main(argv=None):
    p = argparse.ArgumentParser(prog="snc-data", description="SNC data scheduler")
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=DEFAULT_DATA_PORT)
    p.add_argument("-v", "--verbose", action="store_true")
    a = p.parse_args(argv)
    _logging(a.verbose)
    _serve_until_signal(FrameServer((a.host, a.port), DataService()), "data scheduler")


def pe_main(argv=None):
    p = argparse.ArgumentParser(prog="snc-pe", description="SNC processing element")
    p.add_argument("--sched", default=env_addr("SNC_SCHED_ADDR", f"127.0.0.1:{DEFAULT_SCHED_PORT}"),
                   help="task scheduler host:port (env SNC_SCHED_ADDR)")
    p.add_argument("--data-addr", default=None, help="override the advertised data scheduler")
    p.add_argument("--name", default=None)
    p.add_argument("--backend", choices=("auto", "llvm", "interp"), default="auto")
    p.add_argument("--task-delay", type=float, default=0.0, help=argparse.SUPPRESS)
    p.add_argument("-v", "--verbose", action="store_true")
    a = p.parse_args(argv)
    _logging(a.verbose)
    pe = PEWorker(parse_addr(a.sched), name=a.name, data_addr=a.data_addr,
                  backend=a.backend, task_delay=a.task_delay)
    pe.pe_register()
    print(f"PE {pe.pe_id} registered with {a.sched}", flush=True)
    pe.serve()
