"""Task scheduler: function registry, FIFS task queue and PE dispatch.

Clients register IR with CloudFunc requests and submit evaluate queries.
Each query becomes a task in a FIFO queue; a single dispatcher hands the
queue head to the earliest-registered idle PE. PEs hold one task at a
time. A PE that drops its connection mid-task is removed and its task is
put back at the head of the queue once; a second loss answers status 4.
"""
from __future__ import annotations

import itertools
import logging
import select
import socket
import threading
import time
from collections import OrderedDict, deque
from dataclasses import dataclass, field

from ..codegen import IRError, deserialize_batch
from ..protocol import (
    CloudFuncRequest, CloudQueryRequest, CloudSDRequest, PEHello, ProtocolError, QType,
    Response, RType, Status, TransportError, decode, encode, frame_read, frame_write,
)
from .data import DataService
from .info import installed_libs, machine_info
from .net import Connection, error_response

log = logging.getLogger(__name__)

DEFAULT_PE_TIMEOUT = 30.0


class FuncStore:
    def __init__(self):
        self._items: dict[str, bytes] = {}
        self._lock = threading.Lock()

    def put(self, name: str, ir: bytes) -> None:
        with self._lock:
            self._items[name] = ir

    def get(self, name: str) -> bytes | None:
        return self._items.get(name)

    def __contains__(self, name):
        return name in self._items


@dataclass
class Task:
    seq: int
    func: str
    ir: bytes
    arg_names: tuple
    returned: str
    deadline: float
    retries: int = 0
    response: Response | None = None
    done: threading.Event = field(default_factory=threading.Event)

    def finish(self, status: int, message: bytes) -> None:
        self.response = Response(RType.QUERY, int(status), self.returned, message)
        self.done.set()


@dataclass
class PESession:
    pe_id: str
    address: str
    conn: socket.socket
    busy: bool = False
    task: Task | None = None
    alive: bool = True
    wake: threading.Event = field(default_factory=threading.Event)


@dataclass(frozen=True)
class Event:
    kind: str  # submit | dispatch | complete | requeue | fail | expire
    task: int
    pe: str
    t_ns: int


class TaskScheduler:
    role = "sched"

    def __init__(self, data_addr: str | None = None, *, single: bool = False,
                 pe_timeout: float = DEFAULT_PE_TIMEOUT, advertised_data_addr: str | None = None):
        if not single and data_addr is None:
            raise ValueError("a data scheduler address is required unless single=True")
        self.single = single
        self.data = DataService() if single else None
        self.data_addr = data_addr
        self.advertised_data_addr = advertised_data_addr
        self.pe_timeout = pe_timeout
        self.funcs = FuncStore()
        self._queue: deque[Task] = deque()
        self._pes: OrderedDict[str, PESession] = OrderedDict()
        self._cond = threading.Condition()
        self._seq = itertools.count()
        self._pe_ids = itertools.count()
        self.events: list[Event] = []
        self.violations = 0
        self._stopped = False
        self._proxy = None if single else Connection(data_addr)
        self._dispatcher = threading.Thread(target=self._dispatch_loop, name="dispatch", daemon=True)
        self._dispatcher.start()

    # -- client-facing handlers --------------------------------------------

    def handle(self, msg, conn=None):
        if isinstance(msg, CloudFuncRequest):
            return self.sched_handle_cloudfunc(msg)
        if isinstance(msg, CloudQueryRequest):
            return self.sched_handle_query(msg)
        if isinstance(msg, CloudSDRequest):
            return self._data_request(msg)
        if isinstance(msg, PEHello):
            self.serve_pe(msg, conn)
            return None
        return error_response(msg, Status.MALFORMED, f"unexpected {type(msg).__name__}")

    def sched_handle_cloudfunc(self, req: CloudFuncRequest) -> Response:
        try:
            deserialize_batch(req.ir)
        except IRError as exc:
            return Response(RType.FUNC, Status.COMPILE_FAILURE, req.name, str(exc).encode())
        self.funcs.put(req.name, bytes(req.ir))
        return Response(RType.FUNC, Status.OK, req.name, b"OK")

    def sched_handle_query(self, req: CloudQueryRequest) -> Response:
        if req.qtype == QType.EVALUATE:
            task = self.submit(req.name, req.arg_names, req.returned_name)
            if task.response is None:
                task.done.wait()
            return task.response
        if req.qtype == QType.FETCH:
            return self._data_request(req)
        if req.qtype == QType.MACHINE_INFO:
            with self._cond:
                pes, queued = len(self._pes), len(self._queue)
            return Response(RType.QUERY, Status.OK, req.name,
                            machine_info(pes=pes, queued=queued).encode())
        return Response(RType.QUERY, Status.OK, req.name, installed_libs().encode())

    def _data_request(self, msg) -> Response:
        if self.single:
            return self.data.handle(msg)
        try:
            return self._proxy.request(msg)
        except (OSError, TransportError, ProtocolError) as exc:
            return error_response(msg, Status.MALFORMED, f"data scheduler unreachable: {exc}",
                                  getattr(msg, "name", ""))

    # -- queue -----------------------------------------------------------------

    def submit(self, func: str, arg_names, returned: str) -> Task:
        ir = self.funcs.get(func)
        with self._cond:
            task = Task(next(self._seq), func, ir or b"", tuple(arg_names), returned,
                        time.monotonic() + self.pe_timeout)
            if ir is None:
                task.finish(Status.UNKNOWN_NAME, f"no function named {func!r}".encode())
                return task
            self._queue.append(task)
            self._log("submit", task, "")
            self._cond.notify_all()
        return task

    def _log(self, kind: str, task: Task, pe: str) -> None:
        self.events.append(Event(kind, task.seq, pe, time.monotonic_ns()))

    def _dispatch_loop(self):
        with self._cond:
            while not self._stopped:
                now = time.monotonic()
                for task in [t for t in self._queue if t.deadline <= now]:
                    self._queue.remove(task)
                    self._log("expire", task, "")
                    task.finish(Status.NO_PE, f"no PE available within {self.pe_timeout:g} s".encode())
                while self._queue:
                    pe = next((p for p in self._pes.values() if p.alive and not p.busy), None)
                    if pe is None:
                        break
                    task = self._queue.popleft()
                    if pe.busy or pe.task is not None:
                        self.violations += 1
                    pe.busy, pe.task = True, task
                    self._log("dispatch", task, pe.pe_id)
                    pe.wake.set()
                wait = 0.5
                if self._queue:
                    wait = max(0.0, min(wait, min(t.deadline for t in self._queue) - now))
                self._cond.wait(wait)

    def in_flight(self) -> dict[str, int]:
        with self._cond:
            return {p.pe_id: int(p.task is not None) for p in self._pes.values()}

    def pe_count(self) -> int:
        with self._cond:
            return len(self._pes)

    def wait_for_pes(self, n: int, timeout: float = 10.0) -> bool:
        end = time.monotonic() + timeout
        with self._cond:
            while len(self._pes) < n:
                left = end - time.monotonic()
                if left <= 0:
                    return False
                self._cond.wait(left)
        return True

    # -- PE sessions -------------------------------------------------------------

    def serve_pe(self, hello: PEHello, conn: socket.socket) -> None:
        """Run one registered PE until its connection drops (called on the PE's handler thread)."""
        try:
            peer = "%s:%s" % conn.getpeername()[:2]
        except OSError:
            peer = "?"
        with self._cond:
            pe = PESession(f"pe{next(self._pe_ids)}-{hello.name}", peer, conn)
            self._pes[pe.pe_id] = pe
            self._cond.notify_all()
        data_addr = self.advertised_data_addr or self.data_addr or ""
        try:
            frame_write(conn, encode(Response(RType.QUERY, Status.OK, pe.pe_id,
                                              f"data={data_addr}".encode())))
        except OSError:
            self._lose_pe(pe)
            return
        log.info("PE %s registered from %s", pe.pe_id, peer)
        while not self._stopped:
            if not pe.wake.wait(0.1):
                if _peer_closed(conn):
                    self._lose_pe(pe)
                    return
                continue
            pe.wake.clear()
            task = pe.task
            if task is None:
                continue
            try:
                frame_write(conn, encode(CloudFuncRequest(task.func, task.ir)))
                frame_write(conn, encode(CloudQueryRequest(QType.EVALUATE, task.func, task.returned,
                                                           task.arg_names)))
                raw = frame_read(conn)
                if raw is None:
                    raise TransportError("PE closed its connection")
                resp = decode(raw, expected="response")
            except (OSError, TransportError, ProtocolError) as exc:
                log.warning("lost PE %s during task %d: %s", pe.pe_id, task.seq, exc)
                self._lose_pe(pe)
                return
            with self._cond:
                pe.busy, pe.task = False, None
                self._log("complete", task, pe.pe_id)
                task.finish(resp.status, resp.message)
                self._cond.notify_all()

    def _lose_pe(self, pe: PESession) -> None:
        with self._cond:
            pe.alive = False
            self._pes.pop(pe.pe_id, None)
            task, pe.task, pe.busy = pe.task, None, False
            if task is not None:
                if task.retries == 0:
                    task.retries += 1
                    task.deadline = time.monotonic() + self.pe_timeout
                    self._queue.appendleft(task)
                    self._log("requeue", task, pe.pe_id)
                else:
                    self._log("fail", task, pe.pe_id)
                    task.finish(Status.EVAL_FAULT, b"PE lost twice while running this task")
            self._cond.notify_all()
        try:
            pe.conn.close()
        except OSError:
            pass

    def stop(self):
        with self._cond:
            self._stopped = True
            self._cond.notify_all()
            for pe in self._pes.values():
                pe.wake.set()
        if self._proxy is not None:
            self._proxy.close()


def _peer_closed(conn: socket.socket) -> bool:
    try:
        readable, _, _ = select.select([conn], [], [], 0)
        if not readable:
            return False
        return conn.recv(1, socket.MSG_PEEK) == b""
    except (OSError, ValueError):
        return True
