"""PE worker: registers with the task scheduler and runs one task at a time."""
from __future__ import annotations

import logging
import os
import socket
import threading
import time
from collections import OrderedDict

import numpy as np

from ..codegen import BackendError, IRError, JIT, deserialize_batch
from ..protocol import (
    CloudFuncRequest, CloudQueryRequest, CloudSDRequest, PEHello, ProtocolError, QType,
    Response, RType, Status, TransportError, decode, encode, frame_read, frame_write,
)
from .info import machine_info, parse_kv
from .net import Connection, parse_addr

log = logging.getLogger(__name__)


class TaskFailure(Exception):
    def __init__(self, status: Status, message: str):
        super().__init__(message)
        self.status = status


class PEWorker:
    """One processing element.

    ``task_delay`` sleeps before each evaluation; tests use it to kill a
    worker while it is provably mid-task.
    """

    def __init__(self, sched_addr, *, name: str | None = None, data_addr=None,
                 backend: str = "auto", cache_size: int = 64, task_delay: float = 0.0):
        self.sched_addr = parse_addr(sched_addr)
        self.name = name or f"{socket.gethostname()}-{os.getpid()}"
        self.data_addr = data_addr
        self.jit = JIT(backend)
        self.task_delay = task_delay
        self.pe_id = ""
        self.tasks_run = 0
        self._cache: OrderedDict[bytes, object] = OrderedDict()
        self._cache_size = cache_size
        self._sock: socket.socket | None = None
        self._data: Connection | None = None
        self._thread: threading.Thread | None = None
        self._stopping = False
        self.registered = threading.Event()

    # -- registration ----------------------------------------------------------

    def pe_register(self) -> None:
        s = socket.create_connection(self.sched_addr)
        s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        frame_write(s, encode(PEHello(self.name, machine_info(backend=self.jit.backend))))
        raw = frame_read(s)
        if raw is None:
            s.close()
            raise TransportError("scheduler closed the connection during registration")
        resp = decode(raw, expected="response")
        if not resp.ok:
            s.close()
            raise TransportError(f"registration refused: {resp.text}")
        self.pe_id = resp.name
        advertised = parse_kv(resp.text).get("data", "")
        # an empty data address means the scheduler co-hosts the data store
        target = self.data_addr or advertised or self.sched_addr
        self._data = Connection(target)
        self._sock = s
        self.registered.set()
        log.info("registered as %s; data at %s", self.pe_id, target)

    # -- task execution --------------------------------------------------------

    def _compiled(self, ir: bytes):
        fn = self._cache.get(ir)
        if fn is not None:
            self._cache.move_to_end(ir)
            return fn
        try:
            fn = self.jit.compile_ir(deserialize_batch(ir))
        except (IRError, BackendError) as exc:
            raise TaskFailure(Status.COMPILE_FAILURE, f"compile failed: {exc}") from exc
        self._cache[ir] = fn
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return fn

    def _fetch(self, name: str) -> np.ndarray:
        resp = self._data.request(CloudQueryRequest(QType.FETCH, name))
        if resp.status == Status.UNKNOWN_NAME:
            raise TaskFailure(Status.UNKNOWN_NAME, f"no data named {name!r}")
        if not resp.ok:
            raise TaskFailure(Status.EVAL_FAULT, f"fetching {name!r} failed: {resp.text}")
        return resp.array()

    def pe_run_task(self, ir: bytes, arg_names, returned: str) -> np.ndarray:
        fn = self._compiled(ir)
        parts = [self._fetch(n) for n in arg_names]
        args = np.concatenate(parts) if parts else np.empty(0)
        if self.task_delay:
            time.sleep(self.task_delay)
        try:
            result = np.atleast_1d(np.asarray(fn(args), dtype=np.float64)).reshape(-1)
        except ValueError as exc:
            raise TaskFailure(Status.EVAL_FAULT, f"evaluation failed: {exc}") from exc
        resp = self._data.request(CloudSDRequest(returned, result))
        if not resp.ok:
            raise TaskFailure(Status.EVAL_FAULT, f"storing {returned!r} failed: {resp.text}")
        return result

    def _serve_one(self, func: CloudFuncRequest, query: CloudQueryRequest) -> Response:
        try:
            self.pe_run_task(func.ir, query.arg_names, query.returned_name)
        except TaskFailure as exc:
            return Response(RType.QUERY, int(exc.status), query.returned_name, str(exc).encode())
        except (OSError, TransportError, ProtocolError) as exc:
            return Response(RType.QUERY, Status.EVAL_FAULT, query.returned_name,
                            f"data scheduler unreachable: {exc}".encode())
        self.tasks_run += 1
        return Response(RType.QUERY, Status.OK, query.returned_name, query.returned_name.encode())

    def serve(self) -> None:
        """Blocking task loop; returns when the scheduler connection ends."""
        if self._sock is None:
            self.pe_register()
        s = self._sock
        func = None
        try:
            while not self._stopping:
                raw = frame_read(s)
                if raw is None:
                    break
                msg = decode(raw, expected="request")
                if isinstance(msg, CloudFuncRequest):
                    func = msg
                    continue
                if isinstance(msg, CloudQueryRequest) and msg.qtype == QType.EVALUATE and func:
                    resp = self._serve_one(func, msg)
                    func = None
                else:
                    resp = Response(RType.QUERY, Status.MALFORMED, "", b"unexpected message")
                frame_write(s, encode(resp))
        except (OSError, TransportError, ProtocolError) as exc:
            if not self._stopping:
                log.warning("scheduler connection lost: %s", exc)
        finally:
            self._close()

    def start(self) -> "PEWorker":
        self.pe_register()
        self._thread = threading.Thread(target=self.serve, name=f"pe-{self.name}", daemon=True)
        self._thread.start()
        return self

    def _close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        if self._data is not None:
            self._data.close()

    def kill(self) -> None:
        """Drop the scheduler connection abruptly, as a crashed node would."""
        self._stopping = True
        if self._sock is not None:
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass

    def stop(self) -> None:
        self.kill()
        if self._thread is not None:
            self._thread.join(timeout=5)
