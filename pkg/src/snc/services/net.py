"""TCP plumbing shared by the schedulers, workers and the client SDK."""
from __future__ import annotations

import logging
import os
import socket
import socketserver
import threading

from ..protocol import (
    CloudFuncRequest, CloudSDRequest, ProtocolError, Response,
    RType, Status, TransportError, decode, encode, frame_read, frame_write,
)

log = logging.getLogger(__name__)

DEFAULT_SCHED_PORT = 7701
DEFAULT_DATA_PORT = 7702


def parse_addr(addr, default_port: int = DEFAULT_SCHED_PORT) -> tuple[str, int]:
    if isinstance(addr, tuple):
        return addr[0], int(addr[1])
    host, sep, port = str(addr).rpartition(":")
    if not sep:
        return str(addr), default_port
    return host or "127.0.0.1", int(port)


def format_addr(addr: tuple[str, int]) -> str:
    return f"{addr[0]}:{addr[1]}"


def env_addr(var: str, fallback=None):
    value = os.environ.get(var)
    return value if value else fallback


def rtype_for(msg) -> int:
    if isinstance(msg, CloudSDRequest):
        return RType.SD
    if isinstance(msg, CloudFuncRequest):
        return RType.FUNC
    return RType.QUERY


def error_response(msg, status: Status, text: str, name: str = "") -> Response:
    return Response(rtype_for(msg), int(status), name, text.encode("utf-8"))


class Connection:
    """A persistent request/response connection; one request in flight at a time."""

    def __init__(self, addr, timeout: float | None = None):
        self.addr = parse_addr(addr)
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._lock = threading.Lock()

    def _connect(self) -> socket.socket:
        if self._sock is None:
            s = socket.create_connection(self.addr, timeout=self.timeout)
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            s.settimeout(self.timeout)
            self._sock = s
        return self._sock

    def request(self, msg) -> Response:
        with self._lock:
            try:
                s = self._connect()
                frame_write(s, encode(msg))
                raw = frame_read(s)
            except (OSError, TransportError):
                self._drop()
                raise
            if raw is None:
                self._drop()
                raise TransportError(f"{format_addr(self.addr)} closed the connection")
            resp = decode(raw, expected="response")
            return resp

    def _drop(self):
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def close(self):
        with self._lock:
            self._drop()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class _Handler(socketserver.BaseRequestHandler):
    def setup(self):
        self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def handle(self):
        service = self.server.service
        while True:
            try:
                raw = frame_read(self.request)
            except (OSError, TransportError) as exc:
                log.debug("client %s dropped: %s", self.client_address, exc)
                return
            except ProtocolError as exc:
                self._reply(Response(RType.QUERY, Status.MALFORMED, "", str(exc).encode()))
                return
            if raw is None:
                return
            try:
                msg = decode(raw, expected="request")
            except ProtocolError as exc:
                rtype = {0x44: RType.SD, 0x46: RType.FUNC}.get(raw[0], RType.QUERY)
                self._reply(Response(rtype, Status.MALFORMED, "", str(exc).encode()))
                continue
            resp = service.handle(msg, self.request)
            if resp is None:
                # the service took the connection over (worker registration)
                return
            if not self._reply(resp):
                return

    def _reply(self, resp: Response) -> bool:
        try:
            frame_write(self.request, encode(resp))
            return True
        except OSError:
            return False


class FrameServer(socketserver.ThreadingTCPServer):
    """Threaded TCP server dispatching decoded frames to ``service.handle``."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr, service):
        self.service = service
        super().__init__(parse_addr(addr), _Handler)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return format_addr((host, port))

    def start(self) -> "FrameServer":
        self._thread = threading.Thread(target=self.serve_forever, kwargs={"poll_interval": 0.05},
                                        name=f"serve-{self.address}", daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.shutdown()
        self.server_close()
        stop = getattr(self.service, "stop", None)
        if stop:
            stop()
