"""Wire messages and stream framing.

All integers are big-endian uint32 unless noted, floats are big-endian
IEEE-754 binary64, strings are UTF-8 preceded by their own length field.

    CloudSD    'D' name_len data_type data_len name data
    CloudFunc  'F' name_len ir_len name ir
    CloudQuery 'Q' qtype name_len ret_len name ret_name arg_count (arg_len arg)*
    Response   'R' rtype status name_len msg_len name message
    PEHello    'P' name_len info_len name info        (worker registration)

On a stream every message is preceded by a uint32 frame length.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Union

import numpy as np

__all__ = [
    "ProtocolError", "TransportError", "ErrorCode", "Status", "QType", "RType",
    "CloudSDRequest", "CloudFuncRequest", "CloudQueryRequest", "Response", "PEHello",
    "encode", "decode", "frame_write", "frame_read", "frame", "iter_frames", "describe",
]

MAX_NAME = 2 ** 16
MAX_PAYLOAD = 2 ** 31 - 1
DATA_F64 = 0

_U32 = struct.Struct(">I")


class ErrorCode(IntEnum):
    TRUNCATED = 1
    LENGTH_OVERFLOW = 2
    UNKNOWN_MAGIC = 3
    UNKNOWN_QTYPE = 4
    UNKNOWN_RTYPE = 5
    EMPTY_FRAME = 6
    TRAILING_BYTES = 7
    INVALID_FIELD = 8
    NAME_TOO_LONG = 9
    PAYLOAD_TOO_LONG = 10


class ProtocolError(ValueError):
    def __init__(self, code: ErrorCode, message: str):
        super().__init__(f"{code.name}: {message}")
        self.code = code


class TransportError(ConnectionError):
    """The peer went away in the middle of a frame."""


class Status(IntEnum):
    OK = 0
    UNKNOWN_NAME = 1
    NO_PE = 2
    COMPILE_FAILURE = 3
    EVAL_FAULT = 4
    MALFORMED = 5


class QType(IntEnum):
    FETCH = 0
    EVALUATE = 1
    MACHINE_INFO = 2
    INSTALLED_LIBS = 3


class RType(IntEnum):
    SD = 1
    FUNC = 2
    QUERY = 3


def _f64(values) -> np.ndarray:
    a = np.array(values, dtype=np.float64).reshape(-1)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class CloudSDRequest:
    name: str
    payload: np.ndarray = field(default_factory=lambda: _f64(()))
    data_type: int = DATA_F64

    def __post_init__(self):
        object.__setattr__(self, "payload", _f64(self.payload))

    def __eq__(self, other):
        return (isinstance(other, CloudSDRequest) and self.name == other.name
                and self.data_type == other.data_type
                and self.payload.tobytes() == other.payload.tobytes())

    __hash__ = None


@dataclass(frozen=True)
class CloudFuncRequest:
    name: str
    ir: bytes


@dataclass(frozen=True)
class CloudQueryRequest:
    qtype: int
    name: str
    returned_name: str = ""
    arg_names: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "arg_names", tuple(self.arg_names))


@dataclass(frozen=True)
class Response:
    rtype: int
    status: int
    name: str
    message: bytes = b""

    @property
    def ok(self) -> bool:
        return self.status == Status.OK

    @property
    def text(self) -> str:
        return self.message.decode("utf-8", errors="replace")

    def array(self) -> np.ndarray:
        if len(self.message) % 8:
            raise ProtocolError(ErrorCode.INVALID_FIELD, "message is not a float64 array")
        return np.frombuffer(self.message, dtype=">f8").astype(np.float64)


@dataclass(frozen=True)
class PEHello:
    name: str
    info: str = ""


Message = Union[CloudSDRequest, CloudFuncRequest, CloudQueryRequest, Response, PEHello]
REQUESTS = (CloudSDRequest, CloudFuncRequest, CloudQueryRequest)


# -- encoding ----------------------------------------------------------------

def _name_bytes(name: str, what: str = "name", allow_empty: bool = False) -> bytes:
    b = name.encode("utf-8")
    if not b and not allow_empty:
        raise ProtocolError(ErrorCode.INVALID_FIELD, f"{what} must be nonempty")
    if len(b) > MAX_NAME:
        raise ProtocolError(ErrorCode.NAME_TOO_LONG, f"{what} is {len(b)} bytes (max {MAX_NAME})")
    return b


def _payload_bytes(b: bytes, what: str) -> bytes:
    if len(b) > MAX_PAYLOAD:
        raise ProtocolError(ErrorCode.PAYLOAD_TOO_LONG, f"{what} is {len(b)} bytes")
    return b


def encode(msg: Message) -> bytes:
    if isinstance(msg, CloudSDRequest):
        name = _name_bytes(msg.name)
        data = _payload_bytes(msg.payload.astype(">f8").tobytes(), "data")
        return b"D" + struct.pack(">III", len(name), msg.data_type, len(data)) + name + data
    if isinstance(msg, CloudFuncRequest):
        name = _name_bytes(msg.name)
        ir = _payload_bytes(bytes(msg.ir), "IR")
        return b"F" + struct.pack(">II", len(name), len(ir)) + name + ir
    if isinstance(msg, CloudQueryRequest):
        if msg.qtype not in QType.__members__.values():
            raise ProtocolError(ErrorCode.UNKNOWN_QTYPE, f"qtype {msg.qtype}")
        name = _name_bytes(msg.name, allow_empty=msg.qtype in (QType.MACHINE_INFO, QType.INSTALLED_LIBS))
        ret = _name_bytes(msg.returned_name, "returned name", allow_empty=msg.qtype != QType.EVALUATE)
        parts = [b"Q", struct.pack(">III", msg.qtype, len(name), len(ret)), name, ret,
                 _U32.pack(len(msg.arg_names))]
        for a in msg.arg_names:
            ab = _name_bytes(a, "argument name")
            parts += [_U32.pack(len(ab)), ab]
        return b"".join(parts)
    if isinstance(msg, Response):
        if msg.rtype not in RType.__members__.values():
            raise ProtocolError(ErrorCode.UNKNOWN_RTYPE, f"rtype {msg.rtype}")
        name = _name_bytes(msg.name, allow_empty=True)
        body = _payload_bytes(bytes(msg.message), "message")
        return b"R" + struct.pack(">IIII", msg.rtype, msg.status, len(name), len(body)) + name + body
    if isinstance(msg, PEHello):
        name = _name_bytes(msg.name)
        info = _payload_bytes(msg.info.encode("utf-8"), "info")
        return b"P" + struct.pack(">II", len(name), len(info)) + name + info
    raise TypeError(f"cannot encode {type(msg).__name__}")


# -- decoding ----------------------------------------------------------------

class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def u32(self, what: str) -> int:
        if len(self.data) - self.pos < 4:
            raise ProtocolError(ErrorCode.TRUNCATED, f"frame ends inside {what}")
        (v,) = _U32.unpack_from(self.data, self.pos)
        self.pos += 4
        return v

    def take(self, n: int, what: str, limit: int = MAX_PAYLOAD) -> bytes:
        if n > limit:
            raise ProtocolError(ErrorCode.LENGTH_OVERFLOW, f"{what} length {n} exceeds {limit}")
        if len(self.data) - self.pos < n:
            raise ProtocolError(ErrorCode.TRUNCATED,
                                f"{what} declares {n} bytes, {len(self.data) - self.pos} remain")
        b = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return b

    def text(self, n: int, what: str) -> str:
        b = self.take(n, what, MAX_NAME)
        try:
            return b.decode("utf-8")
        except UnicodeDecodeError:
            raise ProtocolError(ErrorCode.INVALID_FIELD, f"{what} is not valid UTF-8") from None

    def finish(self):
        if self.pos != len(self.data):
            raise ProtocolError(ErrorCode.TRAILING_BYTES,
                                f"{len(self.data) - self.pos} bytes after message end")


def decode(data: bytes, expected: str = "any") -> Message:
    """Decode one complete message. ``expected`` is 'request', 'response' or 'any'."""
    if not data:
        raise ProtocolError(ErrorCode.TRUNCATED, "empty message")
    magic = bytes(data[:1])
    allowed = {"request": b"DFQP", "response": b"R", "any": b"DFQRP"}[expected]
    if magic not in (b"D", b"F", b"Q", b"R", b"P") or magic not in allowed:
        raise ProtocolError(ErrorCode.UNKNOWN_MAGIC, f"unknown magic byte 0x{data[0]:02X}")
    r = _Reader(data)
    r.pos = 1
    if magic == b"D":
        name_len = r.u32("name length")
        data_type = r.u32("data type")
        data_len = r.u32("data length")
        name = r.text(name_len, "name")
        if data_type != DATA_F64:
            raise ProtocolError(ErrorCode.INVALID_FIELD, f"unsupported data type {data_type}")
        if data_len % 8:
            raise ProtocolError(ErrorCode.LENGTH_OVERFLOW, f"data length {data_len} is not a multiple of 8")
        raw = r.take(data_len, "data")
        r.finish()
        if not name:
            raise ProtocolError(ErrorCode.INVALID_FIELD, "empty name")
        return CloudSDRequest(name, np.frombuffer(raw, dtype=">f8"), data_type)
    if magic == b"F":
        name_len = r.u32("name length")
        ir_len = r.u32("IR length")
        name = r.text(name_len, "name")
        ir = r.take(ir_len, "IR")
        r.finish()
        if not name:
            raise ProtocolError(ErrorCode.INVALID_FIELD, "empty name")
        return CloudFuncRequest(name, ir)
    if magic == b"Q":
        qtype = r.u32("query type")
        if qtype not in QType.__members__.values():
            raise ProtocolError(ErrorCode.UNKNOWN_QTYPE, f"unknown query type {qtype}")
        name_len = r.u32("name length")
        ret_len = r.u32("returned name length")
        name = r.text(name_len, "name")
        ret = r.text(ret_len, "returned name")
        count = r.u32("argument count")
        if count > (len(r.data) - r.pos) // 4:
            raise ProtocolError(ErrorCode.TRUNCATED, f"{count} arguments cannot fit in frame")
        args = tuple(r.text(r.u32("argument length"), "argument name") for _ in range(count))
        r.finish()
        if qtype == QType.EVALUATE and not ret:
            raise ProtocolError(ErrorCode.INVALID_FIELD, "evaluate query needs a returned name")
        return CloudQueryRequest(qtype, name, ret, args)
    if magic == b"R":
        rtype = r.u32("response type")
        if rtype not in RType.__members__.values():
            raise ProtocolError(ErrorCode.UNKNOWN_RTYPE, f"unknown response type {rtype}")
        status = r.u32("status")
        name_len = r.u32("name length")
        msg_len = r.u32("message length")
        name = r.text(name_len, "name")
        msg = r.take(msg_len, "message")
        r.finish()
        return Response(rtype, status, name, msg)
    name_len = r.u32("name length")
    info_len = r.u32("info length")
    name = r.text(name_len, "name")
    info = r.take(info_len, "info").decode("utf-8", errors="replace")
    r.finish()
    return PEHello(name, info)


# -- framing -----------------------------------------------------------------

def frame(payload: bytes) -> bytes:
    if not payload:
        raise ProtocolError(ErrorCode.EMPTY_FRAME, "zero-length frame")
    return _U32.pack(len(payload)) + payload


def frame_write(conn, payload: bytes) -> None:
    data = frame(payload)
    if hasattr(conn, "sendall"):
        conn.sendall(data)
    else:
        conn.write(data)
        if hasattr(conn, "flush"):
            conn.flush()


def _read_exact(conn, n: int) -> bytes:
    buf = bytearray()
    recv = conn.recv if hasattr(conn, "recv") else conn.read
    while len(buf) < n:
        chunk = recv(min(n - len(buf), 1 << 20))
        if not chunk:
            break
        buf += chunk
    return bytes(buf)


def frame_read(conn) -> bytes | None:
    """Read one frame's payload; ``None`` on a clean close at a frame boundary."""
    head = _read_exact(conn, 4)
    if not head:
        return None
    if len(head) < 4:
        raise TransportError("connection closed inside frame header")
    (n,) = _U32.unpack(head)
    if n == 0:
        raise ProtocolError(ErrorCode.EMPTY_FRAME, "zero-length frame")
    if n > MAX_PAYLOAD + 64 + 4 * MAX_NAME:
        raise ProtocolError(ErrorCode.LENGTH_OVERFLOW, f"frame length {n} too large")
    body = _read_exact(conn, n)
    if len(body) < n:
        raise TransportError(f"connection closed after {len(body)} of {n} frame bytes")
    return body


def iter_frames(data: bytes):
    """Split a byte string holding back-to-back frames (e.g. a capture file)."""
    pos = 0
    while pos < len(data):
        if len(data) - pos < 4:
            raise ProtocolError(ErrorCode.TRUNCATED, "dangling frame header")
        (n,) = _U32.unpack_from(data, pos)
        if n == 0:
            raise ProtocolError(ErrorCode.EMPTY_FRAME, f"zero-length frame at offset {pos}")
        if len(data) - pos - 4 < n:
            raise ProtocolError(ErrorCode.TRUNCATED, f"frame at offset {pos} declares {n} bytes")
        yield pos, data[pos + 4:pos + 4 + n]
        pos += 4 + n


def describe(msg: Message) -> list[str]:
    """Human-readable field list for one decoded message."""
    if isinstance(msg, CloudSDRequest):
        vals = ", ".join(repr(float(v)) for v in msg.payload[:8])
        more = " ..." if msg.payload.size > 8 else ""
        return ["CloudSD request", f"  name      = {msg.name!r}", f"  data_type = {msg.data_type}",
                f"  data      = [{vals}{more}] ({msg.payload.size} values)"]
    if isinstance(msg, CloudFuncRequest):
        return ["CloudFunc request", f"  name = {msg.name!r}", f"  ir   = {len(msg.ir)} bytes"]
    if isinstance(msg, CloudQueryRequest):
        q = QType(msg.qtype).name
        return ["CloudQuery request", f"  qtype         = {msg.qtype} ({q})",
                f"  name          = {msg.name!r}", f"  returned_name = {msg.returned_name!r}",
                f"  args          = {list(msg.arg_names)!r}"]
    if isinstance(msg, Response):
        try:
            st = Status(msg.status).name
        except ValueError:
            st = "?"
        return ["Response", f"  rtype   = {msg.rtype} ({RType(msg.rtype).name})",
                f"  status  = {msg.status} ({st})", f"  name    = {msg.name!r}",
                f"  message = {msg.message[:64]!r}{' ...' if len(msg.message) > 64 else ''}"]
    return ["PE registration", f"  name = {msg.name!r}", f"  info = {msg.info!r}"]
