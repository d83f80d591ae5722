import io
import socket
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import RESP_IN_OK, SD_IN_ONE, random_message
from snc.protocol import (
    CloudFuncRequest, CloudQueryRequest, CloudSDRequest, ErrorCode, PEHello, ProtocolError,
    QType, Response, RType, Status, TransportError, decode, describe, encode, frame, frame_read,
    frame_write, iter_frames,
)


class TestHandEncoded:
    def test_cloudsd(self):
        msg = CloudSDRequest("in", [1.0])
        assert encode(msg) == SD_IN_ONE
        assert decode(SD_IN_ONE) == msg

    def test_response(self):
        msg = Response(RType.SD, Status.OK, "in", b"OK")
        assert encode(msg) == RESP_IN_OK
        assert decode(RESP_IN_OK) == msg
        assert decode(RESP_IN_OK).text == "OK"

    def test_query_layout(self):
        data = encode(CloudQueryRequest(QType.EVALUATE, "f", "out", ("a", "bc")))
        assert data == (b"Q" + struct.pack(">III", 1, 1, 3) + b"f" + b"out"
                        + struct.pack(">I", 2) + struct.pack(">I", 1) + b"a"
                        + struct.pack(">I", 2) + b"bc")

    def test_func_layout(self):
        assert encode(CloudFuncRequest("g", b"\x01\x02")) == b"F" + struct.pack(">II", 1, 2) + b"g\x01\x02"


class TestRoundTrip:
    def test_random_messages(self):
        rng = np.random.default_rng(30)
        for _ in range(10_000):
            msg = random_message(rng)
            data = encode(msg)
            back = decode(data)
            assert back == msg
            assert encode(back) == data

    def test_every_prefix_is_rejected(self):
        rng = np.random.default_rng(31)
        for _ in range(200):
            data = encode(random_message(rng))
            for k in range(len(data)):
                with pytest.raises(ProtocolError):
                    decode(data[:k])

    def test_trailing_bytes(self):
        with pytest.raises(ProtocolError) as ei:
            decode(SD_IN_ONE + b"\x00")
        assert ei.value.code == ErrorCode.TRAILING_BYTES

    @given(st.binary(max_size=200))
    def test_arbitrary_bytes_never_crash(self, data):
        try:
            decode(data)
        except ProtocolError:
            pass

    @given(st.lists(st.floats(allow_nan=False), max_size=30), st.text(min_size=1, max_size=20))
    def test_cloudsd_property(self, values, name):
        msg = CloudSDRequest(name, values)
        assert decode(encode(msg)) == msg

    def test_nan_payload_is_bit_exact(self):
        raw = np.array([np.nan, -0.0, np.inf])
        back = decode(encode(CloudSDRequest("n", raw)))
        assert back.payload.tobytes() == raw.tobytes()


class TestErrors:
    def test_unknown_magic(self):
        with pytest.raises(ProtocolError) as ei:
            decode(b"\x5a" + SD_IN_ONE[1:])
        assert ei.value.code == ErrorCode.UNKNOWN_MAGIC

    def test_response_where_request_expected(self):
        with pytest.raises(ProtocolError) as ei:
            decode(RESP_IN_OK, expected="request")
        assert ei.value.code == ErrorCode.UNKNOWN_MAGIC

    def test_unknown_qtype(self):
        data = bytearray(encode(CloudQueryRequest(QType.FETCH, "a")))
        data[1:5] = struct.pack(">I", 9)
        with pytest.raises(ProtocolError) as ei:
            decode(bytes(data))
        assert ei.value.code == ErrorCode.UNKNOWN_QTYPE

    def test_unknown_rtype(self):
        with pytest.raises(ProtocolError) as ei:
            encode(Response(7, 0, "x"))
        assert ei.value.code == ErrorCode.UNKNOWN_RTYPE

    def test_declared_length_beyond_frame(self):
        data = b"F" + struct.pack(">II", 1, 1000) + b"g"
        with pytest.raises(ProtocolError) as ei:
            decode(data)
        assert ei.value.code == ErrorCode.TRUNCATED

    def test_oversized_name(self):
        data = b"F" + struct.pack(">II", 2 ** 20, 0) + b"g"
        with pytest.raises(ProtocolError) as ei:
            decode(data)
        assert ei.value.code == ErrorCode.LENGTH_OVERFLOW

    def test_data_length_not_multiple_of_eight(self):
        data = b"D" + struct.pack(">III", 1, 0, 7) + b"a" + b"\x00" * 7
        with pytest.raises(ProtocolError):
            decode(data)

    @pytest.mark.parametrize("msg", [
        CloudSDRequest("", [1.0]),
        CloudFuncRequest("", b""),
        CloudQueryRequest(QType.EVALUATE, "f", ""),
        CloudQueryRequest(QType.FETCH, "a", "", ("",)),
        PEHello(""),
    ])
    def test_encode_rejects_empty_names(self, msg):
        with pytest.raises(ProtocolError):
            encode(msg)

    def test_encode_rejects_unknown_type(self):
        with pytest.raises(TypeError):
            encode("hello")

    def test_info_queries_allow_empty_name(self):
        msg = CloudQueryRequest(QType.MACHINE_INFO, "")
        assert decode(encode(msg)) == msg


class TestFraming:
    def test_frame_adds_length_prefix(self):
        assert frame(b"0123456789") == b"\x00\x00\x00\x0a0123456789"
        assert len(frame(b"x" * 10)) == 14

    def test_zero_length_frame(self):
        with pytest.raises(ProtocolError) as ei:
            frame(b"")
        assert ei.value.code == ErrorCode.EMPTY_FRAME
        with pytest.raises(ProtocolError):
            frame_read(io.BytesIO(b"\x00\x00\x00\x00"))

    def test_back_to_back_frames_over_socket(self):
        a, b = socket.socketpair()
        try:
            msgs = [SD_IN_ONE, RESP_IN_OK, encode(PEHello("pe"))]
            for m in msgs:
                frame_write(a, m)
            a.shutdown(socket.SHUT_WR)
            got = []
            while (p := frame_read(b)) is not None:
                got.append(p)
            assert got == msgs
        finally:
            a.close()
            b.close()

    def test_close_inside_frame(self):
        with pytest.raises(TransportError):
            frame_read(io.BytesIO(b"\x00\x00\x00\x05ab"))
        with pytest.raises(TransportError):
            frame_read(io.BytesIO(b"\x00\x00"))

    def test_clean_close(self):
        assert frame_read(io.BytesIO(b"")) is None

    def test_iter_frames(self):
        data = frame(SD_IN_ONE) + frame(RESP_IN_OK)
        assert [p for _, p in iter_frames(data)] == [SD_IN_ONE, RESP_IN_OK]
        assert [off for off, _ in iter_frames(data)] == [0, 4 + len(SD_IN_ONE)]
        with pytest.raises(ProtocolError):
            list(iter_frames(data[:-1]))


def test_describe_lists_fields():
    lines = describe(decode(SD_IN_ONE))
    assert any("in" in ln for ln in lines)
    assert describe(decode(RESP_IN_OK))
