"""Data scheduler and DB node: a named float64-array store."""
from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass

import numpy as np

from ..protocol import (
    CloudFuncRequest, CloudQueryRequest, CloudSDRequest, QType, Response, RType, Status,
)
from .info import installed_libs, machine_info
from .net import error_response


@dataclass(frozen=True)
class StoredArray:
    values: np.ndarray
    seq: int
    stamp_ns: int


class DataStore:
    """In-memory store. Arrays are read-only once stored, so readers never copy."""

    def __init__(self):
        self._items: dict[str, StoredArray] = {}
        self._lock = threading.Lock()
        self._seq = itertools.count()

    def put(self, name: str, values) -> StoredArray:
        arr = np.array(values, dtype=np.float64).reshape(-1)
        arr.flags.writeable = False
        with self._lock:
            item = StoredArray(arr, next(self._seq), time.monotonic_ns())
            self._items.pop(name, None)
            self._items[name] = item
        return item

    def get(self, name: str) -> np.ndarray | None:
        item = self._items.get(name)
        return None if item is None else item.values

    def record(self, name: str) -> StoredArray | None:
        return self._items.get(name)

    def names(self) -> list[str]:
        """Names in insertion order (overwrites move a name to the end)."""
        with self._lock:
            return list(self._items)

    def __contains__(self, name) -> bool:
        return name in self._items

    def __len__(self):
        return len(self._items)


class DataService:
    """Handles CloudSD stores and fetch queries (qtype 0)."""

    role = "data"

    def __init__(self, store: DataStore | None = None):
        self.store = store or DataStore()

    def data_store(self, req: CloudSDRequest) -> Response:
        self.store.put(req.name, req.payload)
        return Response(RType.SD, Status.OK, req.name, b"OK")

    def data_fetch(self, name: str) -> Response:
        values = self.store.get(name)
        if values is None:
            return Response(RType.QUERY, Status.UNKNOWN_NAME, name, f"no data named {name!r}".encode())
        return Response(RType.QUERY, Status.OK, name, values.astype(">f8").tobytes())

    def handle(self, msg, conn=None) -> Response:
        if isinstance(msg, CloudSDRequest):
            return self.data_store(msg)
        if isinstance(msg, CloudQueryRequest):
            if msg.qtype == QType.FETCH:
                return self.data_fetch(msg.name)
            if msg.qtype == QType.MACHINE_INFO:
                return Response(RType.QUERY, Status.OK, msg.name,
                                machine_info(arrays=len(self.store)).encode())
            if msg.qtype == QType.INSTALLED_LIBS:
                return Response(RType.QUERY, Status.OK, msg.name, installed_libs().encode())
            return error_response(msg, Status.MALFORMED, "the data scheduler does not evaluate functions",
                                  msg.name)
        if isinstance(msg, CloudFuncRequest):
            return error_response(msg, Status.MALFORMED, "functions are registered with the task scheduler",
                                  msg.name)
        return error_response(msg, Status.MALFORMED, f"unexpected {type(msg).__name__}")
