"""Keyed partition storage: in-memory, on-disk, and latency-simulated.

Blob layout (little-endian)::

    u32 count | u32 dim | count x (u64 id, dim x f32) | u32 crc32

The CRC covers everything before it.
"""

from __future__ import annotations

import heapq
import itertools
import os
import random
import struct
import tempfile
import threading
import time
import zlib
from concurrent.futures import Future
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptionError, InvalidArgumentError, NotFoundError

_BLOB_HEADER = struct.Struct("<II")
_CRC = struct.Struct("<I")


def _member_dtype(dim: int) -> np.dtype:
    return np.dtype([("id", "<u8"), ("v", "<f4", (dim,))])


@dataclass
class PartitionBlob:
    key: str
    ids: np.ndarray
    vectors: np.ndarray
    checksum: int = 0

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def to_bytes(self) -> bytes:
        return serialize_partition(self.ids, self.vectors)

    @classmethod
    def from_bytes(cls, key: str, buf: bytes) -> "PartitionBlob":
        ids, vecs = deserialize_partition(buf)
        return cls(key, ids, vecs, _CRC.unpack_from(buf, len(buf) - 4)[0])


def serialize_partition(ids, vectors) -> bytes:
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    vectors = np.asarray(vectors, dtype=np.float32)
    if ids.size == 0:
        raise InvalidArgumentError("a partition blob needs at least one member")
    if vectors.ndim != 2 or vectors.shape[0] != ids.size:
        raise InvalidArgumentError("ids and vectors disagree in count")
    if (ids < 0).any():
        raise InvalidArgumentError("vector ids must be non-negative")
    dim = vectors.shape[1]
    rec = np.empty(ids.size, dtype=_member_dtype(dim))
    rec["id"] = ids
    rec["v"] = vectors
    body = _BLOB_HEADER.pack(ids.size, dim) + rec.tobytes()
    return body + _CRC.pack(zlib.crc32(body))


def deserialize_partition(buf: bytes) -> tuple[np.ndarray, np.ndarray]:
    if len(buf) < _BLOB_HEADER.size + _CRC.size:
        raise CorruptionError(f"partition blob truncated ({len(buf)} bytes)")
    count, dim = _BLOB_HEADER.unpack_from(buf, 0)
    expect = _BLOB_HEADER.size + count * (8 + 4 * dim) + _CRC.size
    if len(buf) != expect:
        raise CorruptionError(f"partition blob is {len(buf)} bytes, layout needs {expect}")
    (crc,) = _CRC.unpack_from(buf, len(buf) - 4)
    if zlib.crc32(memoryview(buf)[:-4]) != crc:
        raise CorruptionError("partition blob checksum mismatch")
    if count == 0:
        raise CorruptionError("partition blob has no members")
    rec = np.frombuffer(buf, dtype=_member_dtype(dim), count=count, offset=_BLOB_HEADER.size)
    return rec["id"].astype(np.int64), np.ascontiguousarray(rec["v"])


def blob_size(count: int, dim: int) -> int:
    return _BLOB_HEADER.size + count * (8 + 4 * dim) + _CRC.size


# ---------------------------------------------------------------------------
# backends


def _done_future(fn) -> Future:
    fut: Future = Future()
    try:
        fut.set_result(fn())
    except Exception as e:  # noqa: BLE001 - delivered through the future
        fut.set_exception(e)
    return fut


class PartitionStore:
    """Byte-level get/put plus blob helpers; subclasses supply the bytes."""

    def put_bytes(self, key: str, data: bytes) -> None:
        raise NotImplementedError

    def get_bytes(self, key: str) -> bytes:
        raise NotImplementedError

    def keys(self) -> list[str]:
        raise NotImplementedError

    def __contains__(self, key: str) -> bool:
        try:
            self.get_bytes(key)
        except NotFoundError:
            return False
        return True

    def put(self, key: str, blob: PartitionBlob | bytes) -> None:
        data = blob if isinstance(blob, (bytes, bytearray)) else blob.to_bytes()
        self.put_bytes(key, bytes(data))

    def get(self, key: str) -> PartitionBlob:
        return PartitionBlob.from_bytes(key, self.get_bytes(key))

    def get_async(self, key: str) -> Future:
        """Returns at once; the future resolves to the :class:`PartitionBlob`."""
        return _done_future(lambda: self.get(key))

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class MemoryStore(PartitionStore):
    def __init__(self) -> None:
        self._data: dict[str, bytes] = {}
        self._lock = threading.Lock()

    def put_bytes(self, key: str, data: bytes) -> None:
        with self._lock:
            self._data[key] = bytes(data)

    def get_bytes(self, key: str) -> bytes:
        try:
            return self._data[key]
        except KeyError:
            raise NotFoundError(f"no partition stored under key {key!r}") from None

    def keys(self) -> list[str]:
        return sorted(self._data)


class FileStore(PartitionStore):
    """One file per key under ``root``; writes go through temp file + rename."""

    SUFFIX = ".blob"

    def __init__(self, root) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, key: str) -> Path:
        parts = key.split("/")
        if not key or any(p in ("", ".", "..") for p in parts) or key.startswith("/"):
            raise InvalidArgumentError(f"invalid store key {key!r}")
        return self.root.joinpath(*parts).with_name(parts[-1] + self.SUFFIX)

    def put_bytes(self, key: str, data: bytes) -> None:
        path = self.path_for(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=self.SUFFIX)
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def get_bytes(self, key: str) -> bytes:
        try:
            return self.path_for(key).read_bytes()
        except FileNotFoundError:
            raise NotFoundError(f"no partition stored under key {key!r} in {self.root}") from None

    def keys(self) -> list[str]:
        out = []
        for p in self.root.rglob("*" + self.SUFFIX):
            if p.name.startswith(".tmp-"):
                continue
            rel = p.relative_to(self.root).with_name(p.name[: -len(self.SUFFIX)])
            out.append(rel.as_posix())
        return sorted(out)


# ---------------------------------------------------------------------------
# simulated remote storage


@dataclass
class StoreProfile:
    base_latency: float = 0.001
    jitter: float = 0.001
    throughput_cap: int = 32

    def __post_init__(self) -> None:
        if self.base_latency < 0 or self.jitter < 0:
            raise InvalidArgumentError("latency and jitter must be >= 0")
        if self.throughput_cap < 1:
            raise InvalidArgumentError("throughput_cap must be >= 1")


class RealClock:
    def now(self) -> float:
        return time.perf_counter()


class VirtualClock:
    """Manually advanced time; fetches resolve only when time reaches them."""

    def __init__(self, start: float = 0.0) -> None:
        self._t = float(start)

    def now(self) -> float:
        return self._t

    def _advance_to(self, t: float) -> None:
        self._t = max(self._t, t)


class PendingFetch(Future):
    """Future for a simulated fetch; ``due`` is its scheduled completion time."""

    def __init__(self, store: "SimulatedStore", key: str, issued: float, due: float) -> None:
        super().__init__()
        self.key = key
        self.issued = issued
        self.due = due
        self._store = store

    def result(self, timeout=None):
        if not self.done() and self._store.virtual:
            self._store.advance_to(self.due)
        return super().result(timeout)

    def exception(self, timeout=None):
        if not self.done() and self._store.virtual:
            self._store.advance_to(self.due)
        return super().exception(timeout)


class SimulatedStore(PartitionStore):
    """Wraps another store and delays every read.

    Each fetch occupies one of ``throughput_cap`` slots and completes
    ``base_latency + U(0, jitter)`` after its slot frees up. Completions are
    driven by one scheduler thread over a due-time heap (or, with a
    :class:`VirtualClock`, by whoever waits on a result). Done-callbacks run
    on the scheduler thread and must not block.
    """

    def __init__(self, inner: PartitionStore, profile: StoreProfile | None = None,
                 seed: int = 0, clock=None) -> None:
        self.inner = inner
        self.profile = profile or StoreProfile()
        self.clock = clock or RealClock()
        self.virtual = isinstance(self.clock, VirtualClock)
        self._rng = random.Random(seed)
        self._cond = threading.Condition()
        self._slots = [float("-inf")] * self.profile.throughput_cap
        self._queue: list = []
        self._seq = itertools.count()
        self._closed = False
        self._thread = None
        if not self.virtual:
            self._thread = threading.Thread(target=self._run, name="simulated-store", daemon=True)
            self._thread.start()

    def put_bytes(self, key: str, data: bytes) -> None:
        self.inner.put_bytes(key, data)

    def get_bytes(self, key: str) -> bytes:
        return self.get_async_bytes(key).result()

    def keys(self) -> list[str]:
        return self.inner.keys()

    def get(self, key: str) -> PartitionBlob:
        return self.get_async(key).result()

    def get_async(self, key: str) -> PendingFetch:
        return self._submit(key, decode=True)

    def get_async_bytes(self, key: str) -> PendingFetch:
        return self._submit(key, decode=False)

    def _submit(self, key: str, decode: bool) -> PendingFetch:
        try:
            payload, err = self.inner.get_bytes(key), None
        except Exception as e:  # noqa: BLE001 - re-raised from the future
            payload, err = None, e
        with self._cond:
            if self._closed:
                raise RuntimeError("store is closed")
            now = self.clock.now()
            start = max(now, heapq.heappop(self._slots))
            due = start + self.profile.base_latency + self._rng.uniform(0.0, self.profile.jitter)
            heapq.heappush(self._slots, due)
            fut = PendingFetch(self, key, now, due)
            heapq.heappush(self._queue, (due, next(self._seq), fut, payload, err, decode))
            self._cond.notify()
        return fut

    @staticmethod
    def _resolve(item) -> None:
        _, _, fut, payload, err, decode = item
        if err is not None:
            fut.set_exception(err)
            return
        try:
            fut.set_result(PartitionBlob.from_bytes(fut.key, payload) if decode else payload)
        except Exception as e:  # noqa: BLE001
            fut.set_exception(e)

    def advance_to(self, t: float) -> None:
        """Virtual clock only: move time forward and resolve everything due."""
        if not self.virtual:
            raise RuntimeError("advance_to needs a VirtualClock")
        with self._cond:
            self.clock._advance_to(t)
            ready = []
            while self._queue and self._queue[0][0] <= self.clock.now():
                ready.append(heapq.heappop(self._queue))
        for item in ready:
            self._resolve(item)

    def in_flight(self) -> int:
        with self._cond:
            return len(self._queue)

    def _run(self) -> None:
        while True:
            with self._cond:
                while True:
                    if self._closed and not self._queue:
                        return
                    if not self._queue:
                        self._cond.wait()
                        continue
                    wait = self._queue[0][0] - self.clock.now()
                    if wait > 0:
                        self._cond.wait(wait)
                        continue
                    item = heapq.heappop(self._queue)
                    break
            self._resolve(item)

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        if self._thread is not None:
            self._thread.join()
        self.inner.close()


def open_store(kind: str, root=None, profile: StoreProfile | None = None, seed: int = 0) -> PartitionStore:
    """``memory``, ``file`` or ``simulated`` (latency over a file store)."""
    if kind == "memory":
        return MemoryStore()
    if kind == "file":
        return FileStore(root)
    if kind == "simulated":
        inner = FileStore(root) if root is not None else MemoryStore()
        return SimulatedStore(inner, profile, seed)
    raise InvalidArgumentError(f"unknown store backend {kind!r}")
