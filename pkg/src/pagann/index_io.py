"""On-disk index directory.

::

    <dir>/graph.bin           proximity graph (ids + CSR adjacency)
    <dir>/aggregation.fvecs   aggregation vectors in graph node order
    <dir>/manifest.bin        radii, partition directory and member lists
    <dir>/config.json         build config and report (informational)
    <store root>/...          one blob per partition, default <dir>/partitions

Manifest layout, little-endian::

    4s magic "PAGM" | u32 version | u64 n_points | u64 n_agg | i64 capacity (-1: none)
    f64 d_o | u64 promoted
    n_agg x (u64 id | f64 radius | u32 members | u32 redundant | u16 keylen | key)
    per partition: u64 primary ids, then u64 redundant ids
    u32 crc32 of everything above
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .core import Dataset
from .dataset_io import load_fvecs, write_fvecs
from .errors import FormatError
from .graph import ProximityGraph
from .pag import PagConfig, PagIndex, partition_key
from .store import FileStore, PartitionStore, serialize_partition

MANIFEST_MAGIC = b"PAGM"
MANIFEST_VERSION = 1
STORE_ROOT_ENV = "PAGANN_STORE_ROOT"

_HEAD = struct.Struct("<4sIQQqdQ")
_ENTRY = struct.Struct("<QdIIH")
_CRC = struct.Struct("<I")


def manifest_to_bytes(index: PagIndex) -> bytes:
    g = index.graph
    parts = [_HEAD.pack(
        MANIFEST_MAGIC, MANIFEST_VERSION, index.n_points, g.size,
        -1 if index.capacity is None else int(index.capacity), float(index.d_o), int(index.promoted),
    )]
    for a in range(g.size):
        key = index.store_key(a).encode()
        prim, red = index.primary[a], index.redundant[a]
        parts.append(_ENTRY.pack(int(g.ids[a]), float(index.radius[a]), len(prim) + len(red) + 1, len(red), len(key)))
        parts.append(key)
    for a in range(g.size):
        parts.append(np.asarray(index.primary[a], dtype="<u8").tobytes())
        parts.append(np.asarray(index.redundant[a], dtype="<u8").tobytes())
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body))


def manifest_from_bytes(buf: bytes, path=None) -> dict:
    """Parse a manifest into plain arrays; checks magic, version, lengths, CRC."""
    where = None if path is None else str(path)
    if len(buf) < _HEAD.size + _CRC.size:
        raise FormatError("manifest truncated", offset=len(buf), path=where)
    (crc,) = _CRC.unpack_from(buf, len(buf) - 4)
    if zlib.crc32(memoryview(buf)[:-4]) != crc:
        raise FormatError("manifest checksum mismatch", offset=len(buf) - 4, path=where)
    magic, version, n_points, n_agg, cap, d_o, promoted = _HEAD.unpack_from(buf, 0)
    if magic != MANIFEST_MAGIC:
        raise FormatError("bad manifest magic", offset=0, path=where)
    if version != MANIFEST_VERSION:
        raise FormatError(f"unsupported manifest version {version}", offset=4, path=where)
    pos = _HEAD.size
    end = len(buf) - 4
    ids, radius, counts, red_counts, keys = [], [], [], [], []
    for _ in range(n_agg):
        if pos + _ENTRY.size > end:
            raise FormatError("manifest directory truncated", offset=pos, path=where)
        vid, r, cnt, red, klen = _ENTRY.unpack_from(buf, pos)
        pos += _ENTRY.size
        keys.append(bytes(buf[pos:pos + klen]).decode())
        pos += klen
        if cnt < red + 1:
            raise FormatError(f"partition {vid} member count below its redundant count", offset=pos, path=where)
        ids.append(vid)
        radius.append(r)
        counts.append(cnt)
        red_counts.append(red)
    primary, redundant = [], []
    for cnt, red in zip(counts, red_counts):
        np_ = cnt - 1 - red
        if pos + 8 * (np_ + red) > end:
            raise FormatError("manifest member lists truncated", offset=pos, path=where)
        primary.append(np.frombuffer(buf, "<u8", np_, pos).astype(np.int64).tolist())
        pos += 8 * np_
        redundant.append(np.frombuffer(buf, "<u8", red, pos).astype(np.int64).tolist())
        pos += 8 * red
    if pos != end:
        raise FormatError("trailing bytes in manifest", offset=pos, path=where)
    return {
        "n_points": n_points, "capacity": None if cap < 0 else cap, "d_o": d_o, "promoted": promoted,
        "ids": np.asarray(ids, dtype=np.int64), "radius": np.asarray(radius, dtype=np.float64),
        "keys": keys, "primary": primary, "redundant": redundant,
    }


def store_root(index_dir) -> Path:
    env = os.environ.get(STORE_ROOT_ENV)
    return Path(env) if env else Path(index_dir) / "partitions"


def write_partitions(index: PagIndex, ds: Dataset, store: PartitionStore) -> list[str]:
    """Put one blob per aggregation point; returns the keys written."""
    keys = []
    for a in range(index.n_aggregation):
        mem = index.members(a)
        key = index.store_key(a)
        store.put(key, serialize_partition(mem, ds.vectors[mem]))
        keys.append(key)
    return keys


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_index(index: PagIndex, ds: Dataset, index_dir, store: PartitionStore | None = None,
               config: PagConfig | None = None) -> list[Path]:
    """Write the index files (and partitions, into ``store`` or a file store)."""
    d = Path(index_dir)
    d.mkdir(parents=True, exist_ok=True)
    g = index.graph
    _atomic_write(d / "graph.bin", g.to_bytes())
    write_fvecs(d / "aggregation.fvecs", g.vectors[: g.size])
    _atomic_write(d / "manifest.bin", manifest_to_bytes(index))
    meta = {"config": asdict(config) if config is not None else None, "build_report": index.build_report}
    _atomic_write(d / "config.json", (json.dumps(meta, indent=2, sort_keys=True, default=float) + "\n").encode())
    store = store if store is not None else FileStore(store_root(d))
    write_partitions(index, ds, store)
    return [d / "graph.bin", d / "aggregation.fvecs", d / "manifest.bin", d / "config.json"]


def load_index(index_dir) -> PagIndex:
    d = Path(index_dir)
    for name in ("graph.bin", "aggregation.fvecs", "manifest.bin"):
        if not (d / name).exists():
            raise FormatError(f"index file {name} missing", path=str(d / name))
    vecs = load_fvecs(d / "aggregation.fvecs").vectors
    g = ProximityGraph.from_bytes((d / "graph.bin").read_bytes(), vecs)
    man = manifest_from_bytes((d / "manifest.bin").read_bytes(), d / "manifest.bin")
    if not np.array_equal(man["ids"], g.ids[: g.size]):
        raise FormatError("manifest and graph disagree on aggregation points", path=str(d / "manifest.bin"))
    for vid, key in zip(man["ids"].tolist(), man["keys"]):
        if key != partition_key(vid):
            raise FormatError(f"unexpected store key {key!r} for {vid}", path=str(d / "manifest.bin"))
    report = {}
    if (d / "config.json").exists():
        report = json.loads((d / "config.json").read_text()).get("build_report") or {}
    return PagIndex(
        graph=g, radius=man["radius"], primary=man["primary"], redundant=man["redundant"],
        capacity=man["capacity"], d_o=man["d_o"], n_points=man["n_points"], promoted=man["promoted"],
        build_report=report,
    )


def open_partition_store(index_dir) -> FileStore:
    return FileStore(store_root(index_dir))


__all__ = [
    "manifest_to_bytes", "manifest_from_bytes", "save_index", "load_index", "write_partitions",
    "store_root", "open_partition_store", "STORE_ROOT_ENV",
]
