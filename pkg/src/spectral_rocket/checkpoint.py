"""
Versioned binary checkpoint container.

Layout (all integers little-endian)::

    magic     4 bytes  b"SRCK"
    version   u32
    meta_len  u32
    meta      meta_len bytes of UTF-8 JSON; meta["arrays"] lists
              {"name", "dtype", "shape"} in payload order
    payload   each array's raw little-endian bytes, C order, back to back
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .data import atomic_write_bytes

MAGIC = b"SRCK"
VERSION = 1


def dumps(meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    specs, chunks = [], []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in "|" else arr.dtype
        specs.append({"name": name, "dtype": dt.str, "shape": list(arr.shape)})
        chunks.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    head = json.dumps({**meta, "arrays": specs}, sort_keys=True).encode()
    return b"".join([struct.pack("<4sII", MAGIC, VERSION, len(head)), head, *chunks])


def loads(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < 12:
        raise ValueError("checkpoint truncated")
    magic, version, n = struct.unpack_from("<4sII", data, 0)
    if magic != MAGIC:
        raise ValueError("not a checkpoint file")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    meta = json.loads(data[12 : 12 + n].decode())
    pos = 12 + n
    arrays = {}
    for spec in meta.pop("arrays"):
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype=dt, count=count, offset=pos).reshape(spec["shape"])
        arrays[spec["name"]] = arr.astype(dt.newbyteorder("="))
        pos += count * dt.itemsize
    if pos != len(data):
        raise ValueError("checkpoint has trailing or missing bytes")
    return meta, arrays


def save(path, meta: dict, arrays: dict[str, np.ndarray]):
    atomic_write_bytes(path, dumps(meta, arrays))


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        return loads(f.read())
