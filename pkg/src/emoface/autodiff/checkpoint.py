"""Versioned binary container for named float64 tensors.

Layout (little-endian)::

    b"EMFC" | u32 version | u32 count |
    count x ( u16 name_len | name utf-8 | u8 rank | rank x u32 dim | f64 payload )
"""

from __future__ import annotations

import io
import struct
from collections import OrderedDict
from typing import Mapping

import numpy as np

from ..errors import FormatError

MAGIC = b"EMFC"
VERSION = 1


def dumps_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]}...")
        arr = np.asarray(arr, dtype="<f8")
        if arr.ndim > 0xFF:
            raise FormatError(f"tensor {name!r} rank {arr.ndim} exceeds 255")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_tensors(tensors))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, field: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated checkpoint while reading {field}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, field: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), field))


def loads_tensors(data: bytes) -> "OrderedDict[str, np.ndarray]":
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic: not an EMFC checkpoint")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (count,) = r.unpack("<I", "tensor count")
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for i in range(count):
        (n,) = r.unpack("<H", f"name length of tensor {i}")
        try:
            name = r.take(n, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"name of tensor {i} is not UTF-8") from exc
        (rank,) = r.unpack("<B", f"rank of {name!r}")
        dims = r.unpack(f"<{rank}I", f"dims of {name!r}")
        count_el = int(np.prod(dims)) if rank else 1
        payload = r.take(8 * count_el, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last tensor")
    return out


def load_tensors(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        return loads_tensors(fh.read())
