"""Single-file binary container for model snapshots.

Layout: 4 magic bytes, then a UTF-8 JSON header prefixed with its byte length
as a 4-byte little-endian unsigned int, then a sequence of tensors, each as
``rank: u32, extents: u32[rank], data: f64[] little-endian`` in a documented
order. JSON headers are serialized with sorted keys so files are
byte-reproducible.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

import numpy as np


class FormatError(ValueError):
    """Raised on malformed container files."""


def dumps_header(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_container(fh: BinaryIO, magic: bytes, header: dict, tensors: list[np.ndarray]) -> None:
    if len(magic) != 4:
        raise FormatError(f"magic must be 4 bytes, got {len(magic)}")
    fh.write(magic)
    blob = dumps_header(header)
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)
    for t in tensors:
        arr = np.ascontiguousarray(t, dtype=np.float64)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype("<f8").tobytes())


def read_container(fh: BinaryIO, magic: bytes) -> tuple[dict, list[np.ndarray]]:
    got = fh.read(4)
    if got != magic:
        raise FormatError(f"bad magic: expected {magic!r}, got {got!r}")
    (hlen,) = struct.unpack("<I", _read_exact(fh, 4))
    header = json.loads(_read_exact(fh, hlen).decode("utf-8"))
    tensors = []
    while True:
        raw = fh.read(4)
        if not raw:
            break
        if len(raw) != 4:
            raise FormatError("truncated tensor rank field")
        (rank,) = struct.unpack("<I", raw)
        extents = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
        count = int(np.prod(extents)) if rank else 1
        data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8")
        tensors.append(data.reshape(extents).astype(np.float64))
    return header, tensors


def write_string(fh: BinaryIO, s: str) -> None:
    blob = s.encode("utf-8")
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(data)}")
    return data
