"""Versioned binary parameter files.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic  b"IMGCOTCK"
    offset 8   u16       format version (currently 1)
    offset 10  u32       metadata length M
    offset 14  M bytes   metadata, UTF-8 JSON object
               u32       number of named arrays N
    then N records:
               u16       name length L, followed by L bytes of UTF-8 name
               u8        dtype code (0 float32, 1 float64, 2 int64)
               u8        ndim
               u32*ndim  dimensions
               raw       row-major little-endian values
"""

from __future__ import annotations

import json
import struct

import numpy as np

from imgcot.errors import IncompatibleVersionError, ParseError
from imgcot.io import atomic_write_bytes, require

MAGIC = b"IMGCOTCK"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


def encode_checkpoint(arrays: dict, meta: dict | None = None) -> bytes:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            arr = arr.astype(np.int64 if arr.dtype.kind in "iub" else np.float64)
        code = _CODES[arr.dtype]
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> tuple[dict, dict]:
    view = memoryview(blob)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise ParseError(f"truncated checkpoint while reading {what}", offset=pos)
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(len(MAGIC), "magic")) != MAGIC:
        raise ParseError("bad magic bytes, not a checkpoint file", offset=0)
    version, meta_len = struct.unpack("<HI", take(6, "header"))
    if version != VERSION:
        raise IncompatibleVersionError(f"checkpoint format version {version}, expected {VERSION}", offset=8)
    try:
        meta = json.loads(bytes(take(meta_len, "metadata")).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"unreadable metadata: {exc}", offset=14) from exc
    (count,) = struct.unpack("<I", take(4, "array count"))
    arrays = {}
    for _ in range(count):
        start = pos
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = bytes(take(name_len, "name")).decode("utf-8", errors="strict")
        code, ndim = struct.unpack("<BB", take(2, "dtype"))
        if code not in _DTYPES:
            raise ParseError(f"unknown dtype code {code} for {name!r}", offset=start)
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "shape"))
        dtype = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        data = np.frombuffer(bytes(take(nbytes, f"values of {name!r}")), dtype=dtype).reshape(shape)
        arrays[name] = data.astype(dtype.newbyteorder("="))
    if pos != len(view):
        raise ParseError("trailing bytes after last array", offset=pos)
    return arrays, meta


def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> None:
    """Write atomically: temp file in the same directory, then rename."""
    atomic_write_bytes(path, encode_checkpoint(arrays, meta))


def load_checkpoint(path) -> tuple[dict, dict]:
    return decode_checkpoint(require(path).read_bytes())
