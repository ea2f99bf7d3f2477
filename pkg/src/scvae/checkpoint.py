"""Binary named-tensor container ("SCVK").

Layout, all little-endian::

    b"SCVK" | version u32 | count u32 |
    count x { name_len u32 | utf-8 name | dtype u8 | rank u8 | dims u64[rank] | raw data }
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"SCVK"
VERSION = 1

DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("<i8"): 2,
    np.dtype("u1"): 3,
}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


def encode_tensors(tensors: dict) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
        if dt not in DTYPE_CODES:
            raise FormatError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", DTYPE_CODES[dt], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(parts)


def decode_tensors(buf: bytes) -> dict:
    """Parse a whole container; raises FormatError (with byte offset) before returning anything."""
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated while reading {what}", offset=pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError("bad magic", offset=0)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    out = {}
    for _ in range(count):
        start = pos
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        try:
            name = take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not valid utf-8", offset=start + 4) from None
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}", offset=start)
        code_pos = pos
        code, rank = struct.unpack("<BB", take(2, "dtype/rank"))
        if code not in CODE_DTYPES:
            raise FormatError(f"unknown dtype code {code}", offset=code_pos)
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, "dims"))
        dt = CODE_DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(take(nbytes, f"data of {name!r}"), dtype=dt).reshape(dims).copy()
        out[name] = arr
    if pos != len(buf):
        raise FormatError("trailing bytes after last tensor", offset=pos)
    return out


def write_tensors(path, tensors: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensors(tensors))


def read_tensors(path) -> dict:
    return decode_tensors(Path(path).read_bytes())
