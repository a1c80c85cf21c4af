"""On-disk formats: the SSTF named-tensor container and binary PPM images.

SSTF layout (all integers little-endian)::

    b"SSTF" | version u32 | entry count u32
    per entry: name length u16 | name (utf-8) | dtype u8 | rank u8
               | extents u64 * rank | raw payload

dtype codes: 0 real32, 1 real64, 2 complex64, 3 complex128.
"""

from __future__ import annotations

import os
import struct
from collections import OrderedDict
from typing import Mapping

import numpy as np

from .errors import FormatError

MAGIC = b"SSTF"
VERSION = 1

_CODES = {
    np.dtype(np.float32): 0,
    np.dtype(np.float64): 1,
    np.dtype(np.complex64): 2,
    np.dtype(np.complex128): 3,
}
_DTYPES = {code: dt for dt, code in _CODES.items()}


def encode_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(getattr(arr, "data", arr))
        if arr.dtype not in _CODES:
            raise FormatError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise FormatError(f"tensor {name!r} rank {arr.ndim} too large")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    return b"".join(parts)


def decode_tensors(buf: bytes) -> "OrderedDict[str, np.ndarray]":
    view = memoryview(buf)
    if bytes(view[:4]) != MAGIC:
        raise FormatError("not an SSTF container (bad magic)")
    pos = 4

    def read(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise FormatError("truncated SSTF container")
        vals = struct.unpack_from(fmt, view, pos)
        pos += size
        return vals

    version, count = read("<II")
    if version != VERSION:
        raise FormatError(f"unsupported SSTF version {version}")
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (nlen,) = read("<H")
        if pos + nlen > len(view):
            raise FormatError("truncated SSTF entry name")
        name = bytes(view[pos:pos + nlen]).decode("utf-8")
        pos += nlen
        code, rank = read("<BB")
        if code not in _DTYPES:
            raise FormatError(f"entry {name!r}: unknown dtype code {code}")
        shape = read(f"<{rank}Q") if rank else ()
        dtype = _DTYPES[code].newbyteorder("<")
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if pos + nbytes > len(view):
            raise FormatError(f"entry {name!r}: truncated payload")
        arr = np.frombuffer(view[pos:pos + nbytes], dtype=dtype).reshape(shape)
        out[name] = arr.astype(_DTYPES[code], copy=True)
        pos += nbytes
    if pos != len(view):
        raise FormatError("trailing bytes after last SSTF entry")
    return out


def write_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    data = encode_tensors(tensors)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_tensors(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        return decode_tensors(fh.read())


# single-tensor convenience used for fixtures
def write_tensor(path, arr: np.ndarray, name: str = "tensor") -> None:
    write_tensors(path, {name: arr})


def read_tensor(path, name: str | None = None) -> np.ndarray:
    tensors = read_tensors(path)
    if name is None:
        if len(tensors) != 1:
            raise FormatError(f"{path} holds {len(tensors)} tensors; pass a name")
        return next(iter(tensors.values()))
    try:
        return tensors[name]
    except KeyError:
        raise FormatError(f"{path} has no tensor named {name!r}") from None


# ---------------------------------------------------------------------------
# PPM
# ---------------------------------------------------------------------------

def encode_ppm(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"PPM needs an [H, W, 3] image, got {img.shape}")
    H, W, _ = img.shape
    payload = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    return f"P6\n{W} {H}\n255\n".encode("ascii") + payload.tobytes()


def _ppm_tokens(buf: bytes, count: int):
    """Yield ``count`` header integers; return the payload offset."""
    pos, tokens = 2, []
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("malformed PPM header")
        tokens.append(int(buf[start:pos]))
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise FormatError("malformed PPM header: missing separator before payload")
    return tokens, pos + 1


def decode_ppm(buf: bytes) -> np.ndarray:
    if buf[:2] != b"P6":
        raise FormatError(f"unsupported PPM magic {buf[:2]!r}; only binary P6 is read")
    (W, H, maxval), offset = _ppm_tokens(buf, 3)
    if W < 1 or H < 1:
        raise FormatError(f"bad PPM extents {W}x{H}")
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    need = W * H * 3
    payload = buf[offset:offset + need]
    if len(payload) != need:
        raise FormatError("truncated PPM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(H, W, 3).astype(np.float64) / 255.0


def write_image(path, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(img))


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())
