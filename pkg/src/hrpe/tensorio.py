"""Binary tensor files: named axes, complex payload, bit-exact round trip.

Layout (little-endian): magic ``HRPE``, version u16, element tag u8
(0 = complex64, 1 = complex128), axis count u16, then per axis a u16
name length + UTF-8 name + u64 axis length, then the payload row-major in
the declared axis order with interleaved re/im parts.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"HRPE"
VERSION = 1

_TAGS = {0: np.complex64, 1: np.complex128}
_DTYPES = {np.dtype(np.complex64): 0, np.dtype(np.complex128): 1}


class TensorFormatError(ValueError):
    "Raised for malformed, truncated, or unsupported tensor files."


def write_tensor(path, data: np.ndarray, axes: list[tuple[str, int]]) -> None:
    """Write ``data`` with named axes; real input is widened to complex128."""
    data = np.asarray(data)
    if not np.iscomplexobj(data):
        data = data.astype(np.complex128)
    if data.dtype not in _DTYPES:
        data = data.astype(np.complex128)
    if len(axes) != data.ndim:
        raise ValueError(f"{len(axes)} axis entries for a {data.ndim}-D tensor")
    for (name, length), actual in zip(axes, data.shape):
        if length != actual:
            raise ValueError(f"axis {name!r} declared {length}, data has {actual}")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<HBH", VERSION, _DTYPES[data.dtype], data.ndim)
    for name, length in axes:
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded)) + encoded
        blob += struct.pack("<Q", length)
    blob += np.ascontiguousarray(data).astype(data.dtype.newbyteorder("<")).tobytes()
    Path(path).write_bytes(bytes(blob))


def read_tensor(path) -> tuple[np.ndarray, list[tuple[str, int]]]:
    """Read a tensor file; returns (data, [(axis name, length), ...])."""
    raw = Path(path).read_bytes()
    if len(raw) < 9 or raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: not a tensor file (bad magic)")
    version, tag, n_axes = struct.unpack_from("<HBH", raw, 4)
    if version != VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    if tag not in _TAGS:
        raise TensorFormatError(f"{path}: unknown element type tag {tag}")
    offset = 9
    axes: list[tuple[str, int]] = []
    for _ in range(n_axes):
        if offset + 2 > len(raw):
            raise TensorFormatError(f"{path}: truncated axis table")
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        if offset + name_len + 8 > len(raw):
            raise TensorFormatError(f"{path}: truncated axis table")
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (length,) = struct.unpack_from("<Q", raw, offset)
        offset += 8
        axes.append((name, int(length)))
    dtype = np.dtype(_TAGS[tag]).newbyteorder("<")
    count = int(np.prod([length for _, length in axes], dtype=np.int64)) \
        if axes else 1
    expected = offset + count * dtype.itemsize
    if len(raw) != expected:
        raise TensorFormatError(
            f"{path}: payload length {len(raw) - offset} does not match "
            f"declared {count * dtype.itemsize} bytes")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    shape = tuple(length for _, length in axes)
    return data.reshape(shape).astype(_TAGS[tag]), axes
