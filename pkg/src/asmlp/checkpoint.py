"""Bit-exact named-tensor container.

Layout (all integers little-endian)::

    b"ASMLPCK1" | u32 version | u32 count
    count x ( u16 name_len | name (utf-8) | u8 dtype | u8 rank | rank x u32 dim | data )
    u64 crc64 of every preceding byte

dtype codes: 1 = float32, 2 = float64. Data is row-major. The checksum is
CRC-64/XZ.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from . import kernels

MAGIC = b"ASMLPCK1"
VERSION = 1
DTYPE_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}
CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def encode(tensors, version=VERSION):
    parts = [MAGIC, struct.pack("<II", version, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in DTYPE_CODES:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise CheckpointError(f"{name}: rank {arr.ndim} too large")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", DTYPE_CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=CODE_DTYPES[DTYPE_CODES[arr.dtype]]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", kernels.crc64(body))


def decode(blob):
    """Return ``(tensors, version)`` from checkpoint bytes."""
    if len(blob) < len(MAGIC) + 16 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    body, (stored,) = blob[:-8], struct.unpack("<Q", blob[-8:])
    actual = kernels.crc64(body)
    if actual != stored:
        raise CheckpointError(f"checksum mismatch: stored {stored:016x}, computed {actual:016x}")
    pos = len(MAGIC)
    version, count = struct.unpack_from("<II", body, pos)
    pos += 8
    tensors = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos : pos + nlen].decode("utf-8")
            pos += nlen
            code, rank = struct.unpack_from("<BB", body, pos)
            pos += 2
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            if code not in CODE_DTYPES:
                raise CheckpointError(f"{name}: unknown dtype code {code}")
            dtype = CODE_DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(body):
                raise CheckpointError(f"{name}: truncated data")
            arr = np.frombuffer(body, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos)
            tensors[name] = arr.reshape(dims).astype(dtype.newbyteorder("="), copy=True)
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    if pos != len(body):
        raise CheckpointError(f"{len(body) - pos} trailing bytes before checksum")
    return tensors, version


def save(path, tensors, version=VERSION):
    blob = encode(tensors, version)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
