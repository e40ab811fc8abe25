"""Checkpoint file format: ordered named float32 arrays.

Layout (all little-endian):
    magic "CKPT", u16 version(=1), u32 entry count, then per entry:
    u16 name byte length, name UTF-8, u8 ndim, u32 per dim, f32 payload.
Entry order is preserved, so a round trip is byte-deterministic.
"""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"CKPT"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, named_arrays) -> None:
    items = list(named_arrays.items())
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(items))]
    for name, arr in items:
        arr = np.asarray(arr, dtype=np.float32)  # tobytes() emits C order
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (version, count), off = struct.unpack("<HI", blob[4:10]), 10
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off) if ndim else ()
        off += 4 * ndim
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        out[name] = arr.copy()
    if off != len(blob):
        raise CheckpointError("trailing bytes in checkpoint")
    return out
