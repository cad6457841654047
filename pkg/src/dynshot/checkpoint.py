"""Binary parameter checkpoints ("DYNP" format, version 1).

Layout, all little-endian::

    b"DYNP" | u32 version | u32 count
    count x ( u16 name_len | name (utf-8) | u8 rank | rank x u32 extent | float64 data )
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"DYNP"
VERSION = 1


class CheckpointError(Exception):
    pass


def dumps(params: Mapping[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, value in params.items():
        value = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"parameter name too long: {name[:40]}...")
        if value.ndim > 0xFF:
            raise CheckpointError(f"rank too large for {name!r}")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", value.ndim))
        out.append(struct.pack(f"<{value.ndim}I", *value.shape))
        out.append(np.ascontiguousarray(value).tobytes(order="C"))
    return b"".join(out)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError("bad magic; not a DYNP checkpoint")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported DYNP version {version}")
    pos = 12
    params: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            if len(name.encode("utf-8")) != nlen:
                raise CheckpointError("truncated parameter name")
            pos += nlen
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            end = pos + 8 * size
            if end > len(blob):
                raise CheckpointError(f"truncated data for {name!r}")
            params[name] = np.frombuffer(blob, dtype="<f8", count=size,
                                         offset=pos).reshape(shape).astype(np.float64)
            pos = end
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if pos != len(blob):
        raise CheckpointError(f"length mismatch: {len(blob) - pos} trailing bytes")
    return params


def save(params: Mapping[str, np.ndarray], path: str | Path) -> None:
    Path(path).write_bytes(dumps(params))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
