"""Binary container for named float64 arrays.

Layout (all integers little-endian):

    magic    4 bytes  b"KDPC"
    version  u32      currently 1
    count    u64      number of records
    then per record, in the order written:
        name_len  u32
        name      name_len bytes, utf-8
        rank      u32
        extents   u64 * rank
        payload   extent product * 8 bytes, float64 little-endian, C order

Writers emit records sorted by name so identical state always produces
identical bytes. Readers accept any order but reject duplicates.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"KDPC"
VERSION = 1


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(arrays))]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8", order="C")
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (count,) = struct.unpack_from("<Q", buf, 8)
    pos = 16
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", buf, pos) if rank else ()
            pos += 8 * rank
            n = int(np.prod(shape)) if rank else 1
            end = pos + 8 * n
            if end > len(buf):
                raise CheckpointError(f"{path}: truncated payload for {name!r}")
            arr = np.frombuffer(buf[pos:end], dtype="<f8").reshape(shape).copy()
            pos = end
            if name in out:
                raise CheckpointError(f"{path}: duplicate record {name!r}")
            out[name] = arr
    except (struct.error, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: malformed record structure") from e
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return out
