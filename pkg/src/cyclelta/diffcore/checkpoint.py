"""Binary checkpoint format (little-endian).

    b"CKPT" | u32 version=1 | u32 count
    per tensor: u32 name_len | utf-8 name | u32 rank | u32 dims[rank] | f32 data (row-major)
"""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from ..errors import DataError

MAGIC = b"CKPT"
VERSION = 1


def encode(tensors: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(chunks)


def decode(buf: bytes, source: str = "<bytes>") -> Dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise DataError(f"{source}: not a checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise DataError(f"{source}: unsupported checkpoint version {version}")
        off = 12
        out: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off : off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<I", buf, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if off + 4 * size > len(buf):
                raise DataError(f"{source}: truncated data for {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(dims).copy()
            off += 4 * size
    except struct.error as exc:
        raise DataError(f"{source}: truncated checkpoint") from exc
    if off != len(buf):
        raise DataError(f"{source}: {len(buf) - off} trailing bytes")
    return out


def save(path: Union[str, Path], tensors: Mapping[str, np.ndarray]) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(encode(tensors))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read checkpoint ({exc.strerror})") from exc
    return decode(buf, str(path))
