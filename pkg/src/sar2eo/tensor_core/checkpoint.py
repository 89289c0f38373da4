"""Binary tensor archive.

Layout: the 4-byte magic ``S2E1`` followed by one record per tensor until
end of file. A record is ``u32 name_len | name (utf-8) | u32 rank |
u32 extent * rank | f32 values`` with every integer and float little-endian.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

from ..errors import DataError

MAGIC = b"S2E1"
_U32 = struct.Struct("<I")


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        buf.write(_U32.pack(len(raw)))
        buf.write(raw)
        buf.write(_U32.pack(arr.ndim))
        for extent in arr.shape:
            buf.write(_U32.pack(extent))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> Dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise DataError("not a checkpoint: bad magic")
    out: Dict[str, np.ndarray] = {}
    pos = 4
    try:
        while pos < len(blob):
            (name_len,) = _U32.unpack_from(blob, pos)
            pos += 4
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = _U32.unpack_from(blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * count > len(blob):
                raise DataError(f"checkpoint truncated inside {name!r}")
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(shape)
            pos += 4 * count
            out[name] = arr.astype(np.float32)
    except struct.error as exc:
        raise DataError(f"checkpoint truncated: {exc}") from None
    return out


def save_tensors(path, tensors: Mapping[str, np.ndarray]):
    Path(path).write_bytes(dumps(tensors))


def load_tensors(path) -> Dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
