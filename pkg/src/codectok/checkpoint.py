"""Binary checkpoint container (magic "CPNN").

Layout, all little-endian:
  magic 4 bytes "CPNN" | version u16 | repeated records until EOF:
    name_len u16 | name utf-8 | rank u8 | dims u32 x rank | f64 data

Round-trips are bit-exact and platform-independent.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"CPNN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(state: dict[str, np.ndarray], path: str) -> int:
    """Write parameters in insertion order; returns bytes written."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<H", VERSION)
    for name, array in state.items():
        encoded = name.encode("utf-8")
        array = np.asarray(array, dtype=np.float64)  # ascontiguousarray would promote 0-d to 1-d
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", array.ndim)
        blob += struct.pack(f"<{array.ndim}I", *array.shape)
        blob += array.astype("<f8").tobytes()
    tmp_fd, tmp_path = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(tmp_fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
    return len(blob)


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a CPNN checkpoint")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported CPNN version {version}")
    state: dict[str, np.ndarray] = {}
    offset = 6
    while offset < len(blob):
        try:
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            end = offset + 8 * count
            if end > len(blob):
                raise struct.error("data record extends past end of file")
            data = np.frombuffer(blob[offset:end], dtype="<f8").reshape(dims)
            offset = end
        except (struct.error, UnicodeDecodeError) as exc:
            raise CheckpointError(
                f"{path}: truncated or corrupt record at byte {offset}: {exc}"
            ) from exc
        state[name] = data.astype(np.float64)
    return state
