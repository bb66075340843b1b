"""Binary checkpoint: named float64 tensors plus a JSON metadata header.

Layout (all integers little-endian):
    magic  b"NLCK1\\n"
    u32    length of UTF-8 JSON metadata blob
    bytes  metadata
    u32    tensor count
    per tensor:
        u32 name length, bytes name (UTF-8)
        u32 rows, u32 cols
        rows*cols float64 values, row-major, little-endian
"""

import json
import struct

import numpy as np

from ..errors import DataFormatError

_MAGIC = b"NLCK1\n"


def save_tensors(path, tensors, metadata=None):
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in sorted(tensors.items()):
            arr = np.ascontiguousarray(arr, dtype="<f8")
            if arr.ndim != 2:
                raise ValueError(f"tensor {name!r} must be 2-D, got {arr.shape}")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
            fh.write(arr.tobytes())


def load_tensors(path):
    """Returns (tensors: dict[str, ndarray], metadata: dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(blob):
            raise DataFormatError(
                f"truncated checkpoint while reading {what}",
                path=path, byte_offset=off,
            )
        out = blob[off:off + n]
        off += n
        return out

    if take(len(_MAGIC), "magic") != _MAGIC:
        raise DataFormatError("bad checkpoint magic", path=path, byte_offset=0)
    (meta_len,) = struct.unpack("<I", take(4, "metadata length"))
    metadata = json.loads(take(meta_len, "metadata").decode("utf-8"))
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        rows, cols = struct.unpack("<II", take(8, f"shape of {name!r}"))
        raw = take(rows * cols * 8, f"data of {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()
    return tensors, metadata
