"""Binary parameter checkpoints: JSON manifest + little-endian float32 blob."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"EKGC1"
EMBED_MAGIC = b"EKGE1"


class CheckpointError(IOError):
    pass


def save_arrays(path, arrays: dict[str, np.ndarray], magic: bytes = MAGIC,
                extra: dict | None = None):
    """Write named float arrays plus an optional JSON `extra` section."""
    entries = []
    offset = 0
    blob = bytearray()
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        raw = a.tobytes()
        blob.extend(raw)
        offset += len(raw)
    manifest = json.dumps({"params": entries, "extra": extra or {}},
                          sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        fh.write(bytes(blob))


def load_arrays(path, magic: bytes = MAGIC) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(magic))
        if head != magic:
            raise CheckpointError(f"{path}: bad magic {head!r}, expected {magic!r}")
        (mlen,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(mlen).decode("utf-8"))
        blob = fh.read()
    arrays = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float32)
    return arrays, manifest.get("extra", {})
