"""Binary checkpoint serialization.

Layout: magic b"OTA1", then one record per tensor in insertion order:
    u32 LE  name byte length
    UTF-8   name
    u32 LE  rank
    u64 LE  per-axis dims
    f32 LE  payload, C order
Payloads are stored as f32 regardless of the in-memory dtype.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"OTA1"


class CheckpointError(RuntimeError):
    pass


def _entries(params):
    if hasattr(params, "items"):
        for name, t in params.items():
            yield name, (t.data if hasattr(t, "data") else np.asarray(t))
    else:
        for name, t in params:
            yield name, (t.data if hasattr(t, "data") else np.asarray(t))


def save_checkpoint(path, params):
    """params: mapping or iterable of (name, Tensor-or-ndarray). Atomic write."""
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".ckpt.tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            for name, arr in _entries(params):
                nb = name.encode("utf-8")
                f.write(struct.pack("<I", len(nb)))
                f.write(nb)
                f.write(struct.pack("<I", arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
                f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, dtype=np.float32) -> dict:
    """Read a checkpoint back as an ordered {name: ndarray} dict."""
    out = {}
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) < 4:
                raise CheckpointError(f"{path}: truncated record header")
            (nlen,) = struct.unpack("<I", head)
            nb = f.read(nlen)
            if len(nb) < nlen:
                raise CheckpointError(f"{path}: truncated name")
            name = nb.decode("utf-8")
            rb = f.read(4)
            if len(rb) < 4:
                raise CheckpointError(f"{path}: truncated rank for '{name}'")
            (rank,) = struct.unpack("<I", rb)
            db = f.read(8 * rank)
            if len(db) < 8 * rank:
                raise CheckpointError(f"{path}: truncated dims for '{name}'")
            dims = struct.unpack(f"<{rank}Q", db) if rank else ()
            count = int(np.prod(dims)) if rank else 1
            payload = f.read(4 * count)
            if len(payload) < 4 * count:
                raise CheckpointError(f"{path}: truncated payload for '{name}'")
            arr = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(dtype)
            out[name] = arr
    return out
