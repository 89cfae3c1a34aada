"""Checkpoint format: JSON header + raw little-endian f32 blocks.

    bytes 0..3   magic b"CTCK"
    bytes 4..7   header length (u32 LE)
    header       UTF-8 JSON, sorted keys: arch, step, extra, arrays=[[name, shape], ...]
    payload      each array as <f4, C order, in header order

Byte-stable across platforms for identical contents.
"""

import json
import struct

import numpy as np

MAGIC = b"CTCK"


def save_checkpoint(path, arch, arrays, step=0, extra=None):
    """arrays: list of (name, ndarray-or-Tensor) in a stable order."""
    arrays = [(name, getattr(a, "data", a)) for name, a in arrays]
    header = {
        "arch": arch,
        "step": int(step),
        "extra": extra or {},
        "arrays": [[name, list(a.shape)] for name, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (header dict, {name: f32 ndarray})."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        out = {}
        for name, shape in header["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            a = np.frombuffer(f.read(4 * count), dtype="<f4").reshape(shape)
            out[name] = a.astype(np.float32)
    return header, out
