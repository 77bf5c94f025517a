"""Binary tensor archive used for checkpoints and feature files.

Layout: magic "FSTA", version u32, entry count u32; per entry:
name (u16 length + UTF-8 bytes), dtype code u8 (0=f32, 1=f64), rank u8,
extents as u64 each, then the raw little-endian row-major payload.
Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FSTA"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def save_archive(path, tensors: dict[str, np.ndarray]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            if arr.dtype not in _CODES:
                raise ValueError(f"unsupported dtype {arr.dtype} for entry '{name}'")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
            for ext in arr.shape:
                f.write(struct.pack("<Q", ext))
            f.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def load_archive(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not a tensor archive (bad magic)")
        version, count = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported archive version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            code, rank = struct.unpack("<BB", f.read(2))
            if code not in _DTYPES:
                raise ValueError(f"{path}: unknown dtype code {code}")
            shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(rank))
            dt = _DTYPES[code]
            n = int(np.prod(shape)) if shape else 1
            payload = f.read(n * dt.itemsize)
            if len(payload) != n * dt.itemsize:
                raise ValueError(f"{path}: truncated payload for entry '{name}'")
            arr = np.frombuffer(payload, dtype=dt).reshape(shape)
            out[name] = arr.astype(arr.dtype.newbyteorder("=")).reshape(shape)
        return out
