"""Binary checkpoint container.

Layout, all little-endian:

    magic   8 bytes  b"MTSNNCKP"
    version u32      currently 1
    meta    u32 length + UTF-8 JSON (epoch, seed, run id, ...)
    rng     u32 length + UTF-8 JSON (numpy bit-generator state)
    count   u32      number of named tensors
    per tensor:
        name   u16 length + UTF-8 bytes
        dtype  u8   0 = float32, 1 = float64, 2 = int64
        ndim   u8
        dims   u32 * ndim
        data   u64 byte length + raw little-endian array bytes

Named tensors cover parameters, optimizer velocities and batch-norm
running statistics, so a restored run continues bit-exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"MTSNNCKP"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


class CheckpointError(ValueError):
    """Raised on malformed checkpoint bytes."""


def save_checkpoint(path: str, arrays: dict[str, np.ndarray], meta: dict,
                    rng_state: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for blob in (meta, rng_state or {}):
            raw = json.dumps(blob, sort_keys=True).encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            shape = np.asarray(arr).shape  # ascontiguousarray promotes 0-d to 1-d
            arr = np.ascontiguousarray(arr)
            if arr.dtype not in _CODES:
                raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
            nm = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nm)))
            fh.write(nm)
            fh.write(struct.pack("<BB", _CODES[arr.dtype], len(shape)))
            for d in shape:
                fh.write(struct.pack("<I", d))
            payload = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict, dict]:
    """Returns (arrays, meta, rng_state)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 4 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")

    blobs = []
    for _ in range(2):
        (ln,) = struct.unpack_from("<I", raw, off)
        off += 4
        blobs.append(json.loads(raw[off:off + ln].decode("utf-8")))
        off += ln
    meta, rng_state = blobs

    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        code, ndim = struct.unpack_from("<BB", raw, off)
        off += 2
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: tensor {name} has unknown dtype code {code}")
        dims = struct.unpack_from(f"<{ndim}I", raw, off) if ndim else ()
        off += 4 * ndim
        (blen,) = struct.unpack_from("<Q", raw, off)
        off += 8
        arr = np.frombuffer(raw, dtype=_DTYPES[code], count=blen // _DTYPES[code].itemsize,
                            offset=off).reshape(dims)
        off += blen
        arrays[name] = arr.copy()
    return arrays, meta, rng_state
