"""Binary little-endian parameter files.

Layout::

    header (16 bytes): magic b"CFAUDIT\\0" | version u16 | kind u16 | n_arrays u32
    per array:         name_len u16 | name utf-8 | dtype u8 | ndim u8 | shape u64*ndim | data

Metadata travels as a JSON-encoded ``uint8`` array named ``__meta__``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CFAUDIT\x00"
VERSION = 1
KIND_CLASSIFIER = 1
KIND_NETWORK = 2

_DTYPES = {0: "<f8", 1: "<i8", 2: "u1"}
_CODES = {np.dtype("<f8"): 0, np.dtype("<i8"): 1, np.dtype("u1"): 2}


class StoreError(ValueError):
    pass


def _encode_array(arr) -> tuple[int, np.ndarray]:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        arr = arr.astype("<f8")
    elif arr.dtype.kind in "iub" and arr.dtype != np.dtype("u1"):
        arr = arr.astype("<i8")
    code = _CODES.get(arr.dtype)
    if code is None:
        raise StoreError(f"unsupported dtype {arr.dtype}")
    return code, np.array(arr, order="C", copy=True)


def dumps(arrays: dict, meta: dict | None = None, kind: int = KIND_CLASSIFIER) -> bytes:
    items = dict(arrays)
    if meta is not None:
        items["__meta__"] = np.frombuffer(
            json.dumps(meta, sort_keys=True).encode("utf-8"), dtype="u1"
        )
    out = [MAGIC, struct.pack("<HHI", VERSION, kind, len(items))]
    for name in sorted(items):
        code, arr = _encode_array(items[name])
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack("<BB", code, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def loads(blob: bytes, kind: int | None = None) -> tuple[dict, dict]:
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise StoreError("not a parameter file (bad magic)")
    version, file_kind, n = struct.unpack_from("<HHI", blob, 8)
    if version != VERSION:
        raise StoreError(f"unsupported store version {version}")
    if kind is not None and file_kind != kind:
        raise StoreError(f"expected kind {kind}, file has kind {file_kind}")
    pos = 16
    arrays = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + ln].decode("utf-8")
        pos += ln
        code, ndim = struct.unpack_from("<BB", blob, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
        pos += 8 * ndim
        dt = np.dtype(_DTYPES[code])
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        arrays[name] = np.frombuffer(blob, dtype=dt, count=size // dt.itemsize, offset=pos).reshape(shape).copy()
        pos += size
    meta = {}
    if "__meta__" in arrays:
        meta = json.loads(arrays.pop("__meta__").tobytes().decode("utf-8"))
    return arrays, meta


def save(path, arrays: dict, meta: dict | None = None, kind: int = KIND_CLASSIFIER) -> str:
    """Write a parameter file; returns its sha256 fingerprint."""
    blob = dumps(arrays, meta, kind)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load(path, kind: int | None = None) -> tuple[dict, dict]:
    return loads(Path(path).read_bytes(), kind)
