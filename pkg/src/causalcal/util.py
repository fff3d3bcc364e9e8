"""Hashing and deterministic JSON output helpers."""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a content hash."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK
    return h


def fnv1a64_file(path: str, chunk: int = 1 << 20) -> int:
    h = _FNV_OFFSET
    with open(path, "rb") as fh:
        while True:
            block = fh.read(chunk)
            if not block:
                return h
            for byte in block:
                h ^= byte
                h = (h * _FNV_PRIME) & _MASK


def hash_indices(idx) -> str:
    """Stable hex digest of an index set (order-insensitive)."""
    arr = np.sort(np.asarray(idx, dtype=np.int64))
    return f"{fnv1a64(arr.tobytes()):016x}"


def stable_dumps(obj) -> str:
    """Canonical JSON text: sorted keys, no float mangling, LF newline."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temp file and rename so readers never see partial output."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path: str, obj) -> None:
    atomic_write_text(path, stable_dumps(obj))
