"""Binary checkpoint format for ParamStore contents.

Layout (all integers little-endian):
    magic   4 bytes  b"PFCK"
    version u32 = 1
    count   u32
    entries, sorted by name:
        name_len u16, name utf-8, rank u8, dims u32 each,
        payload float32 little-endian, row-major
Values are stored as float32; loading back into the float64 core keeps the
float32 value exactly, so save/load/save is byte-stable.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import DataError, ModelStateError
from .params import ParamStore

MAGIC = b"PFCK"
VERSION = 1


def save(path, store: ParamStore) -> None:
    entries = sorted(store.items())
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(entries))
    for name, tensor in entries:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise DataError(f"parameter name too long: {name!r}")
        arr = tensor.data
        if arr.ndim > 0xFF:
            raise DataError(f"parameter rank too large: {name!r}")
        blob += struct.pack("<H", len(raw))
        blob += raw
        blob += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            blob += struct.pack("<I", d)
        blob += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load(path) -> dict[str, np.ndarray]:
    """Read a checkpoint into a name -> float64 array mapping."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise DataError(f"not a checkpoint file: {path}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<B", blob, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", blob, off) if rank else ()
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off)
        off += 4 * n
        out[name] = arr.astype(np.float64).reshape(dims)
    if off != len(blob):
        raise DataError(f"trailing bytes in checkpoint: {path}")
    return out


def load_into(store: ParamStore, path) -> None:
    """Copy checkpoint values into an existing store; names and shapes must match."""
    load_into_stores(path, [store])


def save_stores(path, stores) -> None:
    """Write several stores into one checkpoint; names must not collide."""
    merged: dict = {}
    for s in stores:
        for name, tensor in s.items():
            if name in merged:
                raise DataError(f"duplicate parameter name across stores: {name!r}")
            merged[name] = tensor
    save(path, _DictStore(merged))


class _DictStore:
    def __init__(self, entries: dict):
        self._entries = entries

    def items(self):
        return self._entries.items()


def load_into_stores(path, stores) -> None:
    values = load(path)
    wanted = [(name, tensor, store) for store in stores for name, tensor in store.items()]
    missing = [n for n, _, _ in wanted if n not in values]
    extra = set(values) - {n for n, _, _ in wanted}
    if missing or extra:
        raise ModelStateError(
            f"checkpoint mismatch: missing {missing[:3]}, unexpected {sorted(extra)[:3]}"
        )
    for name, tensor, _ in wanted:
        arr = values[name]
        if arr.shape != tensor.data.shape:
            raise ModelStateError(
                f"shape mismatch for {name!r}: {arr.shape} vs {tensor.data.shape}"
            )
        tensor.data = arr
