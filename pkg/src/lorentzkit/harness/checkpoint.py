"""LZKT checkpoint container.

Layout (all integers little-endian):
    magic 'LZKT', u32 version (currently 1), then records until EOF:
      u32 name length, name bytes (utf-8),
      u8 dtype tag (1 = float32, 2 = float64),
      u32 rank, rank x u64 shape dims,
      raw little-endian array data.

Loading reproduces arrays bitwise at the stored precision; loading float64
records into a float32 run downcasts explicitly and reports a warning record
per downcast tensor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CheckpointFormatError

_MAGIC = b"LZKT"
_VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_TAG_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


@dataclass
class LoadResult:
    tensors: dict[str, np.ndarray]
    version: int
    warnings: list[str] = field(default_factory=list)


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            if arr.dtype not in _DTYPE_TAGS:
                raise CheckpointFormatError(f"unsupported dtype {arr.dtype} for {name!r}")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", _DTYPE_TAGS[arr.dtype]))
            f.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<Q", dim))
            f.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path: str | Path, dtype=None) -> LoadResult:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise CheckpointFormatError(f"{path}: too short for an LZKT header")
    if data[:4] != _MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {data[:4]!r} (expected {_MAGIC!r})")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != _VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    off = 8
    tensors: dict[str, np.ndarray] = {}
    warnings: list[str] = []
    want = np.dtype(dtype) if dtype is not None else None
    while off < len(data):
        try:
            (nlen,) = struct.unpack_from("<I", data, off)
            off += 4
            if len(data) - off < nlen:
                raise CheckpointFormatError(f"{path}: truncated record name")
            name = data[off:off + nlen].decode("utf-8")
            off += nlen
            (tag,) = struct.unpack_from("<B", data, off)
            off += 1
            if tag not in _TAG_DTYPES:
                raise CheckpointFormatError(f"{path}: unknown dtype tag {tag} in {name!r}")
            (rank,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}Q", data, off)
            off += 8 * rank
            dt = _TAG_DTYPES[tag]
            count = int(np.prod(shape)) if rank else 1
            nbytes = count * dt.itemsize
            if off + nbytes > len(data):
                raise CheckpointFormatError(f"{path}: truncated data for {name!r}")
            arr = np.frombuffer(data, dtype=dt, count=count, offset=off).reshape(shape).copy()
            off += nbytes
        except struct.error as e:
            raise CheckpointFormatError(f"{path}: truncated record ({e})") from e
        if want is not None and arr.dtype != want:
            if arr.dtype.itemsize > want.itemsize:
                warnings.append(f"downcast {name} from {arr.dtype.name} to {want.name}")
            arr = arr.astype(want)
        tensors[name] = arr
    return LoadResult(tensors=tensors, version=version, warnings=warnings)
