"""Versioned binary checkpoints: named float64 tensors plus string metadata.

Layout (little-endian):
  magic "RCLN" | u32 version | u32 n_meta | (u32 klen, key, u32 vlen, value)*
  | u32 n_tensors | (u32 name_len, name, u32 rank, u32 extents[rank],
                     float64 row-major data)*
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import CorpusError, InvalidArgument, InvalidState

MAGIC = b"RCLN"
VERSION = 1


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_checkpoint(path, params: dict, meta: dict[str, str] | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = meta or {}
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(meta))]
    for k, v in meta.items():
        chunks.append(_pack_str(k))
        chunks.append(_pack_str(str(v)))
    chunks.append(struct.pack("<I", len(params)))
    for name, value in params.items():
        arr = np.ascontiguousarray(
            value.data if isinstance(value, Tensor) else value, dtype=np.float64)
        chunks.append(_pack_str(name))
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    path.write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorpusError(f"truncated checkpoint {self.path}")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise InvalidState(f"missing checkpoint file: {path}")
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != MAGIC:
        raise CorpusError(f"{path} is not a checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CorpusError(f"{path}: unsupported checkpoint version {version}")
    meta = {}
    for _ in range(r.u32()):
        k = r.string()
        meta[k] = r.string()
    params = {}
    for _ in range(r.u32()):
        name = r.string()
        rank = r.u32()
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape)
        params[name] = np.array(data)  # own the memory
    return params, meta


def restore_params(target: dict[str, Tensor], loaded: dict[str, np.ndarray]) -> None:
    """Copy loaded arrays into an existing named-parameter dict (shape-checked)."""
    missing = sorted(set(target) - set(loaded))
    extra = sorted(set(loaded) - set(target))
    if missing or extra:
        raise InvalidArgument(
            f"checkpoint/model parameter mismatch (missing={missing}, extra={extra})")
    for name, tensor in target.items():
        arr = loaded[name]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise InvalidArgument(
                f"shape mismatch for {name}: checkpoint {arr.shape} vs model {tensor.shape}")
        tensor.data[...] = arr.astype(tensor.dtype)
