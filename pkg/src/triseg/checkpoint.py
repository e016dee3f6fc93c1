"""Self-contained binary checkpoints with bit-exact round trips.

Layout (all integers little-endian):

    magic            8 bytes  b"TRICON01" (format + version)
    iteration        u64
    parameter count  u32, then per entry (lexicographic by name):
        name length  u16, name UTF-8 bytes
        ndim         u8, dims u32 each
        data         float64 little-endian, C order
    velocity count   u32, entries as above
    rng state length u32, canonical JSON (UTF-8)

Arrays are stored in sorted name order and the RNG state as canonical JSON,
so save(load(x)) reproduces x byte for byte, and resuming restores training
to the exact byte-level trajectory of an uninterrupted run.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, MissingInputError

__all__ = ["MAGIC", "Checkpoint", "save_checkpoint", "load_checkpoint"]

MAGIC = b"TRICON01"


@dataclass
class Checkpoint:
    iteration: int
    params: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray]
    rng_state: dict


def _pack_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    chunks = [struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        name_b = name.encode()
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    return b"".join(chunks)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    rng_json = json.dumps(ckpt.rng_state, sort_keys=True, separators=(",", ":")).encode()
    blob = b"".join(
        [
            MAGIC,
            struct.pack("<Q", ckpt.iteration),
            _pack_arrays(ckpt.params),
            _pack_arrays(ckpt.velocity),
            struct.pack("<I", len(rng_json)),
            rng_json,
        ]
    )
    Path(path).write_bytes(blob)


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"truncated checkpoint {self.path} (needed {n} bytes at offset {self.pos})")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return vals[0] if len(vals) == 1 else vals


def _read_arrays(r: _Reader) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for _ in range(r.unpack("<I")):
        name = r.take(r.unpack("<H")).decode()
        ndim = r.unpack("<B")
        shape = tuple(struct.unpack(f"<{ndim}I", r.take(4 * ndim))) if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape)
        arrays[name] = data.astype(np.float64)
    return arrays


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"no such checkpoint: {path}")
    r = _Reader(path.read_bytes(), path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path} is not a {MAGIC.decode()} checkpoint")
    iteration = r.unpack("<Q")
    params = _read_arrays(r)
    velocity = _read_arrays(r)
    try:
        rng_state = json.loads(r.take(r.unpack("<I")).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: malformed RNG state block: {e}") from None
    if r.pos != len(r.blob):
        raise CheckpointError(f"{path}: {len(r.blob) - r.pos} trailing bytes after checkpoint payload")
    return Checkpoint(iteration=int(iteration), params=params, velocity=velocity, rng_state=rng_state)
