"""Binary checkpoint format.

Layout (all integers unsigned 32-bit little-endian)::

    b"GACP" | version | tensor count
    per tensor: name length | UTF-8 name | rank | dims... | float32 LE data

The network layer plan travels inside the file as a rank-1 tensor named
``__network__`` whose elements are the bytes of its JSON description, so a
checkpoint can be loaded without any outside shape metadata.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from ..errors import BadMagic, CheckpointError, TruncatedFile, VersionMismatch
from ..nn.network import NetworkSpec, load_state

MAGIC = b"GACP"
VERSION = 1
SPEC_TENSOR = "__network__"


def encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(f"checkpoint ends at byte {len(self.data)}, needed {self.pos + n}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def decode_tensors(data: bytes) -> dict[str, np.ndarray]:
    r = _Reader(data)
    if len(data) < 4 or r.take(4) != MAGIC:
        raise BadMagic("not a GACP checkpoint")
    version = r.u32()
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, this build reads {VERSION}")
    out = {}
    for _ in range(r.u32()):
        try:
            name = r.take(r.u32()).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"tensor name is not UTF-8: {e}") from None
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last tensor")
    return out


def save_tensors(tensors: dict[str, np.ndarray], path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_tensors(tensors))
    os.replace(tmp, path)


def load_tensors(path) -> dict[str, np.ndarray]:
    return decode_tensors(Path(path).read_bytes())


def save_checkpoint(net: NetworkSpec, path) -> None:
    spec_bytes = np.frombuffer(net.describe().encode("utf-8"), dtype=np.uint8)
    tensors = {SPEC_TENSOR: spec_bytes.astype(np.float32)}
    tensors.update(net.state())
    save_tensors(tensors, path)


def load_checkpoint(path) -> NetworkSpec:
    """Rebuild a network, layer plan and parameters, from a checkpoint file."""
    tensors = load_tensors(path)
    if SPEC_TENSOR not in tensors:
        raise CheckpointError(f"{path}: no {SPEC_TENSOR} entry")
    text = tensors.pop(SPEC_TENSOR).astype(np.uint8).tobytes().decode("utf-8")
    net = NetworkSpec.from_description(text)
    return load_state(net, tensors)
