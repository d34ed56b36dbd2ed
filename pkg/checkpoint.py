"""
Versioned, checksummed named-tensor container for NetworkState.

Layout (little-endian):
    magic            9 bytes  b"NESTFUSE1"
    version          uint32
    meta length      uint32, then UTF-8 JSON (CheckpointMeta), then crc32 uint32
    entry count      uint32
    per entry:
        name length  uint16, name UTF-8
        ndim         uint8, dims uint32 x ndim
        dtype        uint8 (1 = float32)
        data length  uint64, data bytes (row-major)
        crc32        uint32 of the data bytes
"""
import logging
import struct
import zlib
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from dataclasses_json import dataclass_json

from errors import (
    BadMagicError,
    CheckpointError,
    ChecksumError,
    TopologyMismatchError,
    VersionMismatchError,
)
from image_io import atomic_output
from network import SCALE_CHANNELS, NetworkState, parameter_shapes

MAGIC = b"NESTFUSE1"
FORMAT_VERSION = 1
TOPOLOGY_NAME = "nestfuse"
DTYPE_FLOAT32 = 1


@dataclass_json
@dataclass
class CheckpointMeta:
    topology: str = TOPOLOGY_NAME
    channel_plan: List[int] = field(default_factory=lambda: list(SCALE_CHANNELS))
    deep_supervision: bool = False
    ssim_weight: Optional[float] = None
    iteration: int = 0


class _Reader:
    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, count):
        if self.offset + count > len(self.data):
            raise ChecksumError(
                f"Checkpoint truncated at byte {len(self.data)} (needed {self.offset + count})"
            )
        chunk = self.data[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def encode_checkpoint(state: NetworkState, meta: Optional[CheckpointMeta] = None):
    meta = replace(meta or CheckpointMeta(), deep_supervision=state.deep_supervision)
    meta_bytes = meta.to_json(sort_keys=True).encode("utf-8")

    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    parts.append(struct.pack("<I", len(meta_bytes)))
    parts.append(meta_bytes)
    parts.append(struct.pack("<I", zlib.crc32(meta_bytes)))

    names = list(parameter_shapes(state.deep_supervision))
    parts.append(struct.pack("<I", len(names)))
    for name in names:
        array = np.ascontiguousarray(state.tensors[name], dtype="<f4")
        encoded_name = name.encode("utf-8")
        data = array.tobytes(order="C")
        parts.append(struct.pack("<H", len(encoded_name)))
        parts.append(encoded_name)
        parts.append(struct.pack("<B", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(struct.pack("<B", DTYPE_FLOAT32))
        parts.append(struct.pack("<Q", len(data)))
        parts.append(data)
        parts.append(struct.pack("<I", zlib.crc32(data)))
    return b"".join(parts)


def decode_checkpoint(data: bytes):
    """Parse checkpoint bytes into (NetworkState, CheckpointMeta)."""
    reader = _Reader(data)
    if reader.data[:len(MAGIC)] != MAGIC:
        raise BadMagicError("Not a NestFuse checkpoint (bad magic)")
    reader.take(len(MAGIC))
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"Checkpoint version {version}, expected {FORMAT_VERSION}")

    (meta_length,) = reader.unpack("<I")
    meta_bytes = reader.take(meta_length)
    (meta_crc,) = reader.unpack("<I")
    if zlib.crc32(meta_bytes) != meta_crc:
        raise ChecksumError("Checkpoint metadata checksum failure")
    meta = CheckpointMeta.from_json(meta_bytes.decode("utf-8"))
    if meta.topology != TOPOLOGY_NAME or list(meta.channel_plan) != list(SCALE_CHANNELS):
        raise TopologyMismatchError(
            f"Checkpoint topology {meta.topology} {meta.channel_plan} is not supported"
        )

    (count,) = reader.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_length,) = reader.unpack("<H")
        name = reader.take(name_length).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        (dtype,) = reader.unpack("<B")
        (length,) = reader.unpack("<Q")
        payload = reader.take(length)
        (crc,) = reader.unpack("<I")
        if zlib.crc32(payload) != crc:
            raise ChecksumError(f"Checksum failure in entry '{name}'")
        if dtype != DTYPE_FLOAT32:
            raise TopologyMismatchError(f"Entry '{name}' has unsupported dtype code {dtype}")
        if length != 4 * int(np.prod(shape, dtype=np.int64)):
            raise ChecksumError(f"Entry '{name}' length {length} does not match shape {shape}")
        if name in tensors:
            raise TopologyMismatchError(f"Duplicate entry '{name}'")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    if reader.offset != len(data):
        raise ChecksumError(f"{len(data) - reader.offset} trailing bytes after last entry")

    expected = parameter_shapes(meta.deep_supervision)
    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing or extra:
        raise TopologyMismatchError(f"Entries do not match topology (missing={missing}, extra={extra})")
    for name, shape in expected.items():
        if tuple(tensors[name].shape) != shape:
            raise TopologyMismatchError(
                f"Entry '{name}' has shape {tensors[name].shape}, expected {shape}"
            )
    return NetworkState(tensors=tensors, deep_supervision=meta.deep_supervision), meta


def save_checkpoint(state: NetworkState, path, meta: Optional[CheckpointMeta] = None):
    payload = encode_checkpoint(state, meta)
    with atomic_output(path) as tmp:
        with open(tmp, "wb") as f:
            f.write(payload)
    logging.info("Checkpoint saved: %s (%d bytes)", path, len(payload))
    return str(path)


def load_checkpoint(path, deep_supervision: Optional[bool] = None, with_meta=False):
    """
    Load a checkpoint written by save_checkpoint.

    Parameters:
    deep_supervision (bool or None): False drops stored heads with a warning;
        True requires them; None keeps whatever the file holds.
    """
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}")
    state, meta = decode_checkpoint(data)
    if deep_supervision is False and state.deep_supervision:
        logging.warning("Checkpoint %s has deep-supervision heads; ignoring them for plain inference.", path)
        state = state.without_heads()
    elif deep_supervision and not state.deep_supervision:
        raise TopologyMismatchError(f"Checkpoint {path} has no deep-supervision heads")
    logging.info("Checkpoint loaded: %s", path)
    return (state, meta) if with_meta else state
