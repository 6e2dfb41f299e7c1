"""Versioned binary checkpoints: magic tag, role, shape table, f64 payload.

Layout: 4-byte magic, u32 format version, length-prefixed role tag, config
hash, and JSON rng cursor, then a shape table of named little-endian
float64 arrays, then a CRC32 of everything after the magic. Save/load
round-trips bit-exactly; corrupt files, version mismatches, and shape
mismatches are reported as distinct errors.
"""

from __future__ import annotations

import json
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CPK1"
VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint I/O failures."""


class CorruptCheckpointError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


class ConfigHashMismatchError(CheckpointError):
    pass


@dataclass
class PolicyCheckpoint:
    role: str
    arrays: dict[str, np.ndarray]
    config_hash: str = ""
    rng_cursor: dict = field(default_factory=dict)
    version: int = VERSION


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save(path, ckpt: PolicyCheckpoint) -> None:
    body = bytearray()
    body += struct.pack("<I", ckpt.version)
    body += _pack_str(ckpt.role)
    body += _pack_str(ckpt.config_hash)
    body += _pack_str(json.dumps(ckpt.rng_cursor, sort_keys=True))
    body += struct.pack("<I", len(ckpt.arrays))
    for name, arr in ckpt.arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        body += _pack_str(name)
        body += struct.pack("<B", arr.ndim)
        body += struct.pack(f"<{max(arr.ndim, 1)}I", *(arr.shape or (0,)))
        body += arr.tobytes()
    blob = MAGIC + bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)))
    Path(path).write_bytes(blob)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpointError("truncated checkpoint file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        n = self.u32()
        if n > len(self.data):
            raise CorruptCheckpointError("corrupt length field")
        return self.take(n).decode("utf-8")


def load(path, expected_role: str | None = None, config_hash: str | None = None,
         allow_hash_mismatch: bool = False) -> PolicyCheckpoint:
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint file (bad magic)")
    body, stored_crc = data[4:-4], data[-4:]
    if zlib.crc32(body) != struct.unpack("<I", stored_crc)[0]:
        raise CorruptCheckpointError(f"{path}: CRC mismatch (corrupt or truncated)")
    r = _Reader(body)
    version = r.u32()
    if version != VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {VERSION}")
    role = r.string()
    stored_hash = r.string()
    try:
        cursor = json.loads(r.string())
    except json.JSONDecodeError as exc:
        raise CorruptCheckpointError(f"{path}: bad rng cursor: {exc}") from exc
    n_arrays = r.u32()
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        name = r.string()
        ndim = struct.unpack("<B", r.take(1))[0]
        shape = struct.unpack(f"<{max(ndim, 1)}I", r.take(4 * max(ndim, 1)))
        shape = tuple(shape[:ndim])
        count = int(np.prod(shape)) if ndim else 1
        raw = r.take(8 * count)
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    if r.pos != len(body):
        raise CorruptCheckpointError(f"{path}: trailing bytes after payload")
    if expected_role is not None and role != expected_role:
        raise CheckpointError(f"{path}: role {role!r}, expected {expected_role!r}")
    if config_hash is not None and stored_hash != config_hash:
        msg = (f"{path}: checkpoint config hash {stored_hash[:12]}... does not match "
               f"run config {config_hash[:12]}...")
        if not allow_hash_mismatch:
            raise ConfigHashMismatchError(msg + " (pass the override to load anyway)")
        warnings.warn(msg, stacklevel=2)
    return PolicyCheckpoint(role=role, arrays=arrays, config_hash=stored_hash,
                            rng_cursor=cursor, version=version)


def expect_shapes(ckpt: PolicyCheckpoint, expected: dict[str, tuple]) -> None:
    """Validate the shape table against what the caller will reconstruct."""
    for name, shape in expected.items():
        if name not in ckpt.arrays:
            raise ShapeMismatchError(f"checkpoint missing array {name!r}")
        got = ckpt.arrays[name].shape
        if tuple(got) != tuple(shape):
            raise ShapeMismatchError(f"array {name!r}: shape {got}, expected {tuple(shape)}")
