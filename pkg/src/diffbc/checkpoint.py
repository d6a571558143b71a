"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic           8 bytes  b"DBC1CKPT"
    payload:
        version     u32
        meta_len    u32
        meta        UTF-8 JSON, canonical (sorted keys)
        n_tensors   u32
        tensor*     name_len u16 | name UTF-8 | ndim u8 | dims u64*ndim |
                    row-major float64 little-endian data
    checksum        u64 = first 8 little-endian bytes of SHA-256(payload)

Round-trips are bit-exact; tensors are written in sorted-name order so the
same contents always produce the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .errors import ArtifactError, CorruptArtifactError

MAGIC = b"DBC1CKPT"
VERSION = 1


def _checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


def save_checkpoint(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    parts = [struct.pack("<I", VERSION)]
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack("<I", len(meta_bytes)))
    parts.append(meta_bytes)
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        parts.append(arr.astype("<f8", copy=False).tobytes())
    payload = b"".join(parts)
    blob = MAGIC + payload + struct.pack("<Q", _checksum(payload))
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise ArtifactError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < len(MAGIC) + 16 or blob[: len(MAGIC)] != MAGIC:
        raise CorruptArtifactError(f"{path}: not a checkpoint file (bad magic)")
    payload, (stored,) = blob[len(MAGIC) : -8], struct.unpack("<Q", blob[-8:])
    if _checksum(payload) != stored:
        raise CorruptArtifactError(f"{path}: checksum mismatch, file is corrupt")

    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(payload):
            raise CorruptArtifactError(f"{path}: truncated payload")
        chunk = payload[off : off + n]
        off += n
        return chunk

    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CorruptArtifactError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<I", take(4))
    meta = json.loads(take(meta_len).decode("utf-8"))
    (n_tensors,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim)) if ndim else ()
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64)
        tensors[name] = data.reshape(shape)
    if off != len(payload):
        raise CorruptArtifactError(f"{path}: trailing bytes in payload")
    return meta, tensors


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
