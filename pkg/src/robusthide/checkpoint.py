"""Binary checkpoints: a versioned header followed by ordered named tensors.

Layout (all integers little-endian):

    magic      4 bytes  b"RHCK"
    version    uint32
    meta_len   uint32, then meta_len bytes of UTF-8 JSON (sorted keys)
    count      uint32
    per tensor:
        name_len uint16, name (UTF-8)
        ndim     uint8, dims uint32 x ndim
        data     float32 little-endian, C order

The JSON block carries the network descriptor and whatever the caller adds
(config, step). Parameters are stored as float32, so float32 models round
trip bit-exactly.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from robusthide.networks import Descriptor, check_params, from_named_tensors, named_tensors

MAGIC = b"RHCK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def dumps(params: dict, descriptor: Descriptor, meta: dict | None = None) -> bytes:
    header = {"descriptor": asdict(descriptor), **(meta or {})}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    out = io.BytesIO()
    out.write(MAGIC + struct.pack("<II", VERSION, len(blob)) + blob)
    pairs = named_tensors(params)
    out.write(struct.pack("<I", len(pairs)))
    for name, arr in pairs:
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"refusing to save non-finite tensor {name!r}")
        nb = name.encode()
        out.write(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return out.getvalue()


def loads(data: bytes):
    """Returns ``(params, descriptor, meta)``."""
    buf = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError("truncated checkpoint")
        chunk = buf[pos:pos + n]
        pos += n
        return bytes(chunk)

    if take(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, meta_len = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {VERSION})")
    try:
        meta = json.loads(take(meta_len))
        descriptor = Descriptor(**meta.pop("descriptor"))
    except (ValueError, TypeError, KeyError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from None
    (count,) = struct.unpack("<I", take(4))
    pairs = []
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
        pairs.append((name, arr))
    if pos != len(buf):
        raise CheckpointError("trailing bytes after last tensor")
    params = from_named_tensors(pairs)
    try:
        check_params(params, descriptor)
    except ValueError as e:
        raise CheckpointError(f"checkpoint does not match its descriptor: {e}") from None
    return params, descriptor, meta


def save_checkpoint(path, params: dict, descriptor: Descriptor, meta: dict | None = None) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    tmp = p.with_name(p.name + ".tmp")
    tmp.write_bytes(dumps(params, descriptor, meta))
    tmp.replace(p)
    return p


def load_checkpoint(path):
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e.strerror}") from None
    return loads(data)
