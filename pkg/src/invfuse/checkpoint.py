"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes   b"INVFUSE\\0"
    version    uint32
    header     uint32 length + UTF-8 JSON (sorted keys)
    n_records  uint32
    records    name (uint16 length + UTF-8), ndim (uint8), dims (uint32 each),
               float32 data
    crc32      uint32 over every preceding byte
"""
import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointVersionError

MAGIC = b"INVFUSE\x00"
VERSION = 1


def encode(header, tensors):
    """Serialise a JSON-able header and an ordered ``{name: array}`` mapping."""
    parts = [MAGIC, struct.pack("<I", VERSION)]
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts += [struct.pack("<I", len(hbytes)), hbytes, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.require(np.asarray(arr, dtype="<f4"), requirements="C")  # keeps 0-d shapes
        nbytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nbytes)))
        parts.append(nbytes)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(blob):
    """Inverse of :func:`encode`; returns ``(header, {name: float32 array})``."""
    if len(blob) < len(MAGIC) + 12 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointVersionError("not a checkpoint file (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointVersionError("checkpoint is corrupted (checksum mismatch)")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", body, pos)
    pos += 4
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        (hlen,) = struct.unpack_from("<I", body, pos)
        pos += 4
        header = json.loads(body[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(body, dtype="<f4", count=size, offset=pos).reshape(shape)
            pos += 4 * size
            tensors[name] = arr.copy()
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointVersionError(f"malformed checkpoint: {exc}") from exc
    if pos != len(body):
        raise CheckpointVersionError("trailing bytes in checkpoint")
    return header, tensors


def write_atomic(path, blob):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read(path):
    return decode(Path(path).read_bytes())
