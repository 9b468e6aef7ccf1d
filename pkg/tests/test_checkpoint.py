import struct

import numpy as np
import pytest

from invfuse import checkpoint as ckpt
from invfuse.errors import CheckpointVersionError


def _sample():
    header = {"kind": "test", "step": 3, "nested": {"b": [1, 2], "a": None}}
    tensors = {"w": np.arange(6, dtype=np.float32).reshape(2, 3), "s": np.float32(2.5),
               "empty": np.zeros((0, 4), np.float32)}
    return header, tensors


def test_round_trip_and_byte_identity(tmp_path):
    header, tensors = _sample()
    blob = ckpt.encode(header, tensors)
    assert blob == ckpt.encode(dict(reversed(list(header.items()))), tensors)
    assert blob[:8] == b"INVFUSE\x00" and struct.unpack("<I", blob[8:12]) == (1,)
    h, t = ckpt.decode(blob)
    assert h == header and list(t) == ["w", "s", "empty"]
    np.testing.assert_array_equal(t["w"], tensors["w"])
    assert t["s"].shape == () and t["s"] == 2.5 and t["empty"].shape == (0, 4)
    ckpt.write_atomic(tmp_path / "a" / "x.ckpt", blob)
    assert (tmp_path / "a" / "x.ckpt").read_bytes() == blob
    assert [p.name for p in (tmp_path / "a").iterdir()] == ["x.ckpt"]
    assert ckpt.read(tmp_path / "a" / "x.ckpt")[0] == header


def test_corruption_detected():
    blob = bytearray(ckpt.encode(*_sample()))
    blob[30] ^= 0xFF
    with pytest.raises(CheckpointVersionError, match="checksum"):
        ckpt.decode(bytes(blob))


def test_bad_magic_and_version():
    blob = ckpt.encode(*_sample())
    with pytest.raises(CheckpointVersionError, match="magic"):
        ckpt.decode(b"NOTMAGIC" + blob[8:])
    body = blob[:8] + struct.pack("<I", 2) + blob[12:-4]
    import zlib
    with pytest.raises(CheckpointVersionError, match="version"):
        ckpt.decode(body + struct.pack("<I", zlib.crc32(body)))
    with pytest.raises(CheckpointVersionError):
        ckpt.decode(b"short")
