"""Checkpoint container: bit-exact round-trips, canonical bytes, rejection of
malformed files."""

import struct

import numpy as np
import pytest

from diffdrive.checkpoint import MAGIC, load_arrays, save_arrays
from diffdrive.errors import CheckpointError


def test_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "scalar": np.array(3.141592653589793),
        "vec": rng.standard_normal(17),
        "mat": rng.standard_normal((5, 9)),
        "cube": rng.standard_normal((2, 3, 4)),
        "tiny_values": rng.standard_normal(4) * 1e-300,
        "empty": np.zeros((0, 5)),
    }
    path = tmp_path / "state.kdpc"
    save_arrays(path, arrays)
    back = load_arrays(path)
    assert set(back) == set(arrays)
    for k in arrays:
        assert back[k].shape == arrays[k].shape
        assert back[k].tobytes() == arrays[k].astype("<f8").tobytes()


def test_insertion_order_does_not_change_bytes(tmp_path):
    rng = np.random.default_rng(1)
    a = rng.standard_normal(3)
    b = rng.standard_normal((2, 2))
    p1, p2 = tmp_path / "x.kdpc", tmp_path / "y.kdpc"
    save_arrays(p1, {"alpha": a, "beta": b})
    save_arrays(p2, {"beta": b, "alpha": a})
    assert p1.read_bytes() == p2.read_bytes()


def test_header_layout(tmp_path):
    path = tmp_path / "one.kdpc"
    save_arrays(path, {"w": np.arange(6.0).reshape(2, 3)})
    buf = path.read_bytes()
    assert buf[:4] == MAGIC
    assert struct.unpack_from("<I", buf, 4)[0] == 1  # version
    assert struct.unpack_from("<Q", buf, 8)[0] == 1  # record count
    assert struct.unpack_from("<I", buf, 16)[0] == 1  # name length
    assert buf[20:21] == b"w"
    assert struct.unpack_from("<I", buf, 21)[0] == 2  # rank
    assert struct.unpack_from("<2Q", buf, 25) == (2, 3)
    np.testing.assert_array_equal(
        np.frombuffer(buf[41:41 + 48], dtype="<f8"), np.arange(6.0))
    assert len(buf) == 41 + 48


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.kdpc"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(CheckpointError):
        load_arrays(path)


def test_bad_version_rejected(tmp_path):
    path = tmp_path / "v9.kdpc"
    path.write_bytes(MAGIC + struct.pack("<I", 9) + struct.pack("<Q", 0))
    with pytest.raises(CheckpointError):
        load_arrays(path)


def test_truncation_rejected(tmp_path):
    path = tmp_path / "ok.kdpc"
    save_arrays(path, {"w": np.ones(10)})
    clipped = tmp_path / "clipped.kdpc"
    clipped.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        load_arrays(clipped)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "ok.kdpc"
    save_arrays(path, {"w": np.ones(2)})
    padded = tmp_path / "padded.kdpc"
    padded.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CheckpointError):
        load_arrays(padded)
