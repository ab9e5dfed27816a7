import struct

import numpy as np
import pytest

from eventvo.container import (
    read_named_tensors,
    read_tensor,
    write_named_tensors,
    write_tensor,
)


def test_single_tensor_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.standard_normal((4, 6, 5))
    path = tmp_path / "grid.evtk"
    write_tensor(path, arr)
    back = read_tensor(path)
    assert back.shape == arr.shape
    # storage is float32, so round trip is exact only at that precision
    np.testing.assert_array_equal(back, arr.astype(np.float32).astype(np.float64))


def test_header_layout(tmp_path):
    path = tmp_path / "t.evtk"
    write_tensor(path, np.zeros((2, 3), dtype=np.float64))
    buf = path.read_bytes()
    assert buf[:4] == b"EVTK"
    version, rank, d0, d1 = struct.unpack("<IIII", buf[4:20])
    assert (version, rank, d0, d1) == (1, 2, 2, 3)
    assert len(buf) == 20 + 2 * 3 * 4  # header + row-major f32 payload


def test_payload_is_row_major_little_endian_f32(tmp_path):
    path = tmp_path / "t.evtk"
    arr = np.arange(6, dtype=np.float64).reshape(2, 3)
    write_tensor(path, arr)
    payload = path.read_bytes()[20:]
    vals = np.frombuffer(payload, dtype="<f4")
    np.testing.assert_array_equal(vals, np.arange(6, dtype=np.float32))


def test_named_tensor_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    tensors = {
        "conv1.w": rng.standard_normal((8, 5, 3, 3)),
        "conv1.b": rng.standard_normal(8),
    }
    path = tmp_path / "weights.evtk"
    write_named_tensors(path, tensors)
    back = read_named_tensors(path)
    assert list(back) == ["conv1.w", "conv1.b"]
    for name, arr in tensors.items():
        np.testing.assert_array_equal(
            back[name], arr.astype(np.float32).astype(np.float64)
        )


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        read_tensor(path)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "t.evtk"
    write_tensor(path, np.ones((4, 4)))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError, match="truncated"):
        read_tensor(path)


def test_version_mismatch_rejected(tmp_path):
    path = tmp_path / "named.evtk"
    write_named_tensors(path, {"a": np.ones(3)})
    with pytest.raises(ValueError, match="version"):
        read_tensor(path)
    path2 = tmp_path / "single.evtk"
    write_tensor(path2, np.ones(3))
    with pytest.raises(ValueError, match="version"):
        read_named_tensors(path2)


def test_scalar_rank_zero(tmp_path):
    path = tmp_path / "s.evtk"
    write_tensor(path, np.float64(2.5))
    assert read_tensor(path) == 2.5
