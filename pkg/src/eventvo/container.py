"""Binary tensor container.

Layout (all integers little-endian u32, data little-endian float32 row-major):

  version 1, a single unnamed tensor (voxel grids, score maps):
      b"EVTK" | version | rank | dims[rank] | data

  version 2, named records (network weights):
      b"EVTK" | version | count | count * (name_len | name utf-8 | rank | dims[rank] | data)
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"EVTK"


def _pack_tensor(array):
    array = np.asarray(array)
    header = struct.pack("<I", array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype="<f4").tobytes()


class _Reader:
    def __init__(self, buf, path):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, n):
        if self.off + n > len(self.buf):
            raise ValueError(f"{self.path}: truncated tensor container")
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def tensor(self):
        rank = self.u32()
        if rank > 32:
            raise ValueError(f"{self.path}: implausible tensor rank {rank}")
        dims = struct.unpack(f"<{rank}I", self.take(4 * rank))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(self.take(4 * count), dtype="<f4")
        return data.reshape(dims).astype(np.float64)


def write_tensor(path, array):
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<I", 1) + _pack_tensor(array))


def write_named_tensors(path, tensors):
    """Write an ordered {name: array} mapping as a version-2 container."""
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<II", 2, len(tensors)))
        for name, array in tensors.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)) + encoded + _pack_tensor(array))


def _open(path):
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic, not a tensor container")
    return _Reader(buf, path)


def read_tensor(path):
    r = _open(path)
    r.take(4)
    version = r.u32()
    if version != 1:
        raise ValueError(f"{path}: expected a single-tensor container, got version {version}")
    return r.tensor()


def read_named_tensors(path):
    r = _open(path)
    r.take(4)
    version = r.u32()
    if version != 2:
        raise ValueError(f"{path}: expected a named-record container, got version {version}")
    out = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        out[name] = r.tensor()
    return out
