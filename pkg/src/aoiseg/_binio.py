"""Little-endian struct helpers for the AOI* file formats."""
from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, TruncatedFileError


class Reader:
    def __init__(self, buf: bytes, what: str = "file"):
        self.buf = memoryview(buf)
        self.pos = 0
        self.what = what

    def take(self, n: int) -> memoryview:
        if n < 0 or self.pos + n > len(self.buf):
            raise TruncatedFileError(
                f"{self.what}: needed {n} bytes at offset {self.pos}, "
                f"only {len(self.buf) - self.pos} left"
            )
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return vals if len(vals) > 1 else vals[0]

    def array(self, dtype, count: int) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        raw = self.take(dt.itemsize * count)
        return np.frombuffer(raw, dtype=dt, count=count).astype(dt.newbyteorder("="))

    def expect_magic(self, magic: bytes, version: int = 1):
        got = bytes(self.take(len(magic)))
        if got != magic:
            raise FormatError(f"{self.what}: bad magic {got!r}, expected {magic!r}")
        ver = self.unpack("H")
        if ver != version:
            raise FormatError(f"{self.what}: unsupported version {ver}")

    def done(self) -> bool:
        return self.pos == len(self.buf)


def le_bytes(arr: np.ndarray, dtype) -> bytes:
    return np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()
