"""Canonical byte layout helpers.

All integers are little-endian fixed width; variable-length byte strings are
prefixed with a u16 length; lists are prefixed with a u16 element count.
This layout is the golden-file format for transactions and blocks.
"""

from __future__ import annotations

import struct

from .errors import MalformedTx


def u8(n: int) -> bytes:
    return struct.pack("<B", n)


def u16(n: int) -> bytes:
    return struct.pack("<H", n)


def u32(n: int) -> bytes:
    return struct.pack("<I", n)


def u64(n: int) -> bytes:
    return struct.pack("<Q", n)


def f64(x: float) -> bytes:
    return struct.pack("<d", x)


def varbytes(b: bytes) -> bytes:
    if len(b) > 0xFFFF:
        raise MalformedTx("byte string too long for u16 length prefix")
    return u16(len(b)) + b


class Reader:
    """Sequential reader over a canonical byte string."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def read(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise MalformedTx("unexpected end of serialized data")
        out = self._data[self._pos:self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return self.read(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.read(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.read(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.read(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.read(8))[0]

    def varbytes(self) -> bytes:
        return self.read(self.u16())

    @property
    def exhausted(self) -> bool:
        return self._pos == len(self._data)

    def expect_end(self) -> None:
        if not self.exhausted:
            raise MalformedTx("trailing bytes after serialized value")
