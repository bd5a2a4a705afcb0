"""Little-endian binary helpers with byte-offset error reporting."""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError


class Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _take(self, n: int, what: str) -> bytes:
        left = len(self.data) - self.pos
        if n > left:
            raise FormatError(
                f"truncated file while reading {what}: need {n} bytes, {left} left",
                self.pos,
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def magic(self, expected: bytes) -> None:
        start = self.pos
        got = self._take(len(expected), "magic")
        if got != expected:
            raise FormatError(
                f"bad magic: expected {expected.decode()!r}, found {got!r}", start
            )

    def u8(self, what: str) -> int:
        return self._take(1, what)[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self._take(4, what))[0]

    def f64s(self, count: int, what: str) -> np.ndarray:
        raw = self._take(8 * count, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)

    def u8s(self, count: int, what: str) -> np.ndarray:
        return np.frombuffer(self._take(count, what), dtype=np.uint8).copy()

    def at_end(self) -> bool:
        return self.pos == len(self.data)

    def finish(self) -> None:
        if not self.at_end():
            raise FormatError(
                f"{len(self.data) - self.pos} trailing bytes after last record", self.pos
            )


def u8(v: int) -> bytes:
    return struct.pack("<B", v)


def u32(v: int) -> bytes:
    return struct.pack("<I", v)


def f64s(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()
