"""Binary container helpers shared by dataset and checkpoint files.

Both formats start with a 5-byte magic, followed by little-endian uint32
fields and a UTF-8 JSON header, then raw little-endian float64 payload.
"""
from __future__ import annotations

import json
import struct

import numpy as np


class FormatError(Exception):
    """Malformed container file."""


class BadMagicError(FormatError):
    pass


class TruncationError(FormatError):
    pass


class SizeMismatchError(FormatError):
    pass


F64 = np.dtype("<f8")


class Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncationError(
                f"{self.what}: truncated at byte {len(self.buf)}, needed {self.pos + n}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def magic(self, expected: bytes):
        got = self.buf[:len(expected)]
        if got != expected:
            raise BadMagicError(f"{self.what}: bad magic {got!r}, expected {expected!r}")
        self.pos = len(expected)

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def json(self) -> dict:
        n = self.u32()
        try:
            return json.loads(self.take(n).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError(f"{self.what}: unreadable JSON header ({e})") from None

    def f64(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype=F64).astype(np.float64)

    def finish(self):
        if self.pos != len(self.buf):
            raise SizeMismatchError(
                f"{self.what}: {len(self.buf) - self.pos} trailing bytes after payload")


def u32(n: int) -> bytes:
    return struct.pack("<I", n)


def json_block(obj) -> bytes:
    raw = json.dumps(obj, sort_keys=True).encode("utf-8")
    return u32(len(raw)) + raw


def f64_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype=F64).tobytes()
