"""Shared pieces of the on-disk formats (checkpoints and window caches).

Every file starts with ``b"GNTM"``, a little-endian u16 format version and a
four-byte kind tag, and ends with a CRC-32 of all preceding bytes.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

MAGIC = b"GNTM"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Raised for bad magic, unknown version, truncation or checksum mismatch."""


class Writer:
    def __init__(self, kind: bytes):
        assert len(kind) == 4
        self.parts = [MAGIC, struct.pack("<H", FORMAT_VERSION), kind]

    def pack(self, fmt: str, *values) -> None:
        self.parts.append(struct.pack("<" + fmt, *values))

    def raw(self, data: bytes) -> None:
        self.parts.append(data)

    def blob(self, data: bytes) -> None:
        self.pack("I", len(data))
        self.parts.append(data)

    def save(self, path) -> None:
        body = b"".join(self.parts)
        Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


class Reader:
    def __init__(self, path, kind: bytes):
        data = Path(path).read_bytes()
        if len(data) < 14 or data[:4] != MAGIC:
            raise FormatError(f"{path}: not a GNTM file (bad magic bytes)")
        (crc,) = struct.unpack("<I", data[-4:])
        self.data = data[:-4]
        self.pos = 4
        (version,) = self.unpack("H")
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
        found = self.take(4)
        if found != kind:
            raise FormatError(f"{path}: file kind {found!r}, expected {kind!r}")
        if zlib.crc32(self.data) != crc:
            raise FormatError(f"{path}: checksum mismatch (file truncated or corrupted)")
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("unexpected end of file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self) -> bytes:
        (n,) = self.unpack("I")
        return self.take(n)

    def done(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"{self.path}: {len(self.data) - self.pos} trailing bytes")
