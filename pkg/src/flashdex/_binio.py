"""Little-endian binary file primitives shared by the on-disk index formats."""

from __future__ import annotations

import struct
from typing import BinaryIO


class FormatError(Exception):
    """Raised when an on-disk artifact does not match its expected layout."""


def read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(data)}")
    return data


def write_magic(fh: BinaryIO, magic: bytes, version: int) -> None:
    fh.write(magic)
    fh.write(struct.pack("<I", version))


def check_magic(fh: BinaryIO, magic: bytes, version: int) -> None:
    got = fh.read(len(magic))
    if got != magic:
        raise FormatError(f"bad magic: expected {magic!r}, got {got!r}")
    (ver,) = struct.unpack("<I", read_exact(fh, 4))
    if ver != version:
        raise FormatError(f"unsupported format version {ver} (expected {version})")


def write_u8(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<B", value))


def read_u8(fh: BinaryIO) -> int:
    return struct.unpack("<B", read_exact(fh, 1))[0]


def write_u32(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<I", value))


def read_u32(fh: BinaryIO) -> int:
    return struct.unpack("<I", read_exact(fh, 4))[0]


def write_u64(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<Q", value))


def read_u64(fh: BinaryIO) -> int:
    return struct.unpack("<Q", read_exact(fh, 8))[0]


def write_f64(fh: BinaryIO, value: float) -> None:
    fh.write(struct.pack("<d", value))


def read_f64(fh: BinaryIO) -> float:
    return struct.unpack("<d", read_exact(fh, 8))[0]


def write_str(fh: BinaryIO, text: str) -> None:
    raw = text.encode("utf-8")
    write_u32(fh, len(raw))
    fh.write(raw)


def read_str(fh: BinaryIO) -> str:
    n = read_u32(fh)
    return read_exact(fh, n).decode("utf-8")
