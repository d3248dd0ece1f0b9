"""CRC-16/MCRF4XX, the X.25-style checksum MAVLink uses."""

from __future__ import annotations


def _make_table() -> tuple[int, ...]:
    table = []
    for byte in range(256):
        tmp = byte
        tmp = (tmp ^ (tmp << 4)) & 0xFF
        table.append(((tmp << 8) ^ (tmp << 3) ^ (tmp >> 4)) & 0xFFFF)
    return tuple(table)


_TABLE = _make_table()


def crc16_x25(data: bytes, seed: int = 0xFFFF) -> int:
    crc = seed
    for b in data:
        crc = (crc >> 8) ^ _TABLE[(b ^ crc) & 0xFF]
    return crc


class X25Crc:
    """Incremental accumulator; ``accumulate(a); accumulate(b)`` equals ``crc16_x25(a + b)``."""

    __slots__ = ("value",)

    def __init__(self, seed: int = 0xFFFF):
        self.value = seed

    def accumulate(self, data: bytes) -> "X25Crc":
        self.value = crc16_x25(data, self.value)
        return self
