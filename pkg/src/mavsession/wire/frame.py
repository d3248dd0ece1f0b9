"""MAVLink v2 framing and a streaming, resynchronising decoder.

Only unsigned v2 frames are accepted. Anything else (v1 frames, signed
frames, corrupted frames) is skipped and reported as a :class:`Resync`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Union

from .crc import crc16_x25
from .payload import FieldMap, PayloadTooLong, encode_payload, truncate

MAGIC = 0xFD
HEADER_LEN = 10
CHECKSUM_LEN = 2
MAX_PAYLOAD = 255


@dataclass(frozen=True)
class Frame:
    msg_id: int
    payload: bytes
    seq: int = 0
    sys_id: int = 0
    comp_id: int = 0
    incompat_flags: int = 0
    compat_flags: int = 0
    checksum: int = 0
    verified: bool = True

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    def to_bytes(self) -> bytes:
        return _pack(self.payload, self.incompat_flags, self.compat_flags, self.seq,
                     self.sys_id, self.comp_id, self.msg_id) + self.checksum.to_bytes(2, "little")


@dataclass(frozen=True)
class Resync:
    skipped: int
    reason: str


class _NeedMoreBytes:
    __slots__ = ()

    def __repr__(self) -> str:
        return "NeedMoreBytes"


NeedMoreBytes = _NeedMoreBytes()

DecodeResult = Union[Frame, Resync, _NeedMoreBytes]
CrcLookup = Union[Mapping[int, int], Callable[[int], Optional[int]]]


def _pack(payload: bytes, incompat: int, compat: int, seq: int, sys_id: int, comp_id: int,
          msg_id: int) -> bytes:
    return bytes((MAGIC, len(payload), incompat, compat, seq, sys_id, comp_id,
                  msg_id & 0xFF, (msg_id >> 8) & 0xFF, (msg_id >> 16) & 0xFF)) + payload


def frame_checksum(header_and_payload: bytes, crc_extra: int) -> int:
    """Checksum over everything after the magic byte, then the crc_extra seed."""
    crc = crc16_x25(header_and_payload[1:])
    return crc16_x25(bytes((crc_extra,)), crc)


def encode_frame(
    msg_id: int,
    payload: Union[bytes, FieldMap],
    seq: int = 0,
    sys_id: int = 0,
    comp_id: int = 0,
    crc_extra: int = 0,
) -> bytes:
    if isinstance(payload, FieldMap):
        payload = encode_payload(payload.schema, payload)
    else:
        payload = truncate(bytes(payload))
    if len(payload) > MAX_PAYLOAD:
        raise PayloadTooLong(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    if not 0 <= msg_id <= 0xFFFFFF:
        raise ValueError(f"message id {msg_id} out of 24-bit range")
    body = _pack(payload, 0, 0, seq & 0xFF, sys_id & 0xFF, comp_id & 0xFF, msg_id)
    return body + frame_checksum(body, crc_extra).to_bytes(2, "little")


def _lookup(crc_extras: CrcLookup, msg_id: int) -> Optional[int]:
    if callable(crc_extras):
        return crc_extras(msg_id)
    return crc_extras.get(msg_id)


def _skip_to_magic(buf: bytes, start: int) -> int:
    """Index of the next magic byte at or after ``start`` (len(buf) if none)."""
    idx = buf.find(MAGIC, start)
    return len(buf) if idx < 0 else idx


def decode_frame(buf: bytes, crc_extras: CrcLookup, pass_unknown: bool = True
                 ) -> tuple[DecodeResult, int]:
    """Decode one item from the front of ``buf``; returns ``(item, bytes_consumed)``.

    Frames whose message id has no known crc_extra cannot be verified; with
    ``pass_unknown`` they are returned with ``verified=False``, otherwise they
    are discarded like a checksum failure.
    """
    if not buf:
        return NeedMoreBytes, 0
    if buf[0] != MAGIC:
        skip = _skip_to_magic(buf, 1)
        return Resync(skip, "garbage"), skip
    if len(buf) < HEADER_LEN:
        return NeedMoreBytes, 0
    length, incompat, compat, seq, sys_id, comp_id = buf[1:7]
    msg_id = buf[7] | (buf[8] << 8) | (buf[9] << 16)
    if incompat != 0:
        skip = _skip_to_magic(buf, 1)
        return Resync(skip, "unsupported incompat flags"), skip
    end = HEADER_LEN + length + CHECKSUM_LEN
    if len(buf) < end:
        return NeedMoreBytes, 0
    body = bytes(buf[:HEADER_LEN + length])
    checksum = buf[end - 2] | (buf[end - 1] << 8)
    payload = body[HEADER_LEN:]
    crc_extra = _lookup(crc_extras, msg_id)
    if crc_extra is None:
        if not pass_unknown:
            skip = _skip_to_magic(buf, 1)
            return Resync(skip, "unknown message id"), skip
        frame = Frame(msg_id, payload, seq, sys_id, comp_id, incompat, compat, checksum, False)
        return frame, end
    if frame_checksum(body, crc_extra) != checksum:
        skip = _skip_to_magic(buf, 1)
        return Resync(skip, "checksum mismatch"), skip
    return Frame(msg_id, payload, seq, sys_id, comp_id, incompat, compat, checksum, True), end


class StreamDecoder:
    """Incremental decoder: feed arbitrary chunks, receive frames and resync notices."""

    def __init__(self, crc_extras: CrcLookup, pass_unknown: bool = True):
        self.crc_extras = crc_extras
        self.pass_unknown = pass_unknown
        self._buf = bytearray()

    @property
    def pending(self) -> int:
        return len(self._buf)

    def feed(self, data: bytes) -> list[Union[Frame, Resync]]:
        self._buf.extend(data)
        out: list[Union[Frame, Resync]] = []
        while True:
            item, used = decode_frame(self._buf, self.crc_extras, self.pass_unknown)
            if item is NeedMoreBytes:
                return out
            del self._buf[:used]
            out.append(item)  # type: ignore[arg-type]
