"""MAVLink v2 wire format: checksum, framing and payload codec."""

from .crc import X25Crc, crc16_x25
from .frame import (
    MAGIC,
    MAX_PAYLOAD,
    Frame,
    NeedMoreBytes,
    Resync,
    StreamDecoder,
    decode_frame,
    encode_frame,
    frame_checksum,
)
from .payload import (
    CodecError,
    FieldMap,
    FieldOutOfRange,
    MissingField,
    PayloadTooLong,
    decode_payload,
    encode_payload,
    truncate,
    zero_fields,
)

__all__ = [
    "MAGIC", "MAX_PAYLOAD", "CodecError", "FieldMap", "FieldOutOfRange", "Frame", "MissingField",
    "NeedMoreBytes", "PayloadTooLong", "Resync", "StreamDecoder", "X25Crc", "crc16_x25",
    "decode_frame", "decode_payload", "encode_frame", "encode_payload", "frame_checksum",
    "truncate", "zero_fields",
]
