"""Payload codec: little-endian packing in wire order with v2 zero truncation."""

from __future__ import annotations

import math
import struct
from collections.abc import Mapping
from typing import TYPE_CHECKING, Any, Iterator, Optional

from ..refinement.values import ArrayV, EnumV, FloatV, IntV, StrV, Value

if TYPE_CHECKING:
    from ..dialect import EnumDef, FieldDef, MessageSchema


class CodecError(ValueError):
    pass


class FieldOutOfRange(CodecError):
    pass


class MissingField(CodecError):
    pass


class PayloadTooLong(CodecError):
    pass


_CODES = {
    "char": "s",
    "int8_t": "b",
    "uint8_t": "B",
    "int16_t": "h",
    "uint16_t": "H",
    "int32_t": "i",
    "uint32_t": "I",
    "int64_t": "q",
    "uint64_t": "Q",
    "float": "f",
    "double": "d",
}

_INT_RANGES = {
    "int8_t": (-(2**7), 2**7 - 1),
    "uint8_t": (0, 2**8 - 1),
    "int16_t": (-(2**15), 2**15 - 1),
    "uint16_t": (0, 2**16 - 1),
    "int32_t": (-(2**31), 2**31 - 1),
    "uint32_t": (0, 2**32 - 1),
    "int64_t": (-(2**63), 2**63 - 1),
    "uint64_t": (0, 2**64 - 1),
}


def truncate(payload: bytes) -> bytes:
    """Drop trailing zero bytes, keeping at least one byte."""
    return payload.rstrip(b"\0") or b"\0"


class FieldMap(Mapping):
    """Decoded payload: field name -> Value in declaration order.

    ``warnings`` lists enum-typed fields whose value names no entry.
    """

    __slots__ = ("schema", "_values", "warnings")

    def __init__(self, schema: "MessageSchema", values: Mapping[str, Value], warnings: tuple = ()):
        self.schema = schema
        self._values = {f.name: values[f.name] for f in schema.fields if f.name in values}
        self.warnings = tuple(warnings)

    def __getitem__(self, name: str) -> Value:
        return self._values[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FieldMap):
            return NotImplemented
        return self.schema.id == other.schema.id and self._values == other._values

    def __repr__(self) -> str:
        body = ", ".join(f"{k}={v}" for k, v in self._values.items())
        return f"FieldMap({self.schema.name}: {body})"


class _Codec:
    def __init__(self, schema: "MessageSchema"):
        parts = []
        for f in schema.wire_fields:
            code = _CODES[f.type]
            if f.type == "char":
                parts.append(f"{max(f.array_length, 1)}s")
            elif f.array_length:
                parts.append(f"{f.array_length}{code}")
            else:
                parts.append(code)
        self.struct = struct.Struct("<" + "".join(parts))
        self.fields = schema.wire_fields


_CODECS: dict[int, tuple["MessageSchema", _Codec]] = {}


def _codec(schema: "MessageSchema") -> _Codec:
    hit = _CODECS.get(id(schema))
    if hit is not None and hit[0] is schema:
        return hit[1]
    codec = _Codec(schema)
    _CODECS[id(schema)] = (schema, codec)
    return codec


def _decode_int(f: "FieldDef", raw: int, enums: Optional[Mapping[str, "EnumDef"]],
                warnings: list) -> Value:
    if f.enum and enums is not None:
        edef = enums.get(f.enum)
        if edef is not None and not edef.bitmask:
            entry = edef.by_value.get(raw)
            if entry is not None:
                return EnumV(edef.name, entry.name, raw)
            warnings.append(f.name)
    return IntV(raw)


def decode_payload(
    schema: "MessageSchema",
    payload: bytes,
    enums: Optional[Mapping[str, "EnumDef"]] = None,
) -> FieldMap:
    """Decode ``payload``; bytes missing at the end read as zero.

    Enum-typed scalar fields become EnumV when ``enums`` names the value;
    bitmask enums and arrays always decode to plain integers.
    """
    codec = _codec(schema)
    size = codec.struct.size
    buf = bytes(payload[:size])
    if len(buf) < size:
        buf += bytes(size - len(buf))
    flat = codec.struct.unpack(buf)
    values: dict[str, Value] = {}
    warnings: list[str] = []
    i = 0
    for f in codec.fields:
        if f.type == "char":
            raw = flat[i]
            i += 1
            values[f.name] = StrV(raw.split(b"\0", 1)[0].decode("latin-1"))
        elif f.array_length:
            items = flat[i:i + f.array_length]
            i += f.array_length
            if f.type in ("float", "double"):
                values[f.name] = ArrayV(tuple(FloatV(x) for x in items))
            else:
                values[f.name] = ArrayV(tuple(IntV(x) for x in items))
        else:
            raw = flat[i]
            i += 1
            if f.type in ("float", "double"):
                values[f.name] = FloatV(raw)
            else:
                values[f.name] = _decode_int(f, raw, enums, warnings)
    return FieldMap(schema, values, tuple(warnings))


def _int_value(f: "FieldDef", v: Any) -> int:
    if isinstance(v, (IntV, EnumV)):
        n = v.value
    else:
        raise FieldOutOfRange(f"{f.name}: expected an integer value, got {v!r}")
    lo, hi = _INT_RANGES[f.type]
    if not lo <= n <= hi:
        raise FieldOutOfRange(f"{f.name}: {n} outside {f.type} range [{lo}, {hi}]")
    return n


def _float_value(f: "FieldDef", v: Any) -> float:
    if isinstance(v, FloatV):
        x = v.value
    elif isinstance(v, IntV):
        x = float(v.value)
        if x != v.value:
            raise FieldOutOfRange(f"{f.name}: {v.value} is not exactly representable")
    else:
        raise FieldOutOfRange(f"{f.name}: expected a float value, got {v!r}")
    if f.type == "float" and math.isfinite(x):
        try:
            struct.pack("<f", x)
        except OverflowError:
            raise FieldOutOfRange(f"{f.name}: {x} overflows float32") from None
    return x


def _scalar(f: "FieldDef", v: Any):
    if f.type in ("float", "double"):
        return _float_value(f, v)
    return _int_value(f, v)


def encode_payload(schema: "MessageSchema", fields: Mapping[str, Value]) -> bytes:
    """Pack ``fields`` in wire order and truncate trailing zeros."""
    codec = _codec(schema)
    flat: list = []
    for f in codec.fields:
        if f.name not in fields:
            raise MissingField(f"{schema.name}.{f.name}")
        v = fields[f.name]
        if f.type == "char":
            if not isinstance(v, StrV):
                raise FieldOutOfRange(f"{f.name}: expected a string, got {v!r}")
            try:
                raw = v.value.encode("latin-1")
            except UnicodeEncodeError:
                raise FieldOutOfRange(f"{f.name}: non latin-1 text {v.value!r}") from None
            if b"\0" in raw or len(raw) > max(f.array_length, 1):
                raise FieldOutOfRange(f"{f.name}: {v.value!r} does not fit char[{f.array_length}]")
            flat.append(raw)
        elif f.array_length:
            if not isinstance(v, ArrayV) or len(v.items) > f.array_length:
                raise FieldOutOfRange(f"{f.name}: expected at most {f.array_length} items, got {v!r}")
            items = [_scalar(f, x) for x in v.items]
            pad = 0.0 if f.type in ("float", "double") else 0
            flat.extend(items + [pad] * (f.array_length - len(items)))
        else:
            flat.append(_scalar(f, v))
    return truncate(codec.struct.pack(*flat))


def zero_fields(schema: "MessageSchema") -> dict[str, Value]:
    """Every field at its zero value (the decoding of an empty payload)."""
    return dict(decode_payload(schema, b""))
