"""Runtime values carried by message payloads, protocol variables and state."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Union


@dataclass(frozen=True, slots=True)
class IntV:
    value: int

    def __str__(self) -> str:
        return str(self.value)


@dataclass(frozen=True, slots=True)
class FloatV:
    value: float

    def __str__(self) -> str:
        return repr(self.value)


@dataclass(frozen=True, slots=True)
class BoolV:
    value: bool

    def __str__(self) -> str:
        return "true" if self.value else "false"


@dataclass(frozen=True, slots=True)
class StrV:
    value: str

    def __str__(self) -> str:
        return _quote(self.value)


@dataclass(frozen=True, slots=True)
class EnumV:
    """An enum entry; comparisons use ``value``."""

    enum: str
    entry: str
    value: int

    def __str__(self) -> str:
        return f"{self.enum}.{self.entry}"


@dataclass(frozen=True, slots=True)
class ArrayV:
    items: tuple

    def __post_init__(self) -> None:
        kinds = {type(item) for item in self.items}
        if len(kinds) > 1:
            raise TypeError(f"heterogeneous array: {sorted(k.__name__ for k in kinds)}")

    def __str__(self) -> str:
        return "[" + ", ".join(str(item) for item in self.items) + "]"


Value = Union[IntV, FloatV, BoolV, StrV, EnumV, ArrayV]

VALUE_TYPES = (IntV, FloatV, BoolV, StrV, EnumV, ArrayV)


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def from_python(obj: Any) -> Value:
    """Wrap a plain Python scalar (or list) as a Value."""
    if isinstance(obj, VALUE_TYPES):
        return obj
    if isinstance(obj, bool):
        return BoolV(obj)
    if isinstance(obj, int):
        return IntV(obj)
    if isinstance(obj, float):
        return FloatV(obj)
    if isinstance(obj, str):
        return StrV(obj)
    if isinstance(obj, (list, tuple)):
        return ArrayV(tuple(from_python(x) for x in obj))
    raise TypeError(f"cannot convert {type(obj).__name__} to a Value")


def to_python(value: Value) -> Any:
    """Unwrap to a plain Python object (enums become their numeric value)."""
    if isinstance(value, ArrayV):
        return [to_python(x) for x in value.items]
    return value.value


def value_to_json(value: Value) -> dict:
    """Tagged JSON form; inverse of :func:`value_from_json`."""
    if isinstance(value, BoolV):
        return {"bool": value.value}
    if isinstance(value, IntV):
        return {"int": value.value}
    if isinstance(value, FloatV):
        v = value.value
        if math.isfinite(v):
            return {"float": v}
        return {"float": repr(v)}
    if isinstance(value, StrV):
        return {"str": value.value}
    if isinstance(value, EnumV):
        return {"enum": f"{value.enum}.{value.entry}", "value": value.value}
    if isinstance(value, ArrayV):
        return {"array": [value_to_json(x) for x in value.items]}
    raise TypeError(f"not a Value: {value!r}")


def value_from_json(obj: dict) -> Value:
    if "bool" in obj:
        return BoolV(bool(obj["bool"]))
    if "int" in obj:
        return IntV(int(obj["int"]))
    if "float" in obj:
        return FloatV(float(obj["float"]))
    if "str" in obj:
        return StrV(str(obj["str"]))
    if "enum" in obj:
        enum, _, entry = obj["enum"].partition(".")
        return EnumV(enum, entry, int(obj["value"]))
    if "array" in obj:
        return ArrayV(tuple(value_from_json(x) for x in obj["array"]))
    raise ValueError(f"unrecognised value encoding: {obj!r}")
