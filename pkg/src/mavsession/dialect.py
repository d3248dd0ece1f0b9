"""MAVLink dialect XML -> schema registry, plus a canonical JSON schema document.

The registry carries everything the wire codec and the monitors need:
enums, message layouts in declaration and wire order, and each message's
``crc_extra`` seed byte.
"""

from __future__ import annotations

import functools
import json
import os
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, TextIO, Union

from .wire.crc import X25Crc

TYPE_SIZES = {
    "char": 1,
    "int8_t": 1,
    "uint8_t": 1,
    "int16_t": 2,
    "uint16_t": 2,
    "int32_t": 4,
    "uint32_t": 4,
    "int64_t": 8,
    "uint64_t": 8,
    "float": 4,
    "double": 8,
}

MAX_MESSAGE_ID = 0xFFFFFF
SCHEMA_FORMAT = 1

IncludeResolver = Callable[[str], str]


class DialectError(Exception):
    pass


class MalformedXml(DialectError):
    pass


class DuplicateMessageId(DialectError):
    pass


class UnresolvedInclude(DialectError):
    pass


class UnknownFieldType(DialectError):
    pass


@dataclass(frozen=True)
class EnumEntry:
    name: str
    value: int


@dataclass(frozen=True)
class EnumDef:
    name: str
    entries: tuple[EnumEntry, ...]
    bitmask: bool = False

    @functools.cached_property
    def by_value(self) -> dict[int, EnumEntry]:
        return {e.value: e for e in self.entries}

    @functools.cached_property
    def by_name(self) -> dict[str, EnumEntry]:
        return {e.name: e for e in self.entries}


@dataclass(frozen=True)
class FieldDef:
    name: str
    type: str
    array_length: int = 0
    enum: Optional[str] = None
    extension: bool = False

    @property
    def type_size(self) -> int:
        return TYPE_SIZES[self.type]

    @property
    def wire_size(self) -> int:
        return self.type_size * max(self.array_length, 1)


def wire_order(fields: Iterable[FieldDef]) -> list[FieldDef]:
    """Largest base type first (stable); extension fields keep their place at the end."""
    fields = list(fields)
    base = [f for f in fields if not f.extension]
    ext = [f for f in fields if f.extension]
    # sorted() is stable under reverse=True
    return sorted(base, key=lambda f: f.type_size, reverse=True) + ext


def compute_crc_extra(name: str, fields: Iterable[FieldDef]) -> int:
    crc = X25Crc()
    crc.accumulate((name + " ").encode("ascii"))
    for f in wire_order(fields):
        if f.extension:
            continue
        crc.accumulate((f.type + " ").encode("ascii"))
        crc.accumulate((f.name + " ").encode("ascii"))
        if f.array_length:
            crc.accumulate(bytes([f.array_length]))
    return (crc.value & 0xFF) ^ (crc.value >> 8)


@dataclass(frozen=True)
class MessageSchema:
    id: int
    name: str
    fields: tuple[FieldDef, ...]
    crc_extra: int

    @functools.cached_property
    def wire_fields(self) -> tuple[FieldDef, ...]:
        return tuple(wire_order(self.fields))

    @functools.cached_property
    def wire_index(self) -> dict[str, int]:
        return {f.name: i for i, f in enumerate(self.wire_fields)}

    @functools.cached_property
    def field_by_name(self) -> dict[str, FieldDef]:
        return {f.name: f for f in self.fields}

    @property
    def wire_length(self) -> int:
        return sum(f.wire_size for f in self.fields)

    @property
    def min_length(self) -> int:
        return sum(f.wire_size for f in self.fields if not f.extension)


@dataclass(frozen=True)
class Dialect:
    version: Optional[int] = None
    dialect: Optional[int] = None
    enums: Mapping[str, EnumDef] = field(default_factory=dict)
    messages: Mapping[int, MessageSchema] = field(default_factory=dict)
    includes: tuple[str, ...] = ()
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @functools.cached_property
    def by_name(self) -> dict[str, MessageSchema]:
        return {m.name: m for m in self.messages.values()}

    @functools.cached_property
    def enum_values(self) -> dict[str, dict[str, int]]:
        """``{enum: {entry: value}}``, the table refinement parsing uses."""
        return {name: {e.name: e.value for e in d.entries} for name, d in self.enums.items()}

    @functools.cached_property
    def crc_extras(self) -> dict[int, int]:
        return {mid: m.crc_extra for mid, m in self.messages.items()}

    def message(self, name: str) -> MessageSchema:
        try:
            return self.by_name[name]
        except KeyError:
            raise KeyError(f"message {name!r} not in dialect") from None


# -- XML parsing -------------------------------------------------------------

_KNOWN_CHILDREN = {
    "mavlink": {"include", "version", "dialect", "enums", "messages"},
    "enum": {"description", "entry", "deprecated", "wip", "superseded"},
    "entry": {"description", "param", "deprecated", "wip", "superseded"},
    "message": {"description", "field", "extensions", "deprecated", "wip", "superseded"},
}

_TYPE_RE = re.compile(r"^([A-Za-z0-9_]+?)(?:\[(\d+)\])?$")


def _parse_field_type(raw: str, where: str) -> tuple[str, int]:
    m = _TYPE_RE.match(raw.strip())
    if m is None:
        raise UnknownFieldType(f"{where}: unparsable field type {raw!r}")
    base, length = m.group(1), int(m.group(2) or 0)
    if base == "uint8_t_mavlink_version":
        base = "uint8_t"
    elif base == "array":
        base = "int8_t"
    elif base not in TYPE_SIZES and base + "_t" in TYPE_SIZES:
        base = base + "_t"
    if base not in TYPE_SIZES:
        raise UnknownFieldType(f"{where}: unknown field type {raw!r}")
    if m.group(2) is not None and not 1 <= length <= 255:
        raise UnknownFieldType(f"{where}: array length {length} out of range")
    return base, length


def _int_attr(raw: Optional[str], where: str) -> int:
    try:
        return int(raw.strip(), 0)  # type: ignore[union-attr]
    except (AttributeError, ValueError):
        raise MalformedXml(f"{where}: expected an integer, got {raw!r}") from None


class _Builder:
    """Accumulates definitions from a root document and its includes."""

    def __init__(self, resolver: Optional[IncludeResolver]):
        self.resolver = resolver
        self.version: Optional[int] = None
        self.dialect: Optional[int] = None
        self.enum_entries: dict[str, list[EnumEntry]] = {}
        self.enum_bitmask: dict[str, bool] = {}
        self.messages: dict[int, MessageSchema] = {}
        self.message_names: set[str] = set()
        self.includes: list[str] = []
        self.warnings: list[str] = []
        self._done: set[str] = set()

    def add_document(self, text: str, name: str, stack: tuple[str, ...] = ()) -> None:
        try:
            root = ET.fromstring(text)
        except ET.ParseError as exc:
            raise MalformedXml(f"{name}: {exc}") from None
        if root.tag != "mavlink":
            raise MalformedXml(f"{name}: root element is <{root.tag}>, expected <mavlink>")
        self._warn_unknown(root, name)

        for inc in root.findall("include"):
            inc_name = (inc.text or "").strip()
            if inc_name in stack or inc_name == name:
                raise UnresolvedInclude(f"{name}: include cycle through {inc_name!r}")
            if inc_name in self._done:
                continue
            if self.resolver is None:
                raise UnresolvedInclude(f"{name}: no resolver for include {inc_name!r}")
            try:
                inc_text = self.resolver(inc_name)
            except (OSError, KeyError, LookupError) as exc:
                raise UnresolvedInclude(f"{name}: cannot resolve {inc_name!r}: {exc}") from None
            self.add_document(inc_text, inc_name, stack + (name,))
            self._done.add(inc_name)
            self.includes.append(inc_name)

        v = root.find("version")
        if v is not None and (self.version is None or not stack):
            self.version = _int_attr(v.text, f"{name}: <version>")
        d = root.find("dialect")
        if d is not None and not stack:
            self.dialect = _int_attr(d.text, f"{name}: <dialect>")

        for enums in root.findall("enums"):
            for enum in enums:
                if enum.tag != "enum":
                    self.warnings.append(f"{name}: ignored <{enum.tag}> in <enums>")
                    continue
                self._add_enum(enum, name)
        for messages in root.findall("messages"):
            for msg in messages:
                if msg.tag != "message":
                    self.warnings.append(f"{name}: ignored <{msg.tag}> in <messages>")
                    continue
                self._add_message(msg, name)

    def _warn_unknown(self, elem: ET.Element, doc: str) -> None:
        known = _KNOWN_CHILDREN.get(elem.tag)
        if known is not None:
            for child in elem:
                if child.tag not in known:
                    self.warnings.append(f"{doc}: ignored <{child.tag}> in <{elem.tag}>")

    def _add_enum(self, elem: ET.Element, doc: str) -> None:
        self._warn_unknown(elem, doc)
        name = elem.get("name")
        if not name:
            raise MalformedXml(f"{doc}: <enum> without a name")
        entries = self.enum_entries.setdefault(name, [])
        if elem.get("bitmask") == "true":
            self.enum_bitmask[name] = True
        else:
            self.enum_bitmask.setdefault(name, False)
        names = {e.name for e in entries}
        values = {e.value for e in entries}
        # highest value seen so far in this definition; auto-numbering continues from it
        highest = 0
        for entry in elem.findall("entry"):
            self._warn_unknown(entry, doc)
            ename = entry.get("name")
            if not ename:
                raise MalformedXml(f"{doc}: entry without a name in enum {name}")
            raw = entry.get("value")
            value = highest + 1 if raw is None else _int_attr(raw, f"{doc}: {name}.{ename}")
            highest = max(highest, value)
            if ename in names:
                raise MalformedXml(f"{doc}: duplicate entry {name}.{ename}")
            if value in values:
                raise MalformedXml(f"{doc}: duplicate value {value} in enum {name} ({ename})")
            names.add(ename)
            values.add(value)
            entries.append(EnumEntry(ename, value))

    def _add_message(self, elem: ET.Element, doc: str) -> None:
        self._warn_unknown(elem, doc)
        name = elem.get("name")
        if not name:
            raise MalformedXml(f"{doc}: <message> without a name")
        mid = _int_attr(elem.get("id"), f"{doc}: message {name} id")
        if not 0 <= mid <= MAX_MESSAGE_ID:
            raise MalformedXml(f"{doc}: message {name} id {mid} outside 0..{MAX_MESSAGE_ID}")
        if mid in self.messages:
            raise DuplicateMessageId(
                f"{doc}: message id {mid} ({name}) already used by {self.messages[mid].name}"
            )
        if name in self.message_names:
            raise MalformedXml(f"{doc}: duplicate message name {name}")
        fields: list[FieldDef] = []
        seen: set[str] = set()
        extension = False
        for child in elem:
            if child.tag == "extensions":
                extension = True
            elif child.tag == "field":
                fname = child.get("name")
                if not fname:
                    raise MalformedXml(f"{doc}: {name} has a field without a name")
                if fname in seen:
                    raise MalformedXml(f"{doc}: {name} declares field {fname!r} twice")
                seen.add(fname)
                ftype, length = _parse_field_type(child.get("type", ""), f"{doc}: {name}.{fname}")
                fields.append(FieldDef(fname, ftype, length, child.get("enum") or None, extension))
        if sum(f.wire_size for f in fields) > 255:
            raise MalformedXml(f"{doc}: message {name} payload exceeds 255 bytes")
        self.messages[mid] = MessageSchema(mid, name, tuple(fields), compute_crc_extra(name, fields))
        self.message_names.add(name)

    def build(self) -> Dialect:
        enums = {
            name: EnumDef(name, tuple(sorted(entries, key=lambda e: e.value)), self.enum_bitmask[name])
            for name, entries in self.enum_entries.items()
        }
        return Dialect(
            version=self.version,
            dialect=self.dialect,
            enums=enums,
            messages=dict(sorted(self.messages.items())),
            includes=tuple(self.includes),
            warnings=tuple(self.warnings),
        )


def parse_dialect(
    xml_text: str,
    include_resolver: Optional[IncludeResolver] = None,
    name: str = "<dialect>",
) -> Dialect:
    """Parse a dialect document, resolving ``<include>`` through ``include_resolver``."""
    builder = _Builder(include_resolver)
    builder.add_document(xml_text, name)
    return builder.build()


def directory_resolver(base_dir: Union[str, os.PathLike]) -> IncludeResolver:
    base = Path(base_dir)

    def resolve(name: str) -> str:
        return (base / name).read_text(encoding="utf-8")

    return resolve


def mapping_resolver(docs: Mapping[str, str]) -> IncludeResolver:
    return lambda name: docs[name]


def _bundled_text(name: str) -> str:
    return resources.files("mavsession").joinpath("data", "dialects", name).read_text("utf-8")


def load_dialect_file(path: Union[str, os.PathLike]) -> Dialect:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return load_schema(text)
    return parse_dialect(text, directory_resolver(path.parent), name=path.name)


@functools.lru_cache(maxsize=None)
def bundled_dialect(name: str = "common") -> Dialect:
    """One of the dialects shipped with the package (``common``, ``standard``, ``minimal``)."""
    filename = name if name.endswith(".xml") else name + ".xml"
    return parse_dialect(_bundled_text(filename), _bundled_text, name=filename)


def resolve_dialect(ref: str) -> Dialect:
    """``builtin:<name>`` selects a bundled dialect; anything else is a path (.xml or .json)."""
    if ref.startswith("builtin:"):
        return bundled_dialect(ref.split(":", 1)[1])
    return load_dialect_file(ref)


# -- canonical schema document -------------------------------------------------


def schema_document(dialect: Dialect) -> dict:
    return {
        "format": SCHEMA_FORMAT,
        "version": dialect.version,
        "dialect": dialect.dialect,
        "includes": list(dialect.includes),
        "enums": {
            name: {
                "bitmask": e.bitmask,
                "entries": [{"name": x.name, "value": x.value} for x in e.entries],
            }
            for name, e in sorted(dialect.enums.items())
        },
        "messages": [
            {
                "id": m.id,
                "name": m.name,
                "crc_extra": m.crc_extra,
                "fields": [
                    {
                        "name": f.name,
                        "type": f.type,
                        "array_length": f.array_length,
                        "enum": f.enum,
                        "extension": f.extension,
                    }
                    for f in m.fields
                ],
                "wire_order": [f.name for f in m.wire_fields],
            }
            for m in sorted(dialect.messages.values(), key=lambda m: m.id)
        ],
    }


def dump_schema(dialect: Dialect) -> str:
    return json.dumps(schema_document(dialect), indent=1, sort_keys=True, ensure_ascii=False) + "\n"


def emit_schema(dialect: Dialect, out: Union[str, os.PathLike, TextIO, None] = None) -> str:
    """Write the canonical schema document to ``out`` (path or stream) and return it."""
    text = dump_schema(dialect)
    if out is None:
        return text
    if hasattr(out, "write"):
        out.write(text)  # type: ignore[union-attr]
    else:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text


def load_schema(text: str) -> Dialect:
    """Rebuild a Dialect from :func:`emit_schema` output; crc_extra is re-verified."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedXml(f"schema document is not valid JSON: {exc}") from None
    if doc.get("format") != SCHEMA_FORMAT:
        raise MalformedXml(f"unsupported schema format {doc.get('format')!r}")
    enums = {
        name: EnumDef(
            name,
            tuple(EnumEntry(x["name"], x["value"]) for x in e["entries"]),
            e["bitmask"],
        )
        for name, e in doc["enums"].items()
    }
    messages = {}
    for m in doc["messages"]:
        fields = tuple(
            FieldDef(f["name"], f["type"], f["array_length"], f["enum"], f["extension"])
            for f in m["fields"]
        )
        for f in fields:
            if f.type not in TYPE_SIZES:
                raise UnknownFieldType(f"{m['name']}.{f.name}: {f.type!r}")
        schema = MessageSchema(m["id"], m["name"], fields, m["crc_extra"])
        if compute_crc_extra(schema.name, fields) != schema.crc_extra:
            raise MalformedXml(f"crc_extra mismatch for {schema.name}")
        if [f.name for f in schema.wire_fields] != m["wire_order"]:
            raise MalformedXml(f"wire order mismatch for {schema.name}")
        if schema.id in messages:
            raise DuplicateMessageId(f"message id {schema.id} repeated in schema")
        messages[schema.id] = schema
    return Dialect(
        version=doc["version"],
        dialect=doc["dialect"],
        enums=enums,
        messages=messages,
        includes=tuple(doc["includes"]),
    )
