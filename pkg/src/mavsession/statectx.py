"""Vehicle-state and parameter shadow fed by telemetry crossing the proxy.

The context is an immutable value: every update returns a new context, so
the proxy can take a consistent snapshot for each refinement evaluation.
Dynamic readings go stale after ``max_age`` seconds; parameters never expire.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterator, Optional, Union

from .refinement import BoolV, EnumV, FloatV, IntV, StrV, Value

ARMED_FLAG = 0x80  # MAV_MODE_FLAG_SAFETY_ARMED
AUTOPILOT_INVALID = 8
AUTOPILOT_IDS = {
    "MAV_AUTOPILOT_GENERIC": 0,
    "MAV_AUTOPILOT_ARDUPILOTMEGA": 3,
    "MAV_AUTOPILOT_PX4": 12,
}
DYNAMIC_NAMES = ("motors_armed", "mode", "alt", "v_z")


class _Unavailable:
    __slots__ = ()

    def __repr__(self) -> str:
        return "Unavailable"

    def __bool__(self) -> bool:
        return False


Unavailable = _Unavailable()


@dataclass(frozen=True)
class Reading:
    value: Value
    at: float


@dataclass(frozen=True)
class VehicleState:
    motors_armed: Optional[Reading] = None
    mode: Optional[Reading] = None
    alt: Optional[Reading] = None
    v_z: Optional[Reading] = None


@dataclass(frozen=True)
class StateSettings:
    """``modes`` maps autopilot id -> {custom_mode: mode name}."""

    max_age: float = 3.0
    modes: Mapping[int, Mapping[int, str]] = field(default_factory=dict)
    uav_role: str = "UAV"


@dataclass(frozen=True)
class StateContext:
    settings: StateSettings = field(default_factory=StateSettings)
    vehicle: VehicleState = field(default_factory=VehicleState)
    params: Mapping[str, Reading] = field(default_factory=dict)
    skipped: int = 0

    def lookup(self, name: str, now: float, max_age: Optional[float] = None):
        return lookup_state(self, name, now, max_age)

    def view(self, now: float) -> "StateView":
        return StateView(self, now)


def _int(v) -> Optional[int]:
    if isinstance(v, (IntV, EnumV)):
        return v.value
    return None


def _float(v) -> Optional[float]:
    if isinstance(v, (IntV, FloatV)):
        x = float(v.value)
        return x if math.isfinite(x) else None
    return None


def _fresh(old: Optional[Reading], value: Value, now: float) -> Reading:
    # freshness never moves backwards, even if the clock does
    at = now if old is None else max(old.at, now)
    return Reading(value, at)


def _set_param(ctx: StateContext, fields: Mapping[str, Value], now: float) -> StateContext:
    pid = fields.get("param_id")
    value = _float(fields.get("param_value"))
    if not isinstance(pid, StrV) or not pid.value or len(pid.value) > 16 or value is None:
        return replace(ctx, skipped=ctx.skipped + 1)
    params = dict(ctx.params)
    params[pid.value] = _fresh(params.get(pid.value), FloatV(value), now)
    return replace(ctx, params=params)


def decode_mode(settings: StateSettings, autopilot: int, custom_mode: int) -> Optional[str]:
    return settings.modes.get(autopilot, {}).get(custom_mode)


def update_from_message(
    ctx: StateContext,
    direction,
    label: str,
    fields: Mapping[str, Value],
    now: float,
    *,
    forwarded: bool = False,
) -> StateContext:
    """Fold one observed message into the context.

    Telemetry counts only when it comes from the vehicle. PARAM_SET is applied
    only with ``forwarded=True``, i.e. after the proxy has let it through.
    """
    from_uav = direction.src == ctx.settings.uav_role
    if label == "PARAM_SET":
        return _set_param(ctx, fields, now) if forwarded and not from_uav else ctx
    if not from_uav:
        return ctx
    v = ctx.vehicle
    if label == "HEARTBEAT":
        autopilot = _int(fields.get("autopilot"))
        base_mode = _int(fields.get("base_mode"))
        custom_mode = _int(fields.get("custom_mode"))
        if autopilot is None or base_mode is None or custom_mode is None:
            return replace(ctx, skipped=ctx.skipped + 1)
        if autopilot == AUTOPILOT_INVALID:
            return ctx
        armed = _fresh(v.motors_armed, BoolV(bool(base_mode & ARMED_FLAG)), now)
        name = decode_mode(ctx.settings, autopilot, custom_mode)
        # an unmapped mode makes the mode unknown rather than keeping a stale name
        mode = _fresh(v.mode, StrV(name), now) if name is not None else None
        return replace(ctx, vehicle=replace(v, motors_armed=armed, mode=mode))
    if label == "GLOBAL_POSITION_INT":
        rel = _int(fields.get("relative_alt"))
        vz = _int(fields.get("vz"))
        if rel is None or vz is None:
            return replace(ctx, skipped=ctx.skipped + 1)
        return replace(ctx, vehicle=replace(
            v,
            alt=_fresh(v.alt, FloatV(rel / 1000.0), now),
            v_z=_fresh(v.v_z, FloatV(-vz / 100.0), now),
        ))
    if label == "PARAM_VALUE":
        return _set_param(ctx, fields, now)
    return ctx


def apply_param_set(ctx: StateContext, direction, fields: Mapping[str, Value], now: float) -> StateContext:
    return update_from_message(ctx, direction, "PARAM_SET", fields, now, forwarded=True)


def lookup_state(ctx: StateContext, name: str, now: float, max_age: Optional[float] = None):
    """The stored value if fresh, else ``Unavailable``."""
    if name in DYNAMIC_NAMES:
        reading = getattr(ctx.vehicle, name)
        limit = ctx.settings.max_age if max_age is None else max_age
        if reading is None or now - reading.at > limit:
            return Unavailable
        return reading.value
    reading = ctx.params.get(name)
    return Unavailable if reading is None else reading.value


class StateView(Mapping):
    """Read-only mapping of the names available at ``now``; usable as an Env layer."""

    __slots__ = ("ctx", "now")

    def __init__(self, ctx: StateContext, now: float):
        self.ctx = ctx
        self.now = now

    def __getitem__(self, name: str) -> Value:
        v = lookup_state(self.ctx, name, self.now)
        if v is Unavailable:
            raise KeyError(name)
        return v

    def __contains__(self, name: object) -> bool:
        return isinstance(name, str) and lookup_state(self.ctx, name, self.now) is not Unavailable

    def __iter__(self) -> Iterator[str]:
        for name in (*DYNAMIC_NAMES, *sorted(self.ctx.params)):
            if name in self:
                yield name

    def __len__(self) -> int:
        return sum(1 for _ in self)


def mode_table_from_document(doc: Mapping) -> dict[int, dict[int, str]]:
    out: dict[int, dict[int, str]] = {}
    for autopilot, entries in doc.get("modes", {}).items():
        ap = AUTOPILOT_IDS.get(autopilot)
        if ap is None:
            try:
                ap = int(autopilot)
            except ValueError:
                raise ValueError(f"unknown autopilot {autopilot!r} in mode table") from None
        out[ap] = {int(k): str(v) for k, v in entries.items()}
    return out


def settings_from_document(doc: Mapping) -> StateSettings:
    """Build settings from a mode-table document ``{"max_age": s, "modes": {...}}``."""
    max_age = float(doc.get("max_age", 3.0))
    if not (math.isfinite(max_age) and max_age >= 0):
        raise ValueError(f"max_age must be a non-negative number, got {max_age}")
    return StateSettings(max_age=max_age, modes=mode_table_from_document(doc),
                         uav_role=doc.get("uav_role", "UAV"))


def default_mode_document() -> dict:
    return json.loads((resources.files("mavsession") / "data" / "modes.json").read_text("utf-8"))


def load_settings(source: Union[str, Path, Mapping, None] = None, **overrides) -> StateSettings:
    """Settings from a file path, a document, or the bundled table (``None``)."""
    if source is None:
        doc = default_mode_document()
    elif isinstance(source, Mapping):
        doc = dict(default_mode_document(), **source) if "modes" not in source else dict(source)
    else:
        doc = json.loads(Path(source).read_text(encoding="utf-8"))
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return settings_from_document(doc)
