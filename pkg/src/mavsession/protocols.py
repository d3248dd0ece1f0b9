"""Builders for the shipped protocols: mission upload, pitch-rate guard, parachute guard.

The JSON files under ``data/protocols`` are produced by these builders with
default parameters and are what the proxy loads by default.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Union

from .refinement import FloatV, IntV, parse_refinement
from .session import (
    Choice,
    End,
    Mu,
    Offer,
    ProtocolSpec,
    Recur,
    check_against_dialect,
    load_protocol,
)

GCS, UAV = "GCS", "UAV"
BUILTIN_PROTOCOLS = ("mission", "param_guard", "parachute_guard")


def _enums(enums):
    if enums is not None:
        return enums
    from .dialect import bundled_dialect

    return bundled_dialect("common").enum_values


@dataclass(frozen=True)
class MissionParams:
    mission_item_limit: int = 65535

    def __post_init__(self) -> None:
        if not 1 < self.mission_item_limit <= 65535:
            raise ValueError(f"mission_item_limit must be in (1, 65535], got {self.mission_item_limit}")


@dataclass(frozen=True)
class PitchGuardParams:
    p: float = 1.0
    q: float = 1.0

    def __post_init__(self) -> None:
        for name in ("p", "q"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and positive, got {v}")


class AltitudeComparison(str, enum.Enum):
    ABOVE_MIN = "AboveMin"
    BELOW_MIN = "BelowMin"


@dataclass(frozen=True)
class ParachuteGuardParams:
    altitude_comparison: AltitudeComparison = AltitudeComparison.ABOVE_MIN
    forbidden_modes: tuple[str, ...] = ("ACRO", "FLIP")
    release_value: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "altitude_comparison", AltitudeComparison(self.altitude_comparison))
        object.__setattr__(self, "forbidden_modes", tuple(self.forbidden_modes))
        if not self.forbidden_modes:
            raise ValueError("forbidden_modes must not be empty")


def build_mission_protocol(params: MissionParams = MissionParams(), enums=None) -> ProtocolSpec:
    enums = _enums(enums)

    def ref(text):
        return parse_refinement(text, enums)

    item = Offer(GCS, UAV, (Choice("MISSION_ITEM_INT", (("seq", "y"),), ref("y == x"),
                                   Recur(0, ref("curr + 1"))),))
    loop = Offer(UAV, GCS, (
        Choice("MISSION_REQUEST_INT", (("seq", "x"),), ref("curr < N && x == curr"), item),
        Choice("MISSION_ACK", (("type", "t"),),
               ref("t != MAV_MISSION_RESULT.MAV_MISSION_ACCEPTED || curr == N"), End()),
    ))
    body = Offer(GCS, UAV, (
        Choice("MISSION_COUNT", (("count", "N"),), ref("N >= 1 && N < MISSION_ITEM_LIMIT"),
               Mu("curr", ref("0 <= curr && curr <= N"), ref("0"), loop)),
    ))
    return ProtocolSpec(
        name="mission",
        roles=(GCS, UAV),
        body=body,
        config={"MISSION_ITEM_LIMIT": IntV(params.mission_item_limit)},
    )


def build_param_guard(params: PitchGuardParams = PitchGuardParams(), enums=None) -> ProtocolSpec:
    enums = _enums(enums)
    body = Offer(GCS, UAV, (
        Choice("PARAM_SET", (("param_value", "n"),),
               parse_refinement("n < (p * MC_PITCH_P) * (q * MC_PITCHRATE_FF)", enums), End()),
    ))
    return ProtocolSpec(
        name="param_guard",
        roles=(GCS, UAV),
        body=body,
        externals=frozenset({"MC_PITCH_P", "MC_PITCHRATE_FF"}),
        config={"p": FloatV(float(params.p)), "q": FloatV(float(params.q))},
        filters={"PARAM_SET": parse_refinement('param_id == "MC_PITCHRATE_MAX"', enums)},
        persistent=True,
    )


def parachute_refinement_source(params: ParachuteGuardParams) -> str:
    op = ">=" if params.altitude_comparison is AltitudeComparison.ABOVE_MIN else "<="
    parts = [f"n == {params.release_value}", "motors_armed"]
    parts += [f'mode != "{m}"' for m in params.forbidden_modes]
    parts += ["v_z <= 0", f"alt {op} CHUTE_ALT_MIN"]
    return " && ".join(parts)


def build_parachute_guard(params: ParachuteGuardParams = ParachuteGuardParams(), enums=None
                          ) -> ProtocolSpec:
    enums = _enums(enums)
    refinement = parse_refinement(parachute_refinement_source(params), enums)
    is_chute = parse_refinement("command == MAV_CMD.MAV_CMD_DO_PARACHUTE", enums)
    carriers = ("COMMAND_LONG", "COMMAND_INT")
    body = Offer(GCS, UAV, tuple(
        Choice(label, (("param1", "n"),), refinement, End()) for label in carriers
    ))
    return ProtocolSpec(
        name="parachute_guard",
        roles=(GCS, UAV),
        body=body,
        externals=frozenset({"motors_armed", "mode", "v_z", "alt", "CHUTE_ALT_MIN"}),
        filters={label: is_chute for label in carriers},
        persistent=True,
    )


BUILDERS = {
    "mission": build_mission_protocol,
    "param_guard": build_param_guard,
    "parachute_guard": build_parachute_guard,
}


def builtin_protocol_text(name: str) -> str:
    if name not in BUILDERS:
        raise KeyError(f"no builtin protocol {name!r}; choose from {', '.join(BUILTIN_PROTOCOLS)}")
    return (resources.files("mavsession") / "data" / "protocols" / f"{name}.json").read_text("utf-8")


def resolve_protocol(ref: Union[str, Path], dialect=None) -> ProtocolSpec:
    """Load ``builtin:<name>`` or a protocol file, checked against ``dialect`` when given."""
    enums = dialect.enum_values if dialect is not None else None
    text = str(ref)
    if text.startswith("builtin:"):
        spec = load_protocol(builtin_protocol_text(text[len("builtin:"):]), _enums(enums))
    else:
        spec = load_protocol(Path(ref), _enums(enums))
    if dialect is not None:
        check_against_dialect(spec, dialect)
    return spec


def default_protocols(dialect=None, names: Optional[tuple[str, ...]] = None) -> list[ProtocolSpec]:
    return [resolve_protocol(f"builtin:{n}", dialect) for n in (names or BUILTIN_PROTOCOLS)]
