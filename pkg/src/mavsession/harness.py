"""Scenario generation, trace files, offline replay and the decision-latency bench.

Traces are JSON lines: a header object followed by one record per message.
Replay encodes every record into a real MAVLink v2 datagram and feeds it
through the same :class:`~mavsession.proxy.Router` the live proxy uses,
with a clock driven by the records' delays.
"""

from __future__ import annotations

import json
import math
import random
import resource
import statistics
import struct
import time
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from .proxy import Decision, ProxyConfig, Router, Verdict, config_from_document
from .refinement import ArrayV, FloatV, IntV, StrV, Value
from .session import Direction, ViolationReport
from .statectx import AUTOPILOT_IDS
from .wire import FieldMap, encode_frame, zero_fields

GCS_TO_UAV = "GCS->UAV"
UAV_TO_GCS = "UAV->GCS"
GCS_IDS = (255, 190)
UAV_IDS = (1, 1)
TRACE_FORMAT = 1


class InvalidParams(ValueError):
    pass


class TraceParseError(ValueError):
    pass


@dataclass(frozen=True)
class TraceRecord:
    direction: str
    label: str
    fields: Mapping[str, Any] = field(default_factory=dict)
    delay: float = 0.0

    def to_json(self) -> dict:
        out: dict[str, Any] = {"dir": self.direction, "label": self.label, "fields": dict(self.fields)}
        if self.delay:
            out["delay"] = self.delay
        return out


@dataclass(frozen=True)
class Expected:
    kind: str  # "AllForwarded" or "DropAt"
    index: Optional[int] = None
    reason: Optional[str] = None

    def to_json(self) -> dict:
        if self.kind == "AllForwarded":
            return {"kind": self.kind}
        return {"kind": self.kind, "index": self.index, "reason": self.reason}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Expected":
        kind = obj.get("kind")
        if kind == "AllForwarded":
            return cls(kind)
        if kind == "DropAt":
            return cls(kind, int(obj["index"]), str(obj["reason"]))
        raise TraceParseError(f"unknown expected outcome {obj!r}")

    def __str__(self) -> str:
        return self.kind if self.kind == "AllForwarded" else f"DropAt({self.index}, {self.reason})"


ALL_FORWARDED = Expected("AllForwarded")


@dataclass(frozen=True)
class Scenario:
    name: str
    params: Mapping[str, Any]
    seed: int
    records: tuple[TraceRecord, ...]
    expected: Expected

    def header(self) -> dict:
        return {"trace": TRACE_FORMAT, "scenario": self.name, "params": dict(self.params),
                "seed": self.seed, "expected": self.expected.to_json()}


# -- trace files ---------------------------------------------------------------------------


def dump_trace(scenario: Scenario) -> str:
    lines = [json.dumps(scenario.header(), sort_keys=True)]
    lines += [json.dumps(r.to_json(), sort_keys=True) for r in scenario.records]
    return "\n".join(lines) + "\n"


def write_trace(scenario: Scenario, path: Union[str, Path]) -> None:
    Path(path).write_text(dump_trace(scenario), encoding="utf-8")


def parse_trace(text: str) -> Scenario:
    """Parse trace text. The header line is optional for hand-written traces."""
    header: dict = {}
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceParseError(f"line {lineno}: {exc}") from None
        if not isinstance(obj, dict):
            raise TraceParseError(f"line {lineno}: expected an object")
        if "trace" in obj:
            if records or header:
                raise TraceParseError(f"line {lineno}: header must come first")
            if obj["trace"] != TRACE_FORMAT:
                raise TraceParseError(f"unsupported trace format {obj['trace']!r}")
            header = obj
            continue
        try:
            direction = str(obj["dir"])
            Direction.parse(direction)
            delay = float(obj.get("delay", 0.0))
            fields = obj.get("fields", {})
            if not isinstance(fields, dict) or not math.isfinite(delay) or delay < 0:
                raise ValueError("bad fields or delay")
            records.append(TraceRecord(direction, str(obj["label"]), fields, delay))
        except (KeyError, ValueError, TypeError) as exc:
            raise TraceParseError(f"line {lineno}: {exc}") from None
    expected = Expected.from_json(header["expected"]) if "expected" in header else ALL_FORWARDED
    return Scenario(header.get("scenario", "trace"), header.get("params", {}), header.get("seed", 0),
                    tuple(records), expected)


def load_trace(path: Union[str, Path]) -> Scenario:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise TraceParseError(f"cannot read {path}: {exc}") from None
    return parse_trace(text)


# -- record encoding ----------------------------------------------------------------------------


def _convert(f, raw, dialect) -> Value:
    if f.type == "char":
        if not isinstance(raw, str):
            raise TraceParseError(f"{f.name}: expected a string")
        return StrV(raw)
    is_float = f.type in ("float", "double")

    def scalar(x) -> Value:
        if isinstance(x, str) and f.enum and not is_float:
            entry = dialect.enums[f.enum].by_name.get(x) if f.enum in dialect.enums else None
            if entry is None:
                raise TraceParseError(f"{f.name}: {x!r} is not an entry of {f.enum}")
            return IntV(entry.value)
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise TraceParseError(f"{f.name}: expected a number, got {x!r}")
        if is_float:
            return FloatV(float(x))
        if isinstance(x, float) and not x.is_integer():
            raise TraceParseError(f"{f.name}: expected an integer, got {x!r}")
        return IntV(int(x))

    if f.array_length:
        if not isinstance(raw, list):
            raise TraceParseError(f"{f.name}: expected a list")
        return ArrayV(tuple(scalar(x) for x in raw))
    return scalar(raw)


def record_fieldmap(record: TraceRecord, dialect) -> FieldMap:
    try:
        schema = dialect.message(record.label)
    except KeyError:
        raise TraceParseError(f"unknown message {record.label}") from None
    values = zero_fields(schema)
    for name, raw in record.fields.items():
        f = schema.field_by_name.get(name)
        if f is None:
            raise TraceParseError(f"{record.label} has no field {name}")
        values[name] = _convert(f, raw, dialect)
    return FieldMap(schema, values)


def encode_records(records, dialect) -> list[bytes]:
    """One MAVLink v2 frame per record, sequence numbers counted per direction."""
    seqs: dict[str, int] = {}
    out = []
    for r in records:
        fm = record_fieldmap(r, dialect)
        seq = seqs.get(r.direction, 0)
        seqs[r.direction] = (seq + 1) % 256
        sys_id, comp_id = GCS_IDS if Direction.parse(r.direction).src == "GCS" else UAV_IDS
        try:
            out.append(encode_frame(fm.schema.id, fm, seq, sys_id, comp_id, fm.schema.crc_extra))
        except ValueError as exc:
            raise TraceParseError(f"{r.label}: {exc}") from None
    return out


# -- scenarios ----------------------------------------------------------------------------------


class _Builder:
    def __init__(self, rng: random.Random, heartbeat_period: float = 1.0, base_delay: float = 0.02):
        self.rng = rng
        self.records: list[TraceRecord] = []
        self.period = heartbeat_period
        self.base_delay = base_delay
        self.clock = 0.0
        self.last_beat: Optional[float] = None
        self.uav_heartbeat: dict = {"type": 2, "autopilot": 3, "base_mode": 0x81, "custom_mode": 3,
                                    "system_status": 4, "mavlink_version": 3}

    def add(self, direction: str, label: str, fields: dict, delay: Optional[float] = None) -> int:
        if delay is None:
            delay = round(self.rng.uniform(0.5, 1.5) * self.base_delay, 6)
        self.clock += delay
        if self.period and (self.last_beat is None or self.clock - self.last_beat >= self.period):
            self.beat(delay)
            delay = 0.0
        self.records.append(TraceRecord(direction, label, fields, delay))
        return len(self.records) - 1

    def beat(self, delay: float = 0.0) -> None:
        self.last_beat = self.clock
        self.records.append(TraceRecord(UAV_TO_GCS, "HEARTBEAT", dict(self.uav_heartbeat), delay))
        self.records.append(TraceRecord(GCS_TO_UAV, "HEARTBEAT", {
            "type": 6, "autopilot": 8, "base_mode": 0, "custom_mode": 0, "system_status": 4,
            "mavlink_version": 3}))


def _mission(b: _Builder, n: int, items: int, ack: str = "MAV_MISSION_ACCEPTED", first_req: int = 0) -> int:
    b.add(GCS_TO_UAV, "MISSION_COUNT", {"target_system": 1, "target_component": 1, "count": n})
    for i in range(items):
        b.add(UAV_TO_GCS, "MISSION_REQUEST_INT", {"target_system": 255, "target_component": 190,
                                                   "seq": i + first_req})
        lat = 473977420 + b.rng.randint(-20000, 20000)
        lon = 85455940 + b.rng.randint(-20000, 20000)
        b.add(GCS_TO_UAV, "MISSION_ITEM_INT", {
            "target_system": 1, "target_component": 1, "seq": i + first_req, "frame": 6, "command": 16,
            "current": 1 if i == 0 else 0, "autocontinue": 1, "x": lat, "y": lon,
            "z": float(b.rng.randint(20, 60))})
    return b.add(UAV_TO_GCS, "MISSION_ACK", {"target_system": 255, "target_component": 190, "type": ack})


def _int_param(params, name, default=None, lo=None, hi=None) -> int:
    v = params.get(name, default)
    if v is None:
        raise InvalidParams(f"missing parameter {name}")
    if isinstance(v, bool) or not isinstance(v, int):
        try:
            v = int(str(v))
        except ValueError:
            raise InvalidParams(f"{name} must be an integer, got {v!r}") from None
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise InvalidParams(f"{name}={v} out of range")
    return v


def _float_param(params, name, default) -> float:
    v = params.get(name, default)
    try:
        v = float(v)
    except (TypeError, ValueError):
        raise InvalidParams(f"{name} must be a number, got {v!r}") from None
    if not math.isfinite(v):
        raise InvalidParams(f"{name} must be finite")
    return v


def _bool_param(params, name, default) -> bool:
    v = params.get(name, default)
    if isinstance(v, str):
        if v.lower() in ("1", "true", "yes"):
            return True
        if v.lower() in ("0", "false", "no"):
            return False
        raise InvalidParams(f"{name} must be a boolean, got {v!r}")
    return bool(v)


def _f32(x: float) -> float:
    return struct.unpack("<f", struct.pack("<f", x))[0]


def good_mission(params, rng) -> tuple[list, Expected]:
    n = _int_param(params, "N", lo=1, hi=65534)
    b = _Builder(rng, _float_param(params, "heartbeat_period", 1.0))
    _mission(b, n, n)
    return b.records, ALL_FORWARDED


def stale_buffer(params, rng):
    n = _int_param(params, "N", lo=1, hi=65534)
    k = _int_param(params, "k", lo=0)
    if k >= n:
        raise InvalidParams(f"stale_buffer needs k < N, got N={n}, k={k}")
    b = _Builder(rng, _float_param(params, "heartbeat_period", 1.0))
    at = _mission(b, n, k)
    return b.records, Expected("DropAt", at, "RefinementFalse")


def out_of_order_request(params, rng):
    n = _int_param(params, "N", lo=2, hi=65534)
    b = _Builder(rng, _float_param(params, "heartbeat_period", 1.0))
    b.add(GCS_TO_UAV, "MISSION_COUNT", {"target_system": 1, "target_component": 1, "count": n})
    at = b.add(UAV_TO_GCS, "MISSION_REQUEST_INT", {"target_system": 255, "target_component": 190, "seq": 1})
    return b.records, Expected("DropAt", at, "RefinementFalse")


def param_attack(params, rng):
    value = _float_param(params, "value", 20.0)
    pitch_p = _float_param(params, "MC_PITCH_P", 6.5)
    rate_ff = _float_param(params, "MC_PITCHRATE_FF", 2.0)
    p = _float_param(params, "p", 1.0)
    q = _float_param(params, "q", 1.0)
    populate = _bool_param(params, "populate", True)
    b = _Builder(rng, _float_param(params, "heartbeat_period", 1.0))
    b.beat()
    if populate:
        for i, (pid, v) in enumerate((("MC_PITCH_P", pitch_p), ("MC_PITCHRATE_FF", rate_ff))):
            b.add(UAV_TO_GCS, "PARAM_VALUE", {"param_id": pid, "param_value": v, "param_type": 9,
                                              "param_count": 2, "param_index": i})
    # an unrelated parameter change goes through untouched
    b.add(GCS_TO_UAV, "PARAM_SET", {"target_system": 1, "target_component": 1, "param_id": "MC_ROLL_P",
                                    "param_value": 6.5, "param_type": 9})
    at = b.add(GCS_TO_UAV, "PARAM_SET", {"target_system": 1, "target_component": 1,
                                         "param_id": "MC_PITCHRATE_MAX", "param_value": value, "param_type": 9})
    if not populate:
        return b.records, Expected("DropAt", at, "EvaluationError")
    limit = (p * _f32(pitch_p)) * (q * _f32(rate_ff))
    ok = _f32(value) < limit
    return b.records, ALL_FORWARDED if ok else Expected("DropAt", at, "RefinementFalse")


ARDUCOPTER_MODES = {"STABILIZE": 0, "ACRO": 1, "ALT_HOLD": 2, "AUTO": 3, "GUIDED": 4, "LOITER": 5,
                    "RTL": 6, "LAND": 9, "FLIP": 14, "POSHOLD": 16}


def parachute_attack(params, rng):
    armed = _bool_param(params, "armed", True)
    mode = str(params.get("mode", "STABILIZE"))
    if mode not in ARDUCOPTER_MODES:
        raise InvalidParams(f"mode must be one of {sorted(ARDUCOPTER_MODES)}")
    v_z = _float_param(params, "v_z", -0.5)
    alt = _float_param(params, "alt", 40.0)
    chute_alt_min = _float_param(params, "CHUTE_ALT_MIN", 30.0)
    param1 = _float_param(params, "param1", 2.0)
    carrier = str(params.get("carrier", "COMMAND_LONG"))
    if carrier not in ("COMMAND_LONG", "COMMAND_INT"):
        raise InvalidParams("carrier must be COMMAND_LONG or COMMAND_INT")
    stale = _float_param(params, "stale_delay", 0.0)
    below = str(params.get("altitude_comparison", "AboveMin")) == "BelowMin"

    b = _Builder(rng, 0.0)
    b.uav_heartbeat.update(base_mode=(0x80 if armed else 0) | 0x01, custom_mode=ARDUCOPTER_MODES[mode],
                           autopilot=AUTOPILOT_IDS["MAV_AUTOPILOT_ARDUPILOTMEGA"])
    b.beat()
    b.add(UAV_TO_GCS, "PARAM_VALUE", {"param_id": "CHUTE_ALT_MIN", "param_value": chute_alt_min,
                                      "param_type": 9, "param_count": 1, "param_index": 0})
    rel_mm = int(round(alt * 1000))
    vz_cms = int(round(-v_z * 100))
    b.add(UAV_TO_GCS, "GLOBAL_POSITION_INT", {"time_boot_ms": 1000, "lat": 473977420, "lon": 85455940,
                                              "alt": 488000 + rel_mm, "relative_alt": rel_mm, "vx": 0,
                                              "vy": 0, "vz": vz_cms, "hdg": 0})
    cmd = {"target_system": 1, "target_component": 1, "command": "MAV_CMD_DO_PARACHUTE", "param1": param1}
    at = b.add(GCS_TO_UAV, carrier, cmd, delay=0.05 + stale)
    if stale > 3.0:
        return b.records, Expected("DropAt", at, "EvaluationError")
    alt_ok = rel_mm / 1000 <= _f32(chute_alt_min) if below else rel_mm / 1000 >= _f32(chute_alt_min)
    ok = (_f32(param1) == 2 and armed and mode not in ("ACRO", "FLIP") and -vz_cms / 100 <= 0 and alt_ok)
    return b.records, ALL_FORWARDED if ok else Expected("DropAt", at, "RefinementFalse")


SCENARIOS = {
    "good_mission": good_mission,
    "stale_buffer": stale_buffer,
    "out_of_order_request": out_of_order_request,
    "param_attack": param_attack,
    "parachute_attack": parachute_attack,
}


def generate_scenario(kind: str, params: Optional[Mapping[str, Any]] = None, seed: int = 0) -> Scenario:
    if kind not in SCENARIOS:
        raise InvalidParams(f"unknown scenario {kind!r}; choose from {', '.join(SCENARIOS)}")
    params = dict(params or {})
    records, expected = SCENARIOS[kind](params, random.Random(f"{kind}:{seed}"))
    return Scenario(kind, params, seed, tuple(records), expected)


# -- replay -------------------------------------------------------------------------------------


@dataclass
class ReplayReport:
    decisions: list[Decision]
    record_index: list[int]
    final: dict[str, str]
    summary: dict

    @property
    def violations(self) -> list[ViolationReport]:
        return [r for d in self.decisions for r in d.reports]

    def first_violation(self) -> Optional[tuple[int, Decision]]:
        for idx, d in zip(self.record_index, self.decisions):
            if d.reports:
                return idx, d
        return None

    def outcome(self) -> Expected:
        hit = self.first_violation()
        if hit is None:
            return ALL_FORWARDED
        idx, d = hit
        return Expected("DropAt", idx, d.reports[0].reason.value)

    def matches(self, expected: Expected) -> bool:
        return self.outcome() == expected

    def decision_lines(self) -> list[str]:
        return [json.dumps(d.to_json(), sort_keys=True) for d in self.decisions]

    def to_json(self) -> dict:
        return {"outcome": self.outcome().to_json(), "final": self.final, "summary": self.summary,
                "decisions": [d.to_json() for d in self.decisions]}


def default_config(**overrides) -> ProxyConfig:
    return config_from_document({}, **overrides)


def replay_trace(scenario: Union[Scenario, list], config: Optional[ProxyConfig] = None,
                 start_time: float = 0.0) -> ReplayReport:
    config = config or default_config()
    records = scenario.records if isinstance(scenario, Scenario) else tuple(scenario)
    frames = encode_records(records, config.dialect)
    router = Router(config)
    now = start_time
    index = []
    for i, (rec, raw) in enumerate(zip(records, frames)):
        now += rec.delay
        before = len(router.decisions)
        router.handle_datagram(Direction.parse(rec.direction), raw, now)
        index += [i] * (len(router.decisions) - before)
    return ReplayReport(router.decisions, index, router.table.status(),
                        router.counters.summary(router.table))


# -- bench --------------------------------------------------------------------------------------


@dataclass
class BenchReport:
    scenario: str
    repetitions: int
    messages: int
    median_us: float
    mean_us: float
    stdev_us: float
    min_us: float
    max_us: float
    peak_rss_kb: int
    protocols: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    def table(self) -> str:
        rows = [
            ("scenario", self.scenario),
            ("protocols", ", ".join(self.protocols)),
            ("repetitions", str(self.repetitions)),
            ("messages / repetition", str(self.messages)),
            ("decision latency", f"{self.mean_us:.2f} ± {self.stdev_us:.2f} μs"),
            ("median", f"{self.median_us:.2f} μs"),
            ("range", f"{self.min_us:.2f} .. {self.max_us:.2f} μs"),
            ("peak RSS", f"{self.peak_rss_kb:,} KB"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def bench(config: Optional[ProxyConfig] = None, scenario: Optional[Scenario] = None,
          repetitions: int = 30) -> BenchReport:
    """Time ``route`` per message (frame in, decision out) over ``repetitions`` replays."""
    if repetitions < 30:
        raise InvalidParams("bench needs at least 30 repetitions")
    config = config or default_config()
    scenario = scenario or generate_scenario("good_mission", {"N": 100})
    frames = []
    from .wire import decode_frame

    for rec, raw in zip(scenario.records, encode_records(scenario.records, config.dialect)):
        frame, _ = decode_frame(raw, config.dialect.crc_extras)
        frames.append((Direction.parse(rec.direction), frame, rec.delay))
    samples: list[float] = []
    clock = time.perf_counter_ns
    for _ in range(repetitions):
        router = Router(config, keep_decisions=False)
        now = 0.0
        for direction, frame, delay in frames:
            now += delay
            t0 = clock()
            router.route(direction, frame, now)
            samples.append((clock() - t0) / 1000.0)
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return BenchReport(
        scenario=scenario.name,
        repetitions=repetitions,
        messages=len(frames),
        median_us=statistics.median(samples),
        mean_us=statistics.fmean(samples),
        stdev_us=statistics.stdev(samples) if len(samples) > 1 else 0.0,
        min_us=min(samples),
        max_us=max(samples),
        peak_rss_kb=int(peak),
        protocols=tuple(p.name for p in config.protocols),
    )


def verdicts(report: ReplayReport) -> list[str]:
    return [d.verdict.value for d in report.decisions]


__all__ = [
    "ALL_FORWARDED", "BenchReport", "Expected", "InvalidParams", "ReplayReport", "SCENARIOS", "Scenario",
    "TraceParseError", "TraceRecord", "Verdict", "bench", "default_config", "dump_trace", "encode_records",
    "generate_scenario", "load_trace", "parse_trace", "record_fieldmap", "replay_trace", "verdicts",
    "write_trace",
]
