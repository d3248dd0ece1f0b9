"""In-line UDP enforcement proxy between a GCS and an autopilot.

:func:`route_message` is the pure decision core shared with offline replay.
:class:`UdpProxy` wraps it with two asyncio datagram endpoints. Every
datagram is handled to completion inside the event loop callback, so both
directions go through one serialized decision pipeline in arrival order.
"""

from __future__ import annotations

import asyncio
import enum
import json
import logging
import signal
import sys
import time
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, TextIO, Union

from .dialect import Dialect, DialectError, resolve_dialect
from .protocols import BUILTIN_PROTOCOLS, resolve_protocol
from .session import (
    Direction,
    IllFormedProtocol,
    MonitorState,
    ObservedMessage,
    ProtocolSpec,
    StepKind,
    StepResult,
    ViolationReport,
    relevance,
    start,
    step,
)
from .statectx import StateContext, StateSettings, apply_param_set, load_settings, update_from_message
from .wire import Frame, StreamDecoder, decode_payload

log = logging.getLogger(__name__)

GCS_TO_UAV = Direction("GCS", "UAV")
UAV_TO_GCS = Direction("UAV", "GCS")


class ConfigError(ValueError):
    pass


class BindFailure(OSError):
    pass


class Mode(str, enum.Enum):
    ENFORCE = "enforce"
    WARN = "warn"


class Verdict(str, enum.Enum):
    FORWARD = "forward"
    DROP = "drop"


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int

    @classmethod
    def parse(cls, text: Union[str, "Endpoint", list, tuple]) -> "Endpoint":
        if isinstance(text, Endpoint):
            return text
        if isinstance(text, (list, tuple)):
            host, port = text
        else:
            host, sep, port = str(text).rpartition(":")
            if not sep:
                raise ConfigError(f"endpoint must be host:port, got {text!r}")
        try:
            port = int(port)
        except ValueError:
            raise ConfigError(f"bad port in endpoint {text!r}") from None
        if not 0 <= port <= 65535:
            raise ConfigError(f"port out of range in endpoint {text!r}")
        return cls(host or "127.0.0.1", port)

    @property
    def addr(self) -> tuple[str, int]:
        return (self.host, self.port)

    def __str__(self) -> str:
        return f"{self.host}:{self.port}"


@dataclass
class ProxyConfig:
    """Everything the routing core and the relay need.

    ``gcs_endpoint`` may be left unset; the proxy then replies to the source
    address of the most recent GCS datagram.
    """

    dialect: Dialect
    protocols: tuple[ProtocolSpec, ...]
    mode: Mode = Mode.ENFORCE
    state: StateSettings = field(default_factory=load_settings)
    retransmission: bool = True
    gcs_listen: Endpoint = Endpoint("127.0.0.1", 14550)
    gcs_endpoint: Optional[Endpoint] = None
    uav_bind: Endpoint = Endpoint("127.0.0.1", 0)
    uav_endpoint: Endpoint = Endpoint("127.0.0.1", 14555)
    report_path: Optional[Path] = None

    def __post_init__(self) -> None:
        self.protocols = tuple(self.protocols)
        self.mode = Mode(self.mode)
        if not self.protocols:
            raise ConfigError("at least one protocol must be loaded")
        names = [p.name for p in self.protocols]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate protocol names: {names}")
        fixed = [e for e in (self.gcs_listen, self.gcs_endpoint, self.uav_endpoint) if e is not None]
        if self.uav_bind.port:
            fixed.append(self.uav_bind)
        if len(set(fixed)) != len(fixed):
            raise ConfigError("proxy endpoints must be distinct")


# -- routing core ----------------------------------------------------------------------


@dataclass(frozen=True)
class SessionTable:
    """One monitor per protocol, in load order."""

    states: tuple[MonitorState, ...]

    @classmethod
    def fresh(cls, protocols) -> "SessionTable":
        return cls(tuple(start(p) for p in protocols))

    def status(self) -> dict[str, str]:
        return {s.spec.name: s.status.value for s in self.states}

    def by_name(self, name: str) -> MonitorState:
        for s in self.states:
            if s.spec.name == name:
                return s
        raise KeyError(name)


@dataclass(frozen=True)
class Decision:
    verdict: Verdict
    direction: str
    msg_id: int
    label: str
    timestamp: float
    outcomes: tuple[tuple[str, str], ...] = ()
    reports: tuple[ViolationReport, ...] = ()

    def signature(self) -> tuple:
        """The decision without its clock reading, for live/offline comparison."""
        return (self.verdict.value, self.direction, self.label, self.outcomes,
                tuple(r.reason.value for r in self.reports))

    def to_json(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "verdict": self.verdict.value,
            "direction": self.direction,
            "msg_id": self.msg_id,
            "label": self.label,
            "outcomes": dict(self.outcomes),
            "reports": [r.to_json() for r in self.reports],
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Decision":
        return cls(
            verdict=Verdict(obj["verdict"]),
            direction=obj["direction"],
            msg_id=obj["msg_id"],
            label=obj["label"],
            timestamp=obj["timestamp"],
            outcomes=tuple(obj["outcomes"].items()),
            reports=tuple(ViolationReport.from_json(r) for r in obj["reports"]),
        )


def _offer(state: MonitorState, msg: ObservedMessage, externals, now: float, retransmission: bool
           ) -> StepResult:
    res = step(state, msg, externals, now=now, tolerate_retransmission=retransmission)
    if res.kind in (StepKind.COMPLETED, StepKind.VIOLATION) and res.state is state:
        # terminal monitor: a relevant message re-arms a fresh session
        if not relevance(state.spec, msg)[0]:
            return StepResult(StepKind.IRRELEVANT, state)
        return step(start(state.spec), msg, externals, now=now, tolerate_retransmission=False)
    return res


def route_message(
    config: ProxyConfig,
    table: SessionTable,
    ctx: StateContext,
    direction: Direction,
    frame: Frame,
    now: float,
) -> tuple[Decision, SessionTable, StateContext]:
    """Decide one checksum-valid frame. Pure given ``now``."""
    schema = config.dialect.messages.get(frame.msg_id) if frame.verified else None
    if schema is None:
        return (Decision(Verdict.FORWARD, str(direction), frame.msg_id, f"#{frame.msg_id}", now),
                table, ctx)
    fields = decode_payload(schema, frame.payload, config.dialect.enums)
    ctx = update_from_message(ctx, direction, schema.name, fields, now)
    msg = ObservedMessage(direction, schema.name, fields)
    externals = ctx.view(now)
    results = [_offer(s, msg, externals, now, config.retransmission) for s in table.states]
    reports = tuple(r.report for r in results if r.kind is StepKind.VIOLATION)
    drop = bool(reports) and config.mode is Mode.ENFORCE
    if drop:
        # the message never reaches the far side, so only the violated monitors move
        states = tuple(r.state if r.kind is StepKind.VIOLATION else s
                       for s, r in zip(table.states, results))
    else:
        states = tuple(r.state for r in results)
    if not drop and schema.name == "PARAM_SET":
        ctx = apply_param_set(ctx, direction, fields, now)
    outcomes = tuple((s.spec.name, r.kind.value) for s, r in zip(table.states, results)
                     if r.kind is not StepKind.IRRELEVANT)
    decision = Decision(Verdict.DROP if drop else Verdict.FORWARD, str(direction), frame.msg_id,
                        schema.name, now, outcomes, reports)
    return decision, SessionTable(states), ctx


@dataclass
class Counters:
    seen: int = 0
    forwarded: int = 0
    dropped: int = 0
    unknown: int = 0
    resync: int = 0
    undeliverable: int = 0
    per_protocol: dict = field(default_factory=dict)

    def record(self, decision: Decision) -> None:
        self.seen += 1
        if decision.verdict is Verdict.FORWARD:
            self.forwarded += 1
        else:
            self.dropped += 1
        if decision.label.startswith("#"):
            self.unknown += 1
        violated = {r.protocol for r in decision.reports}
        for name, _ in decision.outcomes:
            c = self.per_protocol.setdefault(name, {"seen": 0, "forwarded": 0, "dropped": 0, "violations": 0})
            c["seen"] += 1
            c["forwarded" if decision.verdict is Verdict.FORWARD else "dropped"] += 1
            if name in violated:
                c["violations"] += 1

    def summary(self, table: Optional[SessionTable] = None) -> dict:
        out = {k: getattr(self, k) for k in ("seen", "forwarded", "dropped", "unknown", "resync", "undeliverable")}
        out["protocols"] = {name: dict(c) for name, c in sorted(self.per_protocol.items())}
        if table is not None:
            for name, status in table.status().items():
                out["protocols"].setdefault(name, {"seen": 0, "forwarded": 0, "dropped": 0, "violations": 0})
                out["protocols"][name]["status"] = status
        return out


def report_lines(decision: Decision, mode: Mode) -> list[str]:
    """One self-contained JSON line per violation report."""
    action = decision.verdict.value
    return [json.dumps(dict(r.to_json(), action=action, mode=mode.value), sort_keys=True)
            for r in decision.reports]


class Router:
    """Stateful wrapper around :func:`route_message` with counters and report output."""

    def __init__(self, config: ProxyConfig, report_sink: Optional[TextIO] = None, keep_decisions: bool = True,
                 decision_sink: Optional[TextIO] = None):
        self.config = config
        self.decision_sink = decision_sink
        self.table = SessionTable.fresh(config.protocols)
        self.ctx = StateContext(config.state)
        self.counters = Counters()
        self.decisions: list[Decision] = []
        self.keep_decisions = keep_decisions
        self.report_sink = report_sink

    def route(self, direction: Direction, frame: Frame, now: float) -> Decision:
        decision, self.table, self.ctx = route_message(self.config, self.table, self.ctx, direction, frame, now)
        self.counters.record(decision)
        if self.keep_decisions:
            self.decisions.append(decision)
        if self.decision_sink is not None:
            self.decision_sink.write(json.dumps(decision.to_json(), sort_keys=True) + "\n")
        if self.report_sink is not None and decision.reports:
            for line in report_lines(decision, self.config.mode):
                self.report_sink.write(line + "\n")
        return decision

    def handle_datagram(self, direction: Direction, data: bytes, now: float) -> bytes:
        """Route every frame in a datagram; returns the bytes to forward (possibly empty)."""
        out = []
        # datagram boundaries are frame boundaries, so each datagram gets a fresh decoder
        decoder = StreamDecoder(self.config.dialect.crc_extras)
        items = decoder.feed(data)
        if decoder.pending:
            self.counters.resync += 1
        for item in items:
            if not isinstance(item, Frame):
                self.counters.resync += 1
                continue
            if self.route(direction, item, now).verdict is Verdict.FORWARD:
                out.append(item.to_bytes())
        return b"".join(out)


# -- live relay ----------------------------------------------------------------------------


class _Leg(asyncio.DatagramProtocol):
    def __init__(self, on_datagram: Callable[[bytes, tuple], None]):
        self.on_datagram = on_datagram
        self.transport: Optional[asyncio.DatagramTransport] = None

    def connection_made(self, transport) -> None:
        self.transport = transport

    def datagram_received(self, data: bytes, addr) -> None:
        self.on_datagram(data, addr)

    def error_received(self, exc: Exception) -> None:
        log.warning("socket error: %s", exc)


class UdpProxy:
    def __init__(self, config: ProxyConfig, clock: Callable[[], float] = time.time,
                 report_sink: Optional[TextIO] = None, keep_decisions: bool = True,
                 decision_sink: Optional[TextIO] = None):
        self.config = config
        self.clock = clock
        self.router = Router(config, report_sink, keep_decisions, decision_sink)
        self._gcs: Optional[_Leg] = None
        self._uav: Optional[_Leg] = None
        self._gcs_peer: Optional[tuple] = config.gcs_endpoint.addr if config.gcs_endpoint else None

    @property
    def gcs_address(self) -> tuple:
        return self._gcs.transport.get_extra_info("sockname")

    @property
    def uav_address(self) -> tuple:
        return self._uav.transport.get_extra_info("sockname")

    async def start(self) -> None:
        loop = asyncio.get_running_loop()
        try:
            _, self._gcs = await loop.create_datagram_endpoint(
                lambda: _Leg(self._from_gcs), local_addr=self.config.gcs_listen.addr)
            _, self._uav = await loop.create_datagram_endpoint(
                lambda: _Leg(self._from_uav), local_addr=self.config.uav_bind.addr)
        except OSError as exc:
            self.stop()
            raise BindFailure(f"cannot bind proxy sockets: {exc}") from exc

    def stop(self) -> None:
        for leg in (self._gcs, self._uav):
            if leg is not None and leg.transport is not None:
                leg.transport.close()
        for sink in (self.router.report_sink, self.router.decision_sink):
            if sink is not None:
                sink.flush()

    def _from_gcs(self, data: bytes, addr) -> None:
        if self.config.gcs_endpoint is None:
            self._gcs_peer = addr
        out = self.router.handle_datagram(GCS_TO_UAV, data, self.clock())
        if out:
            self._uav.transport.sendto(out, self.config.uav_endpoint.addr)

    def _from_uav(self, data: bytes, addr) -> None:
        out = self.router.handle_datagram(UAV_TO_GCS, data, self.clock())
        if not out:
            return
        if self._gcs_peer is None:
            self.router.counters.undeliverable += 1
            return
        self._gcs.transport.sendto(out, self._gcs_peer)

    def summary(self) -> dict:
        return self.router.counters.summary(self.router.table)


def format_summary(summary: dict) -> str:
    lines = [f"messages seen {summary['seen']}, forwarded {summary['forwarded']}, "
             f"dropped {summary['dropped']} (unknown ids {summary['unknown']}, resync {summary['resync']})"]
    for name, c in summary["protocols"].items():
        lines.append(f"  {name}: seen {c['seen']}, forwarded {c['forwarded']}, dropped {c['dropped']}, "
                     f"violations {c['violations']}, status {c.get('status', '?')}")
    return "\n".join(lines)


async def serve(config: ProxyConfig, stop: asyncio.Event, out: TextIO = sys.stdout,
                decisions_path: Optional[Path] = None) -> dict:
    sink = open(config.report_path, "a", encoding="utf-8") if config.report_path else None
    dsink = open(decisions_path, "w", encoding="utf-8") if decisions_path else None
    proxy = UdpProxy(config, report_sink=sink, keep_decisions=False, decision_sink=dsink)
    try:
        await proxy.start()
        log.info("proxy listening for GCS on %s, UAV leg on %s", proxy.gcs_address, proxy.uav_address)
        await stop.wait()
    finally:
        proxy.stop()
        for f in (sink, dsink):
            if f is not None:
                f.close()
    summary = proxy.summary()
    print(format_summary(summary), file=out)
    return summary


def run_proxy(config: ProxyConfig, out: TextIO = sys.stdout, decisions_path: Optional[Path] = None) -> dict:
    """Relay until SIGINT/SIGTERM, then flush reports and print a summary.

    ``decisions_path`` receives every routing decision as a JSON line.
    """

    async def main() -> dict:
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            try:
                loop.add_signal_handler(sig, stop.set)
            except (NotImplementedError, RuntimeError, ValueError):
                pass
        return await serve(config, stop, out, decisions_path)

    return asyncio.run(main())


# -- configuration files -----------------------------------------------------------------------

CONFIG_KEYS = {"gcs_listen", "gcs_endpoint", "uav_bind", "uav_endpoint", "mode", "dialect", "protocols",
               "statectx", "report_path", "retransmission"}


def config_from_document(doc: Mapping[str, Any], base_dir: Optional[Path] = None, **overrides) -> ProxyConfig:
    """Build a ProxyConfig; relative paths resolve against ``base_dir``."""
    doc = dict(doc)
    doc.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base = base_dir or Path.cwd()

    def path(ref: str) -> str:
        if ref.startswith("builtin:"):
            return ref
        p = Path(ref)
        return str(p if p.is_absolute() else base / p)

    try:
        dialect = resolve_dialect(path(doc.get("dialect", "builtin:common")))
    except (DialectError, OSError) as exc:
        raise ConfigError(f"cannot load dialect: {exc}") from None
    refs = doc.get("protocols", [f"builtin:{n}" for n in BUILTIN_PROTOCOLS])
    try:
        protocols = tuple(resolve_protocol(path(r), dialect) for r in refs)
    except (IllFormedProtocol, OSError, KeyError) as exc:
        raise ConfigError(f"cannot load protocol: {exc}") from None
    st = doc.get("statectx")
    try:
        settings = load_settings(path(st) if isinstance(st, str) else st)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"bad statectx settings: {exc}") from None
    try:
        mode = Mode(doc.get("mode", "enforce"))
    except ValueError:
        raise ConfigError(f"mode must be 'enforce' or 'warn', got {doc.get('mode')!r}") from None
    kwargs: dict[str, Any] = {}
    for key in ("gcs_listen", "gcs_endpoint", "uav_bind", "uav_endpoint"):
        if doc.get(key) is not None:
            kwargs[key] = Endpoint.parse(doc[key])
    report = doc.get("report_path")
    return ProxyConfig(
        dialect=dialect,
        protocols=protocols,
        mode=mode,
        state=settings,
        retransmission=bool(doc.get("retransmission", True)),
        report_path=Path(path(report)) if report else None,
        **kwargs,
    )


def load_config(source: Union[str, Path], **overrides) -> ProxyConfig:
    p = Path(source)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_document(doc, p.parent, **overrides)
