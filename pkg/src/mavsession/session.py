"""Session protocols (Offer/Mu/Recur/End) and the runtime attestation monitor.

A :class:`ProtocolSpec` wraps a protocol tree with its roles, external
names and constant configuration. :func:`start` creates an immutable
:class:`MonitorState`; :func:`step` consumes one observed message and returns
a :class:`StepResult` carrying the successor state. States are values, so a
caller can step tentatively and decide later whether to keep the result.
"""

from __future__ import annotations

import enum
import functools
import json
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Union

from .refinement import (
    Env,
    EvalError,
    PredReason,
    RefExpr,
    Value,
    eval_expr,
    eval_pred,
    free_vars,
    from_python,
    parse_refinement,
    to_python,
    to_source,
    value_from_json,
    value_to_json,
)


class IllFormedProtocol(ValueError):
    pass


@dataclass(frozen=True)
class Direction:
    src: str
    dst: str

    def __str__(self) -> str:
        return f"{self.src}->{self.dst}"

    @classmethod
    def parse(cls, text: str) -> "Direction":
        src, sep, dst = text.partition("->")
        if not sep or not src.strip() or not dst.strip():
            raise ValueError(f"direction must look like 'A->B', got {text!r}")
        return cls(src.strip(), dst.strip())

    def reversed(self) -> "Direction":
        return Direction(self.dst, self.src)


# -- protocol tree -----------------------------------------------------------------


@dataclass(frozen=True)
class End:
    pass


@dataclass(frozen=True)
class Recur:
    depth: int
    update: RefExpr


@dataclass(frozen=True)
class Mu:
    var: str
    bound: RefExpr
    init: RefExpr
    body: "Protocol"


@dataclass(frozen=True)
class Choice:
    label: str
    binders: tuple[tuple[str, str], ...]
    refinement: RefExpr
    continuation: "Protocol"

    @functools.cached_property
    def source(self) -> str:
        return to_source(self.refinement)


@dataclass(frozen=True)
class Offer:
    src: str
    dst: str
    choices: tuple[Choice, ...]

    @property
    def direction(self) -> Direction:
        return Direction(self.src, self.dst)

    def choice(self, label: str) -> Optional[Choice]:
        for c in self.choices:
            if c.label == label:
                return c
        return None


Protocol = Union[Offer, Mu, Recur, End]


def _labels(node: Protocol) -> list[str]:
    out: list[str] = []
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, Offer):
            for c in n.choices:
                out.append(c.label)
                stack.append(c.continuation)
        elif isinstance(n, Mu):
            stack.append(n.body)
    return out


def _peek_offer(node: Protocol) -> Optional[Offer]:
    """First Offer reachable without consuming a message (structural only)."""
    while isinstance(node, Mu):
        node = node.body
    return node if isinstance(node, Offer) else None


@dataclass(frozen=True)
class ProtocolSpec:
    """A named protocol plus everything needed to check it.

    ``externals`` are names supplied at step time (vehicle state, parameters);
    ``config`` holds constants. ``filters`` narrow when a relevant label counts:
    a message whose filter is false is irrelevant to this protocol.
    """

    name: str
    roles: tuple[str, str]
    body: Protocol
    externals: frozenset[str] = frozenset()
    config: Mapping[str, Value] = field(default_factory=dict)
    filters: Mapping[str, RefExpr] = field(default_factory=dict)
    persistent: bool = False
    extra_relevant: frozenset[str] = frozenset()
    relevant_labels: frozenset[str] = field(init=False, compare=False, repr=False)
    initiating_labels: frozenset[str] = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "roles", tuple(self.roles))
        object.__setattr__(self, "externals", frozenset(self.externals))
        object.__setattr__(self, "extra_relevant", frozenset(self.extra_relevant))
        object.__setattr__(self, "relevant_labels", frozenset(_labels(self.body)) | self.extra_relevant)
        root = _peek_offer(self.body)
        object.__setattr__(self, "initiating_labels",
                           frozenset(c.label for c in root.choices) if root else frozenset())
        check_well_formed(self)


def check_well_formed(spec: ProtocolSpec) -> None:
    """Raise IllFormedProtocol unless ``spec`` satisfies the structural rules."""
    if len(spec.roles) != 2 or spec.roles[0] == spec.roles[1]:
        raise IllFormedProtocol(f"{spec.name}: expected two distinct roles, got {spec.roles!r}")
    base = set(spec.externals) | set(spec.config)
    for label in spec.filters:
        if label not in spec.relevant_labels:
            raise IllFormedProtocol(f"{spec.name}: filter on {label} which the protocol never offers")

    def need(expr: RefExpr, scope: frozenset, where: str) -> None:
        missing = free_vars(expr) - scope - base
        if missing:
            raise IllFormedProtocol(f"{spec.name}: {where} uses unbound {sorted(missing)}")

    def fresh(name: str, scope: frozenset, where: str) -> None:
        if name in scope or name in base:
            raise IllFormedProtocol(f"{spec.name}: {where} shadows {name!r}")

    def walk(node: Protocol, scope: frozenset, guarded: tuple[bool, ...]) -> None:
        if isinstance(node, End):
            return
        if isinstance(node, Recur):
            if not 0 <= node.depth < len(guarded):
                raise IllFormedProtocol(
                    f"{spec.name}: Recur depth {node.depth} under {len(guarded)} Mu node(s)")
            if not guarded[-1 - node.depth]:
                raise IllFormedProtocol(f"{spec.name}: Recur {node.depth} reached without a message")
            need(node.update, scope, f"Recur {node.depth} update")
            return
        if isinstance(node, Mu):
            fresh(node.var, scope, f"Mu {node.var}")
            need(node.init, scope, f"Mu {node.var} init")
            need(node.bound, scope | {node.var}, f"Mu {node.var} bound")
            walk(node.body, scope | {node.var}, guarded + (False,))
            return
        if isinstance(node, Offer):
            if node.src not in spec.roles or node.dst not in spec.roles or node.src == node.dst:
                raise IllFormedProtocol(f"{spec.name}: bad Offer direction {node.src}->{node.dst}")
            if not node.choices:
                raise IllFormedProtocol(f"{spec.name}: Offer without choices")
            seen: set[str] = set()
            for c in node.choices:
                if c.label in seen:
                    raise IllFormedProtocol(f"{spec.name}: duplicate label {c.label} in one Offer")
                seen.add(c.label)
                inner = scope
                fields: set[str] = set()
                for fname, var in c.binders:
                    if fname in fields:
                        raise IllFormedProtocol(f"{spec.name}: {c.label} binds field {fname} twice")
                    fields.add(fname)
                    fresh(var, inner, f"{c.label} binder")
                    inner = inner | {var}
                need(c.refinement, inner, f"{c.label} refinement")
                walk(c.continuation, inner, (True,) * len(guarded))
            return
        raise IllFormedProtocol(f"{spec.name}: unknown protocol node {node!r}")

    walk(spec.body, frozenset(), ())


def check_against_dialect(spec: ProtocolSpec, dialect) -> None:
    """Every label must be a dialect message and every binder a field of it."""
    by_name = dialect.by_name
    for label in spec.relevant_labels:
        if label not in by_name:
            raise IllFormedProtocol(f"{spec.name}: label {label} is not in the dialect")
    stack: list[Protocol] = [spec.body]
    while stack:
        n = stack.pop()
        if isinstance(n, Mu):
            stack.append(n.body)
        elif isinstance(n, Offer):
            for c in n.choices:
                fields = by_name[c.label].field_by_name
                for fname, _ in c.binders:
                    if fname not in fields:
                        raise IllFormedProtocol(f"{spec.name}: {c.label} has no field {fname}")
                stack.append(c.continuation)


# -- monitor -----------------------------------------------------------------------


class Status(str, enum.Enum):
    RUNNING = "Running"
    COMPLETED = "Completed"
    VIOLATED = "Violated"


class StepKind(str, enum.Enum):
    ACCEPTED = "Accepted"
    COMPLETED = "Completed"
    VIOLATION = "Violation"
    IRRELEVANT = "Irrelevant"
    RETRANSMISSION = "Retransmission"


class ViolationReason(str, enum.Enum):
    UNEXPECTED_LABEL = "UnexpectedLabel"
    WRONG_DIRECTION = "WrongDirection"
    REFINEMENT_FALSE = "RefinementFalse"
    EVALUATION_ERROR = "EvaluationError"
    RECURSION_BOUND_VIOLATED = "RecursionBoundViolated"


@dataclass(frozen=True)
class ViolationReport:
    timestamp: float
    protocol: str
    label: str
    direction: str
    expected: tuple[tuple[str, str, str], ...]
    refinement: str
    env: Mapping[str, Value]
    reason: ViolationReason
    detail: str = ""

    def to_json(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "protocol": self.protocol,
            "label": self.label,
            "direction": self.direction,
            "expected": [list(e) for e in self.expected],
            "refinement": self.refinement,
            "env": {k: value_to_json(v) for k, v in sorted(self.env.items())},
            "reason": self.reason.value,
            "detail": self.detail,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ViolationReport":
        return cls(
            timestamp=obj["timestamp"],
            protocol=obj["protocol"],
            label=obj["label"],
            direction=obj["direction"],
            expected=tuple(tuple(e) for e in obj["expected"]),
            refinement=obj["refinement"],
            env={k: value_from_json(v) for k, v in obj["env"].items()},
            reason=ViolationReason(obj["reason"]),
            detail=obj.get("detail", ""),
        )


@dataclass(frozen=True)
class MuFrame:
    var: str
    value: Value
    mu: Mu
    saved: Mapping[str, Value]


@dataclass(frozen=True)
class ObservedMessage:
    direction: Direction
    label: str
    fields: Mapping[str, Value]


@dataclass(frozen=True)
class MonitorState:
    spec: ProtocolSpec
    cursor: Protocol
    frames: tuple[MuFrame, ...] = ()
    bindings: Mapping[str, Value] = field(default_factory=dict)
    status: Status = Status.RUNNING
    report: Optional[ViolationReport] = None
    last_accepted: Optional[tuple] = None

    @property
    def frame_values(self) -> dict[str, Value]:
        return _frame_env(self.frames)


@dataclass(frozen=True)
class StepResult:
    kind: StepKind
    state: MonitorState
    report: Optional[ViolationReport] = None


def _frame_env(frames: tuple[MuFrame, ...]) -> dict[str, Value]:
    return {f.var: f.value for f in frames}


def start(spec: ProtocolSpec, externals: Union[Env, Mapping[str, Value], None] = None) -> MonitorState:
    """Fresh monitor at the protocol root. Mu frames are pushed on the first step."""
    if isinstance(spec.body, End):
        return MonitorState(spec, spec.body, status=Status.COMPLETED)
    return MonitorState(spec, spec.body)


def expected_next(state: MonitorState) -> list[tuple[str, str, str]]:
    """``(label, direction, refinement source)`` for each choice at the cursor."""
    if state.status is not Status.RUNNING:
        return []
    node = state.cursor
    frames = list(state.frames)
    for _ in range(64):
        if isinstance(node, Mu):
            node = node.body
        elif isinstance(node, Recur) and node.depth < len(frames):
            node = frames[-1 - node.depth].mu.body
        else:
            break
    if not isinstance(node, Offer):
        return []
    d = str(node.direction)
    return [(c.label, d, c.source) for c in node.choices]


def _externals_env(externals: Union[Env, Mapping[str, Value], None]) -> list:
    if externals is None:
        return []
    if isinstance(externals, Env):
        return list(externals.layers)
    return [externals]


class _Stuck(Exception):
    def __init__(self, reason: ViolationReason, expr: RefExpr, env: Env, detail: str):
        super().__init__(detail)
        self.reason = reason
        self.expr = expr
        self.env = env
        self.detail = detail


def _check_bound(frame: MuFrame, env: Env) -> None:
    res = eval_pred(frame.mu.bound, env)
    if not res:
        reason = (ViolationReason.RECURSION_BOUND_VIOLATED if res.reason is PredReason.FALSE
                  else ViolationReason.EVALUATION_ERROR)
        raise _Stuck(reason, frame.mu.bound, env, f"{frame.var} = {frame.value}: {res.detail}")


def _normalize(node: Protocol, frames: tuple[MuFrame, ...], bindings: Mapping[str, Value],
               outer: list) -> tuple[Protocol, tuple[MuFrame, ...], Mapping[str, Value]]:
    while True:
        if isinstance(node, Mu):
            env = Env(bindings, _frame_env(frames), *outer)
            try:
                value = eval_expr(node.init, env)
            except EvalError as exc:
                raise _Stuck(ViolationReason.EVALUATION_ERROR, node.init, env, str(exc)) from None
            frame = MuFrame(node.var, value, node, bindings)
            frames = frames + (frame,)
            _check_bound(frame, Env(bindings, _frame_env(frames), *outer))
            node = node.body
        elif isinstance(node, Recur):
            env = Env(bindings, _frame_env(frames), *outer)
            try:
                value = eval_expr(node.update, env)
            except EvalError as exc:
                raise _Stuck(ViolationReason.EVALUATION_ERROR, node.update, env, str(exc)) from None
            target = frames[-1 - node.depth]
            frame = replace(target, value=value)
            frames = frames[:len(frames) - 1 - node.depth] + (frame,)
            bindings = target.saved
            _check_bound(frame, Env(bindings, _frame_env(frames), *outer))
            node = target.mu.body
        else:
            return node, frames, bindings


def _snapshot(expr: RefExpr, env: Env) -> dict[str, Value]:
    out = {}
    for name in sorted(free_vars(expr)):
        v = env.get(name)
        if v is not None:
            out[name] = v
    return out


def _retransmission_key(msg: ObservedMessage, fields: tuple[str, ...]) -> tuple:
    return (msg.direction, msg.label, fields, tuple(msg.fields.get(f) for f in fields))


def _at(state: MonitorState, pos: tuple) -> MonitorState:
    node, frames, bindings = pos
    return replace(state, cursor=node, frames=frames, bindings=bindings)


def relevance(spec: ProtocolSpec, msg: ObservedMessage) -> tuple[bool, Optional[str]]:
    """Whether ``msg`` concerns ``spec``; the second item is a filter error, if any.

    A filter that cannot be evaluated makes the message relevant so the
    monitor rejects it (fail-closed) instead of waving it through.
    """
    if msg.label not in spec.relevant_labels:
        return False, None
    flt = spec.filters.get(msg.label)
    if flt is None:
        return True, None
    res = eval_pred(flt, Env(msg.fields, spec.config))
    if res.holds:
        return True, None
    if res.reason is PredReason.FALSE:
        return False, None
    return True, res.detail


def step(
    state: MonitorState,
    msg: ObservedMessage,
    externals: Union[Env, Mapping[str, Value], None] = None,
    *,
    now: float = 0.0,
    tolerate_retransmission: bool = False,
) -> StepResult:
    spec = state.spec
    if (tolerate_retransmission and not spec.persistent and state.last_accepted is not None
            and state.last_accepted == _retransmission_key(msg, state.last_accepted[2])):
        return StepResult(StepKind.RETRANSMISSION, state)
    if state.status is Status.COMPLETED:
        return StepResult(StepKind.COMPLETED, state)
    if state.status is Status.VIOLATED:
        return StepResult(StepKind.VIOLATION, state, state.report)
    relevant, filter_error = relevance(spec, msg)
    if not relevant:
        return StepResult(StepKind.IRRELEVANT, state)

    outer = _externals_env(externals) + [spec.config]

    def violate(reason: ViolationReason, expr: Optional[RefExpr], env: Optional[Env], detail: str,
                at: Optional[MonitorState] = None) -> StepResult:
        report = ViolationReport(
            timestamp=now,
            protocol=spec.name,
            label=msg.label,
            direction=str(msg.direction),
            expected=tuple(expected_next(at)) if at is not None else (),
            refinement=to_source(expr) if expr is not None else "",
            env=_snapshot(expr, env) if expr is not None and env is not None else {},
            reason=reason,
            detail=detail,
        )
        return StepResult(StepKind.VIOLATION, replace(state, status=Status.VIOLATED, report=report), report)

    try:
        node, frames, bindings = _normalize(state.cursor, state.frames, state.bindings, outer)
    except _Stuck as stuck:
        return violate(stuck.reason, stuck.expr, stuck.env, stuck.detail)
    if filter_error is not None or not isinstance(node, Offer) or msg.direction != node.direction:
        here = _at(state, (node, frames, bindings))
        if filter_error is not None:
            return violate(ViolationReason.EVALUATION_ERROR, spec.filters[msg.label],
                           Env(msg.fields, spec.config), filter_error, here)
        if not isinstance(node, Offer):
            return violate(ViolationReason.UNEXPECTED_LABEL, None, None, "protocol already finished", here)
        return violate(ViolationReason.WRONG_DIRECTION, None, None,
                       f"expected {node.direction}, observed {msg.direction}", here)
    choice = node.choice(msg.label)
    if choice is None:
        return violate(ViolationReason.UNEXPECTED_LABEL, None, None, f"{msg.label} not offered here",
                       _at(state, (node, frames, bindings)))

    offer_pos = (node, frames, bindings)
    inner = dict(bindings)
    for fname, var in choice.binders:
        v = msg.fields.get(fname)
        if v is not None:
            inner[var] = v
    env = Env(inner, _frame_env(frames), *outer)
    res = eval_pred(choice.refinement, env)
    if not res:
        reason = (ViolationReason.REFINEMENT_FALSE if res.reason is PredReason.FALSE
                  else ViolationReason.EVALUATION_ERROR)
        return violate(reason, choice.refinement, env, res.detail, _at(state, offer_pos))

    try:
        node, frames, inner = _normalize(choice.continuation, frames, inner, outer)
    except _Stuck as stuck:
        return violate(stuck.reason, stuck.expr, stuck.env, stuck.detail, _at(state, offer_pos))
    key = _retransmission_key(msg, tuple(f for f, _ in choice.binders))
    done = isinstance(node, End)
    new = MonitorState(spec, node, frames, inner,
                       Status.COMPLETED if done else Status.RUNNING, None, key)
    return StepResult(StepKind.COMPLETED if done else StepKind.ACCEPTED, new)


def run_trace(spec: ProtocolSpec, messages, externals=None, tolerate_retransmission=False
              ) -> list[StepResult]:
    """Step a fresh monitor through ``messages``, stopping at the first violation."""
    state = start(spec, externals)
    out = []
    for msg in messages:
        res = step(state, msg, externals, tolerate_retransmission=tolerate_retransmission)
        out.append(res)
        state = res.state
        if res.kind is StepKind.VIOLATION:
            break
    return out


# -- protocol definition files -----------------------------------------------------------


def _node_to_doc(node: Protocol) -> Any:
    if isinstance(node, End):
        return "end"
    if isinstance(node, Recur):
        return {"recur": {"depth": node.depth, "update": to_source(node.update)}}
    if isinstance(node, Mu):
        return {"mu": {"var": node.var, "init": to_source(node.init),
                       "bound": to_source(node.bound), "body": _node_to_doc(node.body)}}
    return {"offer": {
        "from": node.src,
        "to": node.dst,
        "choices": [
            {"label": c.label, "bind": dict(c.binders), "refine": c.source,
             "then": _node_to_doc(c.continuation)}
            for c in node.choices
        ],
    }}


def _node_from_doc(doc: Any, enums) -> Protocol:
    def ref(text: str) -> RefExpr:
        return parse_refinement(text, enums)

    if doc == "end":
        return End()
    if not isinstance(doc, dict) or len(doc) != 1:
        raise IllFormedProtocol(f"expected 'end' or a single-key node object, got {doc!r}")
    (kind, body), = doc.items()
    try:
        if kind == "recur":
            return Recur(int(body["depth"]), ref(body["update"]))
        if kind == "mu":
            return Mu(body["var"], ref(body["bound"]), ref(body["init"]), _node_from_doc(body["body"], enums))
        if kind == "offer":
            choices = tuple(
                Choice(c["label"], tuple((k, v) for k, v in c.get("bind", {}).items()),
                       ref(c.get("refine", "true")), _node_from_doc(c.get("then", "end"), enums))
                for c in body["choices"]
            )
            return Offer(body["from"], body["to"], choices)
    except (KeyError, TypeError) as exc:
        raise IllFormedProtocol(f"malformed {kind} node: {exc}") from None
    raise IllFormedProtocol(f"unknown node kind {kind!r}")


def protocol_to_document(spec: ProtocolSpec) -> dict:
    doc: dict[str, Any] = {
        "format": 1,
        "name": spec.name,
        "roles": list(spec.roles),
        "persistent": spec.persistent,
        "externals": sorted(spec.externals),
        "config": {k: to_python(v) for k, v in sorted(spec.config.items())},
        "filters": {k: to_source(v) for k, v in sorted(spec.filters.items())},
        "body": _node_to_doc(spec.body),
    }
    if spec.extra_relevant:
        doc["relevant"] = sorted(spec.extra_relevant)
    return doc


def protocol_from_document(doc: Mapping[str, Any], enums=None) -> ProtocolSpec:
    """Build a spec from its document form; enum literals default to the common dialect."""
    if enums is None:
        from .dialect import bundled_dialect

        enums = bundled_dialect("common").enum_values
    if doc.get("format", 1) != 1:
        raise IllFormedProtocol(f"unsupported protocol format {doc.get('format')!r}")
    try:
        return ProtocolSpec(
            name=doc["name"],
            roles=tuple(doc["roles"]),
            body=_node_from_doc(doc["body"], enums),
            externals=frozenset(doc.get("externals", ())),
            config={k: from_python(v) for k, v in doc.get("config", {}).items()},
            filters={k: parse_refinement(v, enums) for k, v in doc.get("filters", {}).items()},
            persistent=bool(doc.get("persistent", False)),
            extra_relevant=frozenset(doc.get("relevant", ())),
        )
    except KeyError as exc:
        raise IllFormedProtocol(f"protocol document lacks {exc}") from None


def dump_protocol(spec: ProtocolSpec) -> str:
    return json.dumps(protocol_to_document(spec), indent=2) + "\n"


def load_protocol(source: Union[str, Path], enums=None) -> ProtocolSpec:
    """Load a protocol from a JSON file path or JSON text."""
    text = str(source)
    if not text.lstrip().startswith("{"):
        text = Path(source).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IllFormedProtocol(f"protocol file is not valid JSON: {exc}") from None
    return protocol_from_document(doc, enums)
