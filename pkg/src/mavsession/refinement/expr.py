"""Refinement expression AST and its evaluator.

Evaluation is total: every failure surfaces as an :class:`EvalError`
subclass, which :func:`eval_pred` folds into a false verdict so that a
monitor never forwards a message it could not fully check.
"""

from __future__ import annotations

import enum
import functools
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Union

from .values import ArrayV, BoolV, EnumV, FloatV, IntV, StrV, Value

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1
EXACT_FLOAT_LIMIT = 2**53

ARITH_OPS = frozenset({"+", "-", "*"})
ORDER_OPS = frozenset({"<", "<=", ">", ">="})
EQ_OPS = frozenset({"==", "!="})
BOOL_OPS = frozenset({"&&", "||"})
BIN_OPS = ARITH_OPS | ORDER_OPS | EQ_OPS | BOOL_OPS


@dataclass(frozen=True, slots=True)
class Lit:
    value: Value


@dataclass(frozen=True, slots=True)
class Var:
    name: str


@dataclass(frozen=True, slots=True)
class Neg:
    operand: "RefExpr"


@dataclass(frozen=True, slots=True)
class Not:
    operand: "RefExpr"


@dataclass(frozen=True, slots=True)
class Bin:
    op: str
    lhs: "RefExpr"
    rhs: "RefExpr"

    def __post_init__(self) -> None:
        if self.op not in BIN_OPS:
            raise ValueError(f"unknown operator {self.op!r}")


RefExpr = Union[Lit, Var, Neg, Not, Bin]


class EvalError(Exception):
    """Base class for evaluation failures."""


class UnboundVariable(EvalError):
    def __init__(self, name: str):
        super().__init__(f"unbound variable {name!r}")
        self.name = name


class TypeMismatch(EvalError):
    def __init__(self, op: str, *got: Value):
        kinds = ", ".join(type(v).__name__ for v in got)
        super().__init__(f"type mismatch for {op!r}: got {kinds}")
        self.op = op
        self.got = tuple(type(v).__name__ for v in got)


class IntOverflow(EvalError):
    def __init__(self, op: str, result: int):
        super().__init__(f"signed 64-bit overflow in {op!r} (result {result})")
        self.op = op


class InexactPromotion(EvalError):
    def __init__(self, value: int):
        super().__init__(f"integer {value} cannot be converted to float exactly")
        self.value = value


class Env:
    """Layered name -> Value bindings, innermost layer first."""

    __slots__ = ("layers",)

    def __init__(self, *layers: Mapping[str, Value]):
        self.layers = tuple(layers)

    def lookup(self, name: str) -> Value:
        for layer in self.layers:
            if name in layer:
                return layer[name]
        raise UnboundVariable(name)

    def get(self, name: str) -> Optional[Value]:
        for layer in self.layers:
            if name in layer:
                return layer[name]
        return None

    def __contains__(self, name: str) -> bool:
        return any(name in layer for layer in self.layers)

    def names(self) -> set[str]:
        out: set[str] = set()
        for layer in self.layers:
            out.update(layer)
        return out

    def extend(self, *inner: Mapping[str, Value]) -> "Env":
        """Return a new Env with ``inner`` layers placed in front."""
        return Env(*inner, *self.layers)

    def __repr__(self) -> str:
        return f"Env({', '.join(repr(dict(layer)) for layer in self.layers)})"


def _as_env(env: Union[Env, Mapping[str, Value]]) -> Env:
    return env if isinstance(env, Env) else Env(env)


def _check_int(op: str, result: int) -> IntV:
    if result < INT64_MIN or result > INT64_MAX:
        raise IntOverflow(op, result)
    return IntV(result)


def _to_float(v: Value) -> float:
    if isinstance(v, FloatV):
        return v.value
    n = v.value
    if abs(n) >= EXACT_FLOAT_LIMIT:
        raise InexactPromotion(n)
    return float(n)


def _arith(op: str, a: Value, b: Value) -> Value:
    if not (isinstance(a, (IntV, FloatV)) and isinstance(b, (IntV, FloatV))):
        raise TypeMismatch(op, a, b)
    if isinstance(a, IntV) and isinstance(b, IntV):
        if op == "+":
            return _check_int(op, a.value + b.value)
        if op == "-":
            return _check_int(op, a.value - b.value)
        return _check_int(op, a.value * b.value)
    x, y = _to_float(a), _to_float(b)
    if op == "+":
        return FloatV(x + y)
    if op == "-":
        return FloatV(x - y)
    return FloatV(x * y)


def _numeric_pair(op: str, a: Value, b: Value) -> tuple:
    """Coerce two numeric operands to comparable Python numbers."""
    numeric = (IntV, FloatV, EnumV)
    if not (isinstance(a, numeric) and isinstance(b, numeric)):
        raise TypeMismatch(op, a, b)
    if isinstance(a, EnumV) and isinstance(b, EnumV) and a.enum != b.enum:
        raise TypeMismatch(op, a, b)
    if isinstance(a, FloatV) or isinstance(b, FloatV):
        return _to_float(a), _to_float(b)
    return a.value, b.value


def _compare(op: str, a: Value, b: Value) -> BoolV:
    if op in EQ_OPS:
        if isinstance(a, BoolV) or isinstance(b, BoolV):
            if not (isinstance(a, BoolV) and isinstance(b, BoolV)):
                raise TypeMismatch(op, a, b)
            same = a.value == b.value
        elif isinstance(a, StrV) or isinstance(b, StrV):
            if not (isinstance(a, StrV) and isinstance(b, StrV)):
                raise TypeMismatch(op, a, b)
            same = a.value == b.value
        elif isinstance(a, ArrayV) or isinstance(b, ArrayV):
            if not (isinstance(a, ArrayV) and isinstance(b, ArrayV)):
                raise TypeMismatch(op, a, b)
            same = a == b
        else:
            x, y = _numeric_pair(op, a, b)
            same = x == y
        return BoolV(same if op == "==" else not same)
    x, y = _numeric_pair(op, a, b)
    if op == "<":
        return BoolV(x < y)
    if op == "<=":
        return BoolV(x <= y)
    if op == ">":
        return BoolV(x > y)
    return BoolV(x >= y)


def eval_expr(expr: RefExpr, env: Union[Env, Mapping[str, Value]]) -> Value:
    """Evaluate ``expr``; raises :class:`EvalError` on failure."""
    return _eval(expr, _as_env(env))


def _eval(expr: RefExpr, env: Env) -> Value:
    if isinstance(expr, Lit):
        return expr.value
    if isinstance(expr, Var):
        return env.lookup(expr.name)
    if isinstance(expr, Bin):
        op = expr.op
        if op in BOOL_OPS:
            left = _eval(expr.lhs, env)
            if not isinstance(left, BoolV):
                raise TypeMismatch(op, left)
            # short-circuit
            if op == "&&" and not left.value:
                return left
            if op == "||" and left.value:
                return left
            right = _eval(expr.rhs, env)
            if not isinstance(right, BoolV):
                raise TypeMismatch(op, left, right)
            return right
        left = _eval(expr.lhs, env)
        right = _eval(expr.rhs, env)
        if op in ARITH_OPS:
            return _arith(op, left, right)
        return _compare(op, left, right)
    if isinstance(expr, Not):
        v = _eval(expr.operand, env)
        if not isinstance(v, BoolV):
            raise TypeMismatch("!", v)
        return BoolV(not v.value)
    if isinstance(expr, Neg):
        v = _eval(expr.operand, env)
        if isinstance(v, IntV):
            return _check_int("-", -v.value)
        if isinstance(v, FloatV):
            return FloatV(-v.value)
        raise TypeMismatch("-", v)
    raise TypeError(f"not a refinement expression: {expr!r}")


class PredReason(str, enum.Enum):
    HOLDS = "holds"
    FALSE = "false"
    NON_BOOLEAN = "non_boolean"
    ERROR = "error"


class PredResult(NamedTuple):
    holds: bool
    reason: PredReason
    detail: str = ""
    error: Optional[EvalError] = None

    def __bool__(self) -> bool:
        return self.holds


def eval_pred(expr: RefExpr, env: Union[Env, Mapping[str, Value]]) -> PredResult:
    """Evaluate a predicate, folding every failure into a false result.

    Every free variable must be bound, even one a short-circuit would skip.
    """
    env = _as_env(env)
    for name in sorted(free_vars(expr)):
        if name not in env:
            exc = UnboundVariable(name)
            return PredResult(False, PredReason.ERROR, str(exc), exc)
    try:
        v = _eval(expr, env)
    except EvalError as exc:
        return PredResult(False, PredReason.ERROR, str(exc), exc)
    if not isinstance(v, BoolV):
        return PredResult(False, PredReason.NON_BOOLEAN, f"predicate produced {v}")
    if v.value:
        return PredResult(True, PredReason.HOLDS)
    return PredResult(False, PredReason.FALSE, "predicate evaluated to false")


@functools.lru_cache(maxsize=4096)
def free_vars(expr: RefExpr) -> frozenset[str]:
    out: set[str] = set()
    stack: list[RefExpr] = [expr]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            out.add(node.name)
        elif isinstance(node, Bin):
            stack.append(node.lhs)
            stack.append(node.rhs)
        elif isinstance(node, (Neg, Not)):
            stack.append(node.operand)
    return frozenset(out)


def conj(*exprs: RefExpr) -> RefExpr:
    """Left-nested conjunction of one or more expressions."""
    it: Iterable[RefExpr] = iter(exprs)
    acc = next(it)
    for e in it:
        acc = Bin("&&", acc, e)
    return acc
