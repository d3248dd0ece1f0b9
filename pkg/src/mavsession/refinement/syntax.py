"""Textual surface syntax for refinements.

Grammar, loosest binding first::

    or      := and ('||' and)*
    and     := cmp ('&&' cmp)*
    cmp     := sum (('<' | '<=' | '>' | '>=' | '==' | '!=') sum)?
    sum     := prod (('+' | '-') prod)*
    prod    := unary ('*' unary)*
    unary   := '!' unary | '-' unary | atom
    atom    := NUMBER | STRING | 'true' | 'false' | IDENT | IDENT '.' IDENT
             | '(' or ')'

``ENUM.ENTRY`` literals are resolved against an enum table at parse time.
A ``-`` directly in front of a numeric literal folds into the literal.
"""

from __future__ import annotations

import re
from collections.abc import Mapping
from typing import Optional

from .expr import (
    INT64_MAX,
    INT64_MIN,
    Bin,
    Lit,
    Neg,
    Not,
    RefExpr,
    Var,
)
from .values import ArrayV, BoolV, EnumV, FloatV, IntV, StrV

EnumTable = Mapping[str, Mapping[str, int]]


class RefinementSyntaxError(ValueError):
    def __init__(self, message: str, text: str, pos: int):
        super().__init__(f"{message} at column {pos + 1}: {text!r}")
        self.text = text
        self.pos = pos


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<float>(?:\d+\.\d*|\.\d+)(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+)
  | (?P<int>\d+)
  | (?P<str>"(?:[^"\\]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>&&|\|\||<=|>=|==|!=|[<>!+\-*().])
    """,
    re.VERBOSE,
)

_CMP_OPS = ("<", "<=", ">", ">=", "==", "!=")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise RefinementSyntaxError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


def _unquote(raw: str) -> str:
    return re.sub(r"\\(.)", r"\1", raw[1:-1])


class _Parser:
    def __init__(self, text: str, enums: Optional[EnumTable]):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.enums = enums

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def accept(self, *ops: str) -> Optional[str]:
        kind, val, _ = self.peek()
        if kind == "op" and val in ops:
            self.i += 1
            return val
        return None

    def fail(self, message: str) -> RefinementSyntaxError:
        return RefinementSyntaxError(message, self.text, self.peek()[2])

    def parse(self) -> RefExpr:
        expr = self.parse_or()
        if self.peek()[0] != "eof":
            raise self.fail(f"unexpected {self.peek()[1]!r}")
        return expr

    def parse_or(self) -> RefExpr:
        lhs = self.parse_and()
        while self.accept("||"):
            lhs = Bin("||", lhs, self.parse_and())
        return lhs

    def parse_and(self) -> RefExpr:
        lhs = self.parse_cmp()
        while self.accept("&&"):
            lhs = Bin("&&", lhs, self.parse_cmp())
        return lhs

    def parse_cmp(self) -> RefExpr:
        lhs = self.parse_sum()
        op = self.accept(*_CMP_OPS)
        if op is None:
            return lhs
        rhs = self.parse_sum()
        if self.peek()[0] == "op" and self.peek()[1] in _CMP_OPS:
            raise self.fail("comparisons do not chain; add parentheses")
        return Bin(op, lhs, rhs)

    def parse_sum(self) -> RefExpr:
        lhs = self.parse_prod()
        while True:
            op = self.accept("+", "-")
            if op is None:
                return lhs
            lhs = Bin(op, lhs, self.parse_prod())

    def parse_prod(self) -> RefExpr:
        lhs = self.parse_unary()
        while self.accept("*"):
            lhs = Bin("*", lhs, self.parse_unary())
        return lhs

    def parse_unary(self) -> RefExpr:
        if self.accept("!"):
            return Not(self.parse_unary())
        if self.accept("-"):
            kind, raw, pos = self.peek()
            if kind in ("int", "float"):
                self.take()
                return self.number(kind, "-" + raw, pos)
            return Neg(self.parse_unary())
        return self.parse_atom()

    def number(self, kind: str, raw: str, pos: int) -> Lit:
        if kind == "float":
            return Lit(FloatV(float(raw)))
        n = int(raw)
        if n < INT64_MIN or n > INT64_MAX:
            raise RefinementSyntaxError("integer literal out of 64-bit range", self.text, pos)
        return Lit(IntV(n))

    def parse_atom(self) -> RefExpr:
        kind, raw, pos = self.take()
        if kind in ("int", "float"):
            return self.number(kind, raw, pos)
        if kind == "str":
            return Lit(StrV(_unquote(raw)))
        if kind == "ident":
            if raw == "true":
                return Lit(BoolV(True))
            if raw == "false":
                return Lit(BoolV(False))
            if self.accept("."):
                ekind, entry, epos = self.take()
                if ekind != "ident":
                    raise RefinementSyntaxError("expected enum entry name", self.text, epos)
                return Lit(self.enum_literal(raw, entry, pos))
            return Var(raw)
        if kind == "op" and raw == "(":
            inner = self.parse_or()
            if not self.accept(")"):
                raise self.fail("expected ')'")
            return inner
        self.i -= 1
        raise self.fail("expected an operand" if kind != "eof" else "unexpected end of input")

    def enum_literal(self, enum: str, entry: str, pos: int) -> EnumV:
        if self.enums is None:
            raise RefinementSyntaxError(
                f"enum literal {enum}.{entry} needs an enum table", self.text, pos
            )
        entries = self.enums.get(enum)
        if entries is None:
            raise RefinementSyntaxError(f"unknown enum {enum!r}", self.text, pos)
        if entry not in entries:
            raise RefinementSyntaxError(f"unknown entry {enum}.{entry}", self.text, pos)
        return EnumV(enum, entry, entries[entry])


def parse_refinement(text: str, enums: Optional[EnumTable] = None) -> RefExpr:
    """Parse refinement source text into an expression tree."""
    return _Parser(text, enums).parse()


_PREC = {"||": 1, "&&": 2, "<": 3, "<=": 3, ">": 3, ">=": 3, "==": 3, "!=": 3,
         "+": 4, "-": 4, "*": 5}
_UNARY_PREC = 6
_ATOM_PREC = 7


def _prec(expr: RefExpr) -> int:
    if isinstance(expr, Bin):
        return _PREC[expr.op]
    if isinstance(expr, (Neg, Not)):
        return _UNARY_PREC
    if isinstance(expr, Lit) and isinstance(expr.value, (IntV, FloatV)) and str(expr.value).startswith("-"):
        return _UNARY_PREC
    return _ATOM_PREC


def _lit_source(lit: Lit) -> str:
    v = lit.value
    if isinstance(v, FloatV):
        text = repr(v.value)
        if text in ("inf", "-inf", "nan"):
            raise ValueError(f"float {text} has no literal form")
        return text
    if isinstance(v, ArrayV):
        raise ValueError("array values have no literal form")
    return str(v)


def to_source(expr: RefExpr) -> str:
    """Render ``expr`` with the minimum parentheses needed to re-parse it."""
    if isinstance(expr, Lit):
        return _lit_source(expr)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, (Neg, Not)):
        sym = "-" if isinstance(expr, Neg) else "!"
        inner = to_source(expr.operand)
        operand = expr.operand
        needs = _prec(operand) < _UNARY_PREC or (
            isinstance(expr, Neg) and isinstance(operand, Lit)
        )
        return f"{sym}({inner})" if needs else f"{sym}{inner}"
    p = _PREC[expr.op]
    lhs, rhs = to_source(expr.lhs), to_source(expr.rhs)
    # comparisons are non-associative, so an operand at the same level needs parens
    if _prec(expr.lhs) < p or (p == 3 and _prec(expr.lhs) == 3):
        lhs = f"({lhs})"
    if _prec(expr.rhs) <= p:
        rhs = f"({rhs})"
    return f"{lhs} {expr.op} {rhs}"
