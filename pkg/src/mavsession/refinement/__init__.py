"""Refinement-expression language: values, AST, evaluator, surface syntax."""

from .expr import (
    Bin,
    Env,
    EvalError,
    InexactPromotion,
    IntOverflow,
    Lit,
    Neg,
    Not,
    PredReason,
    PredResult,
    RefExpr,
    TypeMismatch,
    UnboundVariable,
    Var,
    conj,
    eval_expr,
    eval_pred,
    free_vars,
)
from .syntax import RefinementSyntaxError, parse_refinement, to_source
from .values import (
    ArrayV,
    BoolV,
    EnumV,
    FloatV,
    IntV,
    StrV,
    Value,
    from_python,
    to_python,
    value_from_json,
    value_to_json,
)

__all__ = [
    "ArrayV", "Bin", "BoolV", "Env", "EnumV", "EvalError", "FloatV", "InexactPromotion",
    "IntOverflow", "IntV", "Lit", "Neg", "Not", "PredReason", "PredResult", "RefExpr",
    "RefinementSyntaxError", "StrV", "TypeMismatch", "UnboundVariable", "Value", "Var",
    "conj", "eval_expr", "eval_pred", "free_vars", "from_python", "parse_refinement",
    "to_python", "to_source", "value_from_json", "value_to_json",
]
