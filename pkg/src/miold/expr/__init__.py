"""Symbolic expression kernel: build, parse, differentiate, simplify, evaluate, zero-test."""

from .nodes import (
    FUNCTIONS, ONE, ZERO, Add, Const, Div, DomainError, Expr, Func, Mul, Neg, Param, Pow,
    Sub, Var, as_expr, const, cos, diff, evaluate, exp, free_params, free_vars, ln,
    product_of, sec, sin, sqrt, substitute, sum_of, tan, to_string,
)
from .parse import ParseError, parse
from .canon import canon, simplify
from .zero import (
    DEFAULT_SEED, NONZERO, NUMERICALLY_ZERO, PROVEN_ZERO, UndecidableError, ZeroVerdict,
    is_zero,
)
from .codegen import compile_exprs


def sdiff(expr: Expr, index: int) -> Expr:
    """Simplified derivative (``simplify(diff(expr, index))`` computed in canonical form)."""
    from .canon import to_expr
    return to_expr(canon(expr).diff(index))


__all__ = [
    "FUNCTIONS", "ONE", "ZERO", "Add", "Const", "Div", "DomainError", "Expr", "Func", "Mul",
    "Neg", "Param", "Pow", "Sub", "Var", "as_expr", "const", "cos", "diff", "evaluate", "exp",
    "free_params", "free_vars", "ln", "product_of", "sec", "sin", "sqrt", "substitute",
    "sum_of", "tan", "to_string", "ParseError", "parse", "canon", "simplify", "DEFAULT_SEED",
    "NONZERO", "NUMERICALLY_ZERO", "PROVEN_ZERO", "UndecidableError", "ZeroVerdict", "is_zero",
    "compile_exprs", "sdiff",
]
