"""Compile expressions to plain Python functions for fast repeated evaluation."""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Callable, Mapping, Sequence

from . import nodes as N
from .nodes import DomainError


def _fpow(base: float, q: float) -> float:
    if base < 0.0:
        raise DomainError("fractional power of a negative number")
    return base ** q


def _sec(a: float) -> float:
    return 1.0 / math.cos(a)


_NAMESPACE = {
    "sin": math.sin, "cos": math.cos, "tan": math.tan, "sec": _sec,
    "exp": math.exp, "ln": math.log, "sqrt": math.sqrt, "_fpow": _fpow,
}

_BINOPS = {N.Add: "+", N.Sub: "-", N.Mul: "*", N.Div: "/"}


def _fold(node: N.Expr, ref) -> str | None:
    """Reuse an operand when the other one is a neutral literal (x*1, x+0, x/1)."""
    if type(node) not in _BINOPS:
        return None
    left, right = ref(node.left), ref(node.right)
    if isinstance(node, N.Mul):
        if left == "1.0":
            return right
        if right == "1.0":
            return left
    elif isinstance(node, (N.Div,)) and right == "1.0":
        return left
    elif isinstance(node, N.Add):
        if left == "0.0":
            return right
        if right == "0.0":
            return left
    elif isinstance(node, N.Sub) and right == "0.0":
        return left
    return None


def compile_exprs(exprs: Sequence[N.Expr], params: Mapping[str, float],
                  name: str = "compiled") -> Callable[[Sequence[float]], tuple]:
    """Return ``f(z) -> tuple`` evaluating every expression with ``x^i = z[i-1]``.

    Parameters are baked in as float literals.  Shared subtrees are computed
    once.  Domain violations raise DomainError.
    """
    lines = [f"def {name}(z):"]
    names: dict[int, str] = {}
    counter = 0

    def ref(node: N.Expr) -> str:
        return names[id(node)]

    order: list[N.Expr] = []
    seen: set[int] = set()
    for e in exprs:
        for node in N.walk(e):
            if id(node) not in seen:
                seen.add(id(node))
                order.append(node)

    for node in order:
        if isinstance(node, N.Const):
            names[id(node)] = repr(float(node.value))
            continue
        if isinstance(node, N.Param):
            if node.name not in params:
                raise KeyError(f"unbound parameter {node.name!r}")
            names[id(node)] = repr(float(params[node.name]))
            continue
        if isinstance(node, N.Var):
            names[id(node)] = f"z[{node.index - 1}]"
            continue
        if not N.free_vars(node):
            # parameter-only subtree: fold to a literal now
            names[id(node)] = repr(float(N.evaluate(node, (), params)))
            continue
        folded = _fold(node, ref)
        if folded is not None:
            names[id(node)] = folded
            continue
        if isinstance(node, N.Neg):
            code = f"-{ref(node.arg)}"
        elif isinstance(node, N.Func):
            code = f"{node.name}({ref(node.arg)})"
        elif type(node) in _BINOPS:
            code = f"{ref(node.left)} {_BINOPS[type(node)]} {ref(node.right)}"
        elif isinstance(node, N.Pow):
            q: Fraction = node.exponent
            b = ref(node.base)
            if q.denominator == 1:
                k = q.numerator
                code = f"{b} * {b}" if k == 2 else f"{b} ** {k}"
            else:
                code = f"_fpow({b}, {float(q)!r})"
        else:
            raise TypeError(f"unexpected node {node!r}")
        var = f"t{counter}"
        counter += 1
        lines.append(f"    {var} = {code}")
        names[id(node)] = var

    lines.append(f"    return ({''.join(ref(e) + ', ' for e in exprs)})")
    source = "\n".join(lines)
    namespace = dict(_NAMESPACE)
    exec(compile(source, f"<{name}>", "exec"), namespace)
    raw = namespace[name]

    def checked(z):
        try:
            return raw(z)
        except ZeroDivisionError as exc:
            raise DomainError("division by zero") from exc
        except (ValueError, OverflowError) as exc:
            if isinstance(exc, DomainError):
                raise
            raise DomainError(str(exc)) from exc

    checked.source = source
    return checked
