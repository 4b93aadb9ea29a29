"""Expression tree nodes.

Nodes are hash-consed: building the same tree twice returns the same
object, so structural equality is identity and hashing is O(1).  Trees are
immutable once built.
"""

from __future__ import annotations

import math
import threading
import weakref
from fractions import Fraction
from numbers import Rational
from typing import Callable, Dict, Iterable, Mapping, Sequence

FUNCTIONS = ("sin", "cos", "tan", "sec", "exp", "ln", "sqrt")


class DomainError(ValueError):
    """Raised when an expression is evaluated outside its domain."""


_table: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()
_lock = threading.Lock()


def _intern(cls, key: tuple, init: Callable[["Expr"], None]) -> "Expr":
    full = (cls,) + key
    with _lock:
        node = _table.get(full)
        if node is None:
            node = object.__new__(cls)
            init(node)
            _table[full] = node
    return node


def as_expr(value) -> "Expr":
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, Rational)):
        return Const(Fraction(value))
    if isinstance(value, float):
        return Const(Fraction(value).limit_denominator(10**12))
    raise TypeError(f"cannot convert {type(value).__name__} to Expr")


class Expr:
    __slots__ = ("__weakref__",)

    def __add__(self, other):
        return Add(self, as_expr(other))

    def __radd__(self, other):
        return Add(as_expr(other), self)

    def __sub__(self, other):
        return Sub(self, as_expr(other))

    def __rsub__(self, other):
        return Sub(as_expr(other), self)

    def __mul__(self, other):
        return Mul(self, as_expr(other))

    def __rmul__(self, other):
        return Mul(as_expr(other), self)

    def __truediv__(self, other):
        return Div(self, as_expr(other))

    def __rtruediv__(self, other):
        return Div(as_expr(other), self)

    def __pow__(self, exponent):
        return Pow(self, exponent)

    def __neg__(self):
        return Neg(self)

    def __repr__(self):
        return f"Expr({to_string(self)!r})"

    def __str__(self):
        return to_string(self)

    @property
    def children(self) -> tuple["Expr", ...]:
        return ()


class Const(Expr):
    __slots__ = ("value",)

    def __new__(cls, value):
        value = Fraction(value)

        def init(node):
            node.value = value

        return _intern(cls, (value,), init)


class Param(Expr):
    __slots__ = ("name",)

    def __new__(cls, name: str):
        def init(node):
            node.name = name

        return _intern(cls, (name,), init)


class Var(Expr):
    """The variable ``x^index`` (1-based)."""

    __slots__ = ("index",)

    def __new__(cls, index: int):
        if index < 1:
            raise ValueError("variable indices are 1-based")

        def init(node):
            node.index = index

        return _intern(cls, (index,), init)


class Neg(Expr):
    __slots__ = ("arg",)

    def __new__(cls, arg: Expr):
        def init(node):
            node.arg = arg

        return _intern(cls, (arg,), init)

    @property
    def children(self):
        return (self.arg,)


class Func(Expr):
    __slots__ = ("name", "arg")

    def __new__(cls, name: str, arg: Expr):
        if name not in FUNCTIONS:
            raise ValueError(f"unknown function {name!r}")

        def init(node):
            node.name = name
            node.arg = arg

        return _intern(cls, (name, arg), init)

    @property
    def children(self):
        return (self.arg,)


class Binary(Expr):
    __slots__ = ("left", "right")
    symbol = "?"

    def __new__(cls, left: Expr, right: Expr):
        def init(node):
            node.left = left
            node.right = right

        return _intern(cls, (left, right), init)

    @property
    def children(self):
        return (self.left, self.right)


class Add(Binary):
    __slots__ = ()
    symbol = "+"


class Sub(Binary):
    __slots__ = ()
    symbol = "-"


class Mul(Binary):
    __slots__ = ()
    symbol = "*"


class Div(Binary):
    __slots__ = ()
    symbol = "/"


class Pow(Expr):
    """``base ** exponent`` with a rational exponent."""

    __slots__ = ("base", "exponent")

    def __new__(cls, base: Expr, exponent):
        if isinstance(exponent, Const):
            exponent = exponent.value
        if not isinstance(exponent, (int, Rational)):
            raise TypeError("exponents must be rational numbers")
        exponent = Fraction(exponent)

        def init(node):
            node.base = base
            node.exponent = exponent

        return _intern(cls, (base, exponent), init)

    @property
    def children(self):
        return (self.base,)


ZERO = Const(0)
ONE = Const(1)


def const(value) -> Const:
    return Const(Fraction(value))


def sin(arg) -> Expr:
    return Func("sin", as_expr(arg))


def cos(arg) -> Expr:
    return Func("cos", as_expr(arg))


def tan(arg) -> Expr:
    return Func("tan", as_expr(arg))


def sec(arg) -> Expr:
    return Func("sec", as_expr(arg))


def exp(arg) -> Expr:
    return Func("exp", as_expr(arg))


def ln(arg) -> Expr:
    return Func("ln", as_expr(arg))


def sqrt(arg) -> Expr:
    return Func("sqrt", as_expr(arg))


def _balanced(items: Sequence[Expr], op) -> Expr:
    if len(items) == 1:
        return items[0]
    mid = len(items) // 2
    return op(_balanced(items[:mid], op), _balanced(items[mid:], op))


def sum_of(items: Iterable) -> Expr:
    """Sum of ``items`` as a balanced tree; skips literal zeros."""
    terms = [as_expr(t) for t in items]
    terms = [t for t in terms if t is not ZERO]
    if not terms:
        return ZERO
    return _balanced(terms, Add)


def product_of(items: Iterable) -> Expr:
    factors = [as_expr(t) for t in items]
    if any(f is ZERO for f in factors):
        return ZERO
    factors = [f for f in factors if f is not ONE]
    if not factors:
        return ONE
    return _balanced(factors, Mul)


# ---------------------------------------------------------------- traversal


def walk(expr: Expr) -> list[Expr]:
    """Unique nodes of ``expr`` in post-order (children before parents)."""
    seen: set[int] = set()
    order: list[Expr] = []
    stack = [(expr, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            order.append(node)
            continue
        stack.append((node, True))
        for child in reversed(node.children):
            if id(child) not in seen:
                stack.append((child, False))
    return order


def free_vars(expr: Expr) -> frozenset[int]:
    return frozenset(n.index for n in walk(expr) if isinstance(n, Var))


def free_params(expr: Expr) -> frozenset[str]:
    return frozenset(n.name for n in walk(expr) if isinstance(n, Param))


def _rebuild(node: Expr, kids: list[Expr]) -> Expr:
    if isinstance(node, Neg):
        return Neg(kids[0])
    if isinstance(node, Func):
        return Func(node.name, kids[0])
    if isinstance(node, Binary):
        return type(node)(kids[0], kids[1])
    if isinstance(node, Pow):
        return Pow(kids[0], node.exponent)
    return node


def transform(expr: Expr, leaf: Callable[[Expr], Expr | None]) -> Expr:
    """Rebuild ``expr`` bottom-up, replacing leaves for which ``leaf`` returns non-None."""
    done: Dict[int, Expr] = {}
    for node in walk(expr):
        if not node.children:
            repl = leaf(node)
            done[id(node)] = node if repl is None else repl
        else:
            kids = [done[id(c)] for c in node.children]
            if all(k is c for k, c in zip(kids, node.children)):
                done[id(node)] = node
            else:
                done[id(node)] = _rebuild(node, kids)
    return done[id(expr)]


def substitute(expr: Expr, variables: Mapping[int, Expr] | None = None,
               params: Mapping[str, Expr] | None = None) -> Expr:
    variables = variables or {}
    params = params or {}

    def leaf(node):
        if isinstance(node, Var):
            return variables.get(node.index)
        if isinstance(node, Param):
            return params.get(node.name)
        return None

    return transform(expr, leaf)


# ------------------------------------------------------------ differentiation


def diff(expr: Expr, index: int) -> Expr:
    """Derivative of ``expr`` with respect to ``x^index`` as an unsimplified tree.

    Only literal zeros produced along the way are pruned.
    """
    if index < 1:
        raise ValueError("variable indices are 1-based")
    done: Dict[int, Expr] = {}
    for node in walk(expr):
        done[id(node)] = _diff_node(node, index, done)
    return done[id(expr)]


def _diff_node(node: Expr, index: int, done: Dict[int, Expr]) -> Expr:
    if isinstance(node, (Const, Param)):
        return ZERO
    if isinstance(node, Var):
        return ONE if node.index == index else ZERO
    if isinstance(node, Neg):
        d = done[id(node.arg)]
        return ZERO if d is ZERO else Neg(d)
    if isinstance(node, (Add, Sub)):
        dl, dr = done[id(node.left)], done[id(node.right)]
        if dr is ZERO:
            return dl
        if dl is ZERO:
            return dr if isinstance(node, Add) else Neg(dr)
        return type(node)(dl, dr)
    if isinstance(node, Mul):
        dl, dr = done[id(node.left)], done[id(node.right)]
        return sum_of([product_of([dl, node.right]), product_of([node.left, dr])])
    if isinstance(node, Div):
        dl, dr = done[id(node.left)], done[id(node.right)]
        if dr is ZERO:
            return ZERO if dl is ZERO else Div(dl, node.right)
        top = Sub(product_of([dl, node.right]), product_of([node.left, dr])) \
            if dl is not ZERO else Neg(product_of([node.left, dr]))
        return Div(top, Pow(node.right, 2))
    if isinstance(node, Pow):
        db = done[id(node.base)]
        if db is ZERO:
            return ZERO
        q = node.exponent
        if q == 1:
            return db
        inner = node.base if q == 2 else Pow(node.base, q - 1)
        return product_of([Const(q), inner, db])
    if isinstance(node, Func):
        da = done[id(node.arg)]
        if da is ZERO:
            return ZERO
        a = node.arg
        if node.name == "sin":
            outer = Func("cos", a)
        elif node.name == "cos":
            outer = Neg(Func("sin", a))
        elif node.name == "tan":
            outer = Pow(Func("sec", a), 2)
        elif node.name == "sec":
            outer = Mul(Func("sec", a), Func("tan", a))
        elif node.name == "exp":
            outer = node
        elif node.name == "ln":
            return Div(da, a)
        else:  # sqrt
            return Div(da, Mul(Const(2), node))
        return product_of([outer, da])
    raise TypeError(f"unexpected node {node!r}")


# ----------------------------------------------------------------- evaluation


def _checked_div(a: float, b: float) -> float:
    if b == 0.0:
        raise DomainError("division by zero")
    return a / b


def _checked_pow(base: float, q: Fraction) -> float:
    if q.denominator == 1:
        k = q.numerator
        if base == 0.0 and k < 0:
            raise DomainError("division by zero")
        return base ** k
    if base < 0.0:
        raise DomainError("fractional power of a negative number")
    if base == 0.0 and q < 0:
        raise DomainError("division by zero")
    return base ** float(q)


def _checked_ln(a: float) -> float:
    if a <= 0.0:
        raise DomainError("logarithm of a non-positive number")
    return math.log(a)


def _checked_sqrt(a: float) -> float:
    if a < 0.0:
        raise DomainError("square root of a negative number")
    return math.sqrt(a)


def _checked_tan(a: float) -> float:
    c = math.cos(a)
    if c == 0.0:
        raise DomainError("tan at a pole")
    return math.sin(a) / c


def _checked_sec(a: float) -> float:
    return _checked_div(1.0, math.cos(a))


def _checked_exp(a: float) -> float:
    try:
        return math.exp(a)
    except OverflowError as exc:
        raise DomainError("exp overflow") from exc


FUNC_IMPL: Dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": _checked_tan,
    "sec": _checked_sec,
    "exp": _checked_exp,
    "ln": _checked_ln,
    "sqrt": _checked_sqrt,
}


def evaluate(expr: Expr, x: Sequence[float], params: Mapping[str, float] | None = None) -> float:
    """Evaluate ``expr`` with ``x[i-1]`` bound to ``x^i``.

    Raises DomainError for divisions by zero, logarithms of non-positive
    numbers and similar; KeyError if a parameter is unbound.
    """
    params = params or {}
    vals: Dict[int, float] = {}
    for node in walk(expr):
        if isinstance(node, Const):
            v = float(node.value)
        elif isinstance(node, Param):
            if node.name not in params:
                raise KeyError(f"unbound parameter {node.name!r}")
            v = float(params[node.name])
        elif isinstance(node, Var):
            if node.index > len(x):
                raise IndexError(f"no value for variable {node.index}")
            v = float(x[node.index - 1])
        elif isinstance(node, Neg):
            v = -vals[id(node.arg)]
        elif isinstance(node, Func):
            v = FUNC_IMPL[node.name](vals[id(node.arg)])
        elif isinstance(node, Add):
            v = vals[id(node.left)] + vals[id(node.right)]
        elif isinstance(node, Sub):
            v = vals[id(node.left)] - vals[id(node.right)]
        elif isinstance(node, Mul):
            v = vals[id(node.left)] * vals[id(node.right)]
        elif isinstance(node, Div):
            v = _checked_div(vals[id(node.left)], vals[id(node.right)])
        elif isinstance(node, Pow):
            v = _checked_pow(vals[id(node.base)], node.exponent)
        else:
            raise TypeError(f"unexpected node {node!r}")
        if isinstance(v, complex) or math.isnan(v):
            raise DomainError("non-real value")
        vals[id(node)] = v
    return vals[id(expr)]


# ------------------------------------------------------------------- printing

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _fmt_fraction(q: Fraction) -> str:
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


def _prec(node: Expr) -> int:
    if isinstance(node, Const):
        if node.value < 0:
            return _PREC_NEG
        return _PREC_ATOM if node.value.denominator == 1 else _PREC_MUL
    if isinstance(node, (Add, Sub)):
        return _PREC_ADD
    if isinstance(node, (Mul, Div)):
        return _PREC_MUL
    if isinstance(node, Neg):
        return _PREC_NEG
    if isinstance(node, Pow):
        return _PREC_POW
    return _PREC_ATOM


def _is_negative_term(node: Expr) -> bool:
    if isinstance(node, Neg):
        return True
    if isinstance(node, Const):
        return node.value < 0
    if isinstance(node, Mul):
        return isinstance(node.left, Const) and node.left.value < 0
    return False


def _negate_term(node: Expr) -> Expr:
    if isinstance(node, Neg):
        return node.arg
    if isinstance(node, Const):
        return Const(-node.value)
    if node.left.value == -1:
        return node.right
    return Mul(Const(-node.left.value), node.right)


def default_names(count: int) -> list[str]:
    return [f"x{i}" for i in range(1, count + 1)]


def to_string(expr: Expr, var_names: Sequence[str] | None = None) -> str:
    """Render ``expr`` in the input grammar, so that ``parse`` can read it back."""
    if var_names is None:
        top = max(free_vars(expr), default=0)
        var_names = default_names(top)
    out: Dict[int, str] = {}

    def wrap(child: Expr, minimum: int) -> str:
        text = out[id(child)]
        return f"({text})" if _prec(child) < minimum else text

    for node in walk(expr):
        if isinstance(node, Const):
            text = ("-" + _fmt_fraction(-node.value)) if node.value < 0 else _fmt_fraction(node.value)
            if node.value < 0 and node.value.denominator != 1:
                text = f"-({_fmt_fraction(-node.value)})"
        elif isinstance(node, Param):
            text = node.name
        elif isinstance(node, Var):
            text = var_names[node.index - 1] if node.index <= len(var_names) else f"x{node.index}"
        elif isinstance(node, Neg):
            # -a*b reads back as (-a)*b, which has the same value
            text = "-" + wrap(node.arg, _PREC_MUL if isinstance(node.arg, (Mul, Div)) else _PREC_POW)
        elif isinstance(node, Func):
            text = f"{node.name}({out[id(node.arg)]})"
        elif isinstance(node, Add):
            if _is_negative_term(node.right):
                neg = _negate_term(node.right)
                rhs = to_string(neg, var_names)
                rhs = f"({rhs})" if _prec(neg) <= _PREC_ADD else rhs
                text = f"{wrap(node.left, _PREC_ADD)} - {rhs}"
            else:
                text = f"{wrap(node.left, _PREC_ADD)} + {wrap(node.right, _PREC_ADD)}"
        elif isinstance(node, Sub):
            text = f"{wrap(node.left, _PREC_ADD)} - {wrap(node.right, _PREC_ADD + 1)}"
        elif isinstance(node, Mul):
            text = f"{wrap(node.left, _PREC_MUL)}*{wrap(node.right, _PREC_MUL)}"
        elif isinstance(node, Div):
            text = f"{wrap(node.left, _PREC_MUL)}/{wrap(node.right, _PREC_POW)}"
        elif isinstance(node, Pow):
            q = node.exponent
            exponent = str(q.numerator) if (q.denominator == 1 and q >= 0) else f"({_fmt_fraction(q)})"
            text = f"{wrap(node.base, _PREC_ATOM)}^{exponent}"
        else:
            raise TypeError(f"unexpected node {node!r}")
        out[id(node)] = text
    return out[id(expr)]
