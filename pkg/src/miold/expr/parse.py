"""Recursive-descent parser for the expression grammar.

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := ['-'] atom ['^' exponent]
    atom   := number | ident | func '(' expr ')' | '(' expr ')'

``exponent`` is an integer, optionally signed, or a parenthesised signed
rational such as ``(-1/2)``.  Identifiers that are declared variable names
bind to variables; everything else is a parameter unless a closed parameter
set is supplied.
"""

from __future__ import annotations

import re
from fractions import Fraction
from typing import Collection, Mapping, Sequence

from .nodes import FUNCTIONS, Const, Div, Expr, Func, Mul, Neg, Param, Pow, Var, Add, Sub


class ParseError(ValueError):
    """Syntax error or unknown identifier, with the offending position."""

    def __init__(self, message: str, text: str, pos: int):
        self.text = text
        self.pos = pos
        pointer = " " * pos + "^"
        super().__init__(f"{message} at position {pos}\n  {text}\n  {pointer}")
        self.message = message


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, var_names: Sequence[str],
                 params: Collection[str] | None, defs: Mapping[str, Expr] | None):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.vars = {name: k + 1 for k, name in enumerate(var_names)}
        self.params = None if params is None else set(params)
        self.defs = defs or {}

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value or kind == "end":
            found = "end of input" if kind == "end" else repr(text)
            raise ParseError(f"expected {value!r}, found {found}", self.text, pos)

    def error(self, message: str):
        raise ParseError(message, self.text, self.peek()[2])

    def parse(self) -> Expr:
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {text!r}", self.text, pos)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def term(self) -> Expr:
        # a*b/c is read as a*(b/c): divisions bind to the factor before them
        chunks = [self.chunk()]
        while self.peek()[1] == "*" and self.peek()[0] == "op":
            self.take()
            chunks.append(self.chunk())
        node = chunks[0]
        for c in chunks[1:]:
            node = Mul(node, c)
        return node

    def chunk(self) -> Expr:
        node = self.factor()
        while self.peek()[1] == "/" and self.peek()[0] == "op":
            self.take()
            node = Div(node, self.factor())
        return node

    def factor(self) -> Expr:
        negate = False
        if self.peek()[1] == "-" and self.peek()[0] == "op":
            self.take()
            negate = True
        node = self.atom()
        if self.peek()[1] == "^":
            self.take()
            node = Pow(node, self.exponent())
        return Neg(node) if negate else node

    def _integer(self) -> int:
        sign = 1
        if self.peek()[1] == "-":
            self.take()
            sign = -1
        kind, text, pos = self.take()
        if kind != "num" or not text.isdigit():
            raise ParseError("expected an integer exponent", self.text, pos)
        return sign * int(text)

    def exponent(self) -> Fraction:
        if self.peek()[1] == "(":
            self.take()
            top = self._integer()
            bottom = 1
            if self.peek()[1] == "/":
                self.take()
                bottom = self._integer()
                if bottom == 0:
                    self.error("zero denominator in exponent")
            self.expect(")")
            return Fraction(top, bottom)
        return Fraction(self._integer())

    def atom(self) -> Expr:
        kind, text, pos = self.take()
        if kind == "num":
            return Const(Fraction(text))
        if kind == "ident":
            if self.peek()[1] == "(":
                if text not in FUNCTIONS:
                    raise ParseError(f"unknown function {text!r}", self.text, pos)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Func(text, arg)
            if text in FUNCTIONS:
                raise ParseError(f"function {text!r} needs an argument", self.text, pos)
            if text in self.vars:
                return Var(self.vars[text])
            if text in self.defs:
                return self.defs[text]
            if self.params is not None and text not in self.params:
                raise ParseError(f"unknown identifier {text!r}", self.text, pos)
            return Param(text)
        if text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(text)
        raise ParseError(f"unexpected {found}", self.text, pos)


def parse(text: str, var_names: Sequence[str] = (), params: Collection[str] | None = None,
          defs: Mapping[str, Expr] | None = None) -> Expr:
    """Parse ``text`` into an expression tree.

    Parameters
    ----------
    var_names : names bound, in order, to ``x^1, x^2, ...``.
    params : if given, the closed set of allowed parameter names; any other
        identifier is an error.
    defs : named sub-expressions substituted in place of identifiers.
    """
    return _Parser(text, var_names, params, defs).parse()
