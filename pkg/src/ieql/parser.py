"""Recursive-descent parser for user-declared formulas.

Grammar (usual precedence, ``^`` binds tighter than unary minus)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("-" | "+") unary | power
    power  := atom (("^" | "**") ["-"] INTEGER)?
    atom   := NUMBER | NAME | FUNC "(" expr ")" | "(" expr ")"

Exponents must be integer literals; they are expanded into ``square`` and
multiplication nodes so the tree only uses the learner's atomic units.
"""

from __future__ import annotations

import re
from typing import Sequence

from .expression import Expression, const, div, mul, unary, var

FUNCTIONS = ("cos", "sin", "exp", "log", "sqrt", "square")

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


class FormulaSyntaxError(ValueError):
    """Malformed formula; ``position`` is the 0-based character offset."""

    def __init__(self, message: str, position: int, text: str = ""):
        self.position = position
        pointer = f"\n  {text}\n  {' ' * position}^" if text else ""
        super().__init__(f"{message} at position {position}{pointer}")


class UnknownIdentifierError(FormulaSyntaxError):
    pass


class UnknownFunctionError(FormulaSyntaxError):
    pass


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            offset = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise FormulaSyntaxError(f"unexpected character {text[offset]!r}", offset, text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


def _power(base: Expression, n: int) -> Expression:
    if n == 0:
        return const(1.0)
    if n < 0:
        return div(const(1.0), _power(base, -n))
    if n == 1:
        return base
    half = _power(base, n // 2)
    sq = unary("square", half)
    return mul(sq, base) if n % 2 else sq


class _Parser:
    def __init__(self, text: str, names: Sequence[str]):
        self.text = text
        self.names = {name: i for i, name in enumerate(names)}
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        tok = self.take()
        if tok[1] != value:
            what = "end of input" if tok[0] == "end" else repr(tok[1])
            raise FormulaSyntaxError(f"expected {value!r}, found {what}", tok[2], self.text)
        return tok

    def parse(self) -> Expression:
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise FormulaSyntaxError(f"unexpected {tok[1]!r}", tok[2], self.text)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            e = Expression("add" if op == "+" else "sub", (e, self.term()))
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            e = Expression("mul" if op == "*" else "div", (e, self.unary()))
        return e

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] in ("-", "+"):
            self.take()
            inner = self.unary()
            return unary("neg", inner) if tok[1] == "-" else inner
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] in ("^", "**"):
            self.take()
            sign = 1
            if self.peek()[1] == "-":
                self.take()
                sign = -1
            tok = self.take()
            if tok[0] != "num" or not re.fullmatch(r"\d+", tok[1]):
                raise FormulaSyntaxError("exponent must be an integer literal", tok[2], self.text)
            return _power(base, sign * int(tok[1]))
        return base

    def atom(self):
        tok = self.take()
        kind, value, pos = tok
        if kind == "num":
            return const(float(value))
        if kind == "name":
            if self.peek()[1] == "(":
                if value not in FUNCTIONS:
                    raise UnknownFunctionError(f"unknown function {value!r}", pos, self.text)
                self.take()
                arg = self.expr()
                self.expect(")")
                return unary(value, arg)
            if value not in self.names:
                raise UnknownIdentifierError(f"unknown identifier {value!r}", pos, self.text)
            return var(self.names[value])
        if value == "(":
            e = self.expr()
            self.expect(")")
            return e
        what = "end of input" if kind == "end" else repr(value)
        raise FormulaSyntaxError(f"unexpected {what}", pos, self.text)


def parse_formula(text: str, input_names: Sequence[str]) -> Expression:
    """Parse ``text`` into an :class:`Expression` over ``input_names``.

    ``input_names[i]`` becomes variable index ``i``.
    """
    if len(set(input_names)) != len(input_names):
        raise ValueError("input names must be unique")
    return _Parser(text, list(input_names)).parse()
