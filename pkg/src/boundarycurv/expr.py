"""A small expression language for metric components and parametrizations.

Grammar (whitespace insignificant)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom ('^' unary)?          # exponent must fold to an integer
    atom   := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'
    FUNC   := sin | cos | exp | sqrt

The name ``pi`` is reserved for the constant.

Nodes evaluate on floats, numpy arrays or :class:`~boundarycurv.jets.Jet`
objects, and can be differentiated symbolically.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from . import jets
from .errors import ParseError, UnknownSymbol

FUNCTIONS = ("sin", "cos", "exp", "sqrt")

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


class Node:
    def evaluate(self, env):
        raise NotImplementedError

    def diff(self, var: str) -> "Node":
        raise NotImplementedError

    def variables(self) -> set[str]:
        return set()


@dataclass(frozen=True)
class Num(Node):
    value: float

    def evaluate(self, env):
        return self.value

    def diff(self, var):
        return ZERO

    def __str__(self):
        return repr(self.value)


ZERO = Num(0.0)
ONE = Num(1.0)


@dataclass(frozen=True)
class Var(Node):
    name: str

    def evaluate(self, env):
        return env[self.name]

    def diff(self, var):
        return ONE if var == self.name else ZERO

    def variables(self):
        return {self.name}

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Neg(Node):
    arg: Node

    def evaluate(self, env):
        return -self.arg.evaluate(env)

    def diff(self, var):
        return neg(self.arg.diff(var))

    def variables(self):
        return self.arg.variables()

    def __str__(self):
        return f"(-{self.arg})"


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node

    def evaluate(self, env):
        a = self.left.evaluate(env)
        b = self.right.evaluate(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        return a / b

    def diff(self, var):
        l, r = self.left, self.right
        dl, dr = l.diff(var), r.diff(var)
        if self.op == "+":
            return add(dl, dr)
        if self.op == "-":
            return sub(dl, dr)
        if self.op == "*":
            return add(mul(dl, r), mul(l, dr))
        return sub(div(dl, r), div(mul(l, dr), Pow(r, 2)))

    def variables(self):
        return self.left.variables() | self.right.variables()

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class Pow(Node):
    base: Node
    exponent: int

    def evaluate(self, env):
        b = self.base.evaluate(env)
        if isinstance(b, jets.Jet):
            return b ** self.exponent
        return np.asarray(b, dtype=float) ** self.exponent

    def diff(self, var):
        if self.exponent == 0:
            return ZERO
        inner = Pow(self.base, self.exponent - 1) if self.exponent != 1 else ONE
        return mul(mul(Num(float(self.exponent)), inner), self.base.diff(var))

    def variables(self):
        return self.base.variables()

    def __str__(self):
        return f"({self.base}^{self.exponent})"


_FUNC_IMPL = {"sin": jets.sin, "cos": jets.cos, "exp": jets.exp, "sqrt": jets.sqrt}


@dataclass(frozen=True)
class Call(Node):
    func: str
    arg: Node

    def evaluate(self, env):
        return _FUNC_IMPL[self.func](self.arg.evaluate(env))

    def diff(self, var):
        da = self.arg.diff(var)
        if da == ZERO:
            return ZERO
        a = self.arg
        if self.func == "sin":
            outer = Call("cos", a)
        elif self.func == "cos":
            outer = neg(Call("sin", a))
        elif self.func == "exp":
            outer = self
        else:
            outer = div(Num(0.5), self)
        return mul(outer, da)

    def variables(self):
        return self.arg.variables()

    def __str__(self):
        return f"{self.func}({self.arg})"


# light constant folding keeps symbolic derivatives small
def neg(a):
    if isinstance(a, Num):
        return Num(-a.value)
    return Neg(a)


def add(a, b):
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def sub(a, b):
    if b == ZERO:
        return a
    if a == ZERO:
        return neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def mul(a, b):
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def div(a, b):
    if a == ZERO:
        return ZERO
    if b == ONE:
        return a
    return BinOp("/", a, b)


class _Parser:
    def __init__(self, text: str, allowed: frozenset[str] | None):
        self.text = text
        self.allowed = allowed
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while True:
            while pos < len(text) and text[pos].isspace():
                pos += 1
            if pos >= len(text):
                break
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                raise ParseError(f"unexpected character {text[pos]!r}", pos, text)
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), start))
            pos = m.end()
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else ("eof", "", len(self.text))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value or kind != "op":
            found = "end of input" if kind == "eof" else repr(text)
            raise ParseError(f"expected {value!r}, found {found}", pos, self.text)

    def parse(self) -> Node:
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "eof":
            raise ParseError(f"unexpected {text!r}", pos, self.text)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        kind, text, _ = self.peek()
        if kind == "op" and text in ("+", "-"):
            self.take()
            arg = self.unary()
            return arg if text == "+" else neg(arg)
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        kind, text, pos = self.peek()
        if kind == "op" and text == "^":
            self.take()
            epos = self.peek()[2]
            exponent = self.unary()
            value = _fold(exponent)
            if value is None or value != int(value):
                raise ParseError("exponent must be an integer constant", epos, self.text)
            return Pow(base, int(value))
        return base

    def atom(self) -> Node:
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            if text == "pi":
                return Num(math.pi)
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                raise UnknownSymbol(f"unknown function {text!r}", pos, self.text)
            if self.allowed is not None and text not in self.allowed:
                raise UnknownSymbol(f"unknown symbol {text!r}", pos, self.text)
            return Var(text)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "eof" else repr(text)
        raise ParseError(f"expected operand, found {found}", pos, self.text)


def _fold(node: Node):
    if node.variables():
        return None
    try:
        return float(node.evaluate({}))
    except (ZeroDivisionError, FloatingPointError):
        return None


def parse(text: str, variables=None) -> Node:
    """Parse ``text``; ``variables`` restricts the admissible variable names."""
    allowed = None if variables is None else frozenset(variables)
    return _Parser(text, allowed).parse()


def field_variables(n: int) -> tuple[str, ...]:
    return tuple(f"x{i + 1}" for i in range(n)) + ("t",)
