"""Tiny arithmetic grammar for drift/sigma strings in config files.

Supported: numbers, the variable ``x``, ``+ - * / ^``, parentheses, and the
functions ``exp``, ``tanh``, ``abs``.  ``^`` is right-associative and binds
tighter than unary minus, so ``-x^2`` parses as ``-(x^2)``.  Parsed
expressions compile to vectorized numpy callables; no ``eval`` involved.
"""

from __future__ import annotations

import re
from typing import Callable

import numpy as np

from .errors import ConfigError

_FUNCTIONS: dict[str, Callable] = {
    "exp": np.exp,
    "tanh": np.tanh,
    "abs": np.abs,
}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_]\w*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise ConfigError(f"unexpected character {text[pos]!r} at position {pos} in {text!r}")
        if m.lastgroup is not None:
            tokens.append((m.lastgroup, m.group(m.lastgroup)))
        pos = m.end()
    tokens.append(("end", ""))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> tuple[str, str]:
        return self.tokens[self.i]

    def next(self) -> tuple[str, str]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str) -> None:
        kind, text = self.next()
        if text != value:
            raise ConfigError(f"expected {value!r} in {self.text!r}, got {text or 'end of input'!r}")

    def parse(self):
        node = self.sum()
        if self.peek()[0] != "end":
            raise ConfigError(f"trailing input {self.peek()[1]!r} in {self.text!r}")
        return node

    def sum(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.next()[1]
            rhs = self.term()
            node = ("+" if op == "+" else "-", node, rhs)
        return node

    def term(self):
        node = self.factor()
        while self.peek()[1] in ("*", "/"):
            op = self.next()[1]
            rhs = self.factor()
            node = (op, node, rhs)
        return node

    def factor(self):
        if self.peek()[1] == "-":
            self.next()
            return ("neg", self.factor())
        if self.peek()[1] == "+":
            self.next()
            return self.factor()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.next()
            return ("^", base, self.factor())
        return base

    def atom(self):
        kind, text = self.next()
        if kind == "num":
            return ("const", float(text))
        if kind == "name":
            if text == "x":
                return ("var",)
            if text in _FUNCTIONS:
                self.expect("(")
                arg = self.sum()
                self.expect(")")
                return ("call", text, arg)
            raise ConfigError(f"unknown name {text!r} in {self.text!r} (allowed: x, exp, tanh, abs)")
        if text == "(":
            node = self.sum()
            self.expect(")")
            return node
        raise ConfigError(f"unexpected {text or 'end of input'!r} in {self.text!r}")


def _compile(node) -> Callable:
    op = node[0]
    if op == "const":
        value = node[1]
        return lambda x: np.full_like(np.asarray(x, dtype=float), value)
    if op == "var":
        return lambda x: np.asarray(x, dtype=float)
    if op == "neg":
        inner = _compile(node[1])
        return lambda x: -inner(x)
    if op == "call":
        fn = _FUNCTIONS[node[1]]
        inner = _compile(node[2])
        return lambda x: fn(inner(x))
    lhs, rhs = _compile(node[1]), _compile(node[2])
    if op == "+":
        return lambda x: lhs(x) + rhs(x)
    if op == "-":
        return lambda x: lhs(x) - rhs(x)
    if op == "*":
        return lambda x: lhs(x) * rhs(x)
    if op == "/":
        return lambda x: lhs(x) / rhs(x)
    if op == "^":
        return lambda x: lhs(x) ** rhs(x)
    raise AssertionError(f"unhandled node {node!r}")


def parse_expression(text: str) -> Callable:
    """Compile an expression string into a vectorized function of x."""
    if not isinstance(text, str) or not text.strip():
        raise ConfigError("expression must be a non-empty string")
    return _compile(_Parser(text).parse())
