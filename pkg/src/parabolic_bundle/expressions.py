"""Small arithmetic expression language for coefficient specifications.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | atom
    atom   := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'

Names are the variables ``x``, ``y``, ``t`` and the constants ``pi`` and ``e``.
Functions are ``sin``, ``cos`` and ``exp``.  Expressions compile to callables
that broadcast over numpy arrays.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

VARIABLES = ("x", "y", "t")
CONSTANTS = {"pi": math.pi, "e": math.e}
FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/()]))"
)


class ExpressionError(ValueError):
    """Raised for malformed coefficient expressions."""


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Neg:
    arg: "Node"


Node = Union[Num, Var, Call, BinOp, Neg]


def tokenize(source: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    source = source.rstrip()
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            raise ExpressionError(f"unexpected character {source[pos:].strip()[:1]!r} at {pos} in {source!r}")
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, op: str):
        kind, val = self.take()
        if kind != "op" or val != op:
            raise ExpressionError(f"expected {op!r} in {self.source!r}, got {val!r}")

    def parse(self) -> Node:
        if not self.tokens:
            raise ExpressionError("empty expression")
        node = self.expr()
        if self.i != len(self.tokens):
            raise ExpressionError(f"trailing input {self.peek()[1]!r} in {self.source!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek() in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek() == ("op", "-"):
            self.take()
            return Neg(self.unary())
        if self.peek() == ("op", "+"):
            self.take()
            return self.unary()
        return self.atom()

    def atom(self) -> Node:
        kind, val = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            if val in CONSTANTS:
                return Num(CONSTANTS[val])
            if val in VARIABLES:
                return Var(val)
            raise ExpressionError(f"unknown name {val!r} in {self.source!r}")
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ExpressionError(f"unexpected token {val!r} in {self.source!r}")


def parse(source: str) -> Node:
    return _Parser(source).parse()


def _eval(node: Node, env: dict):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.name not in env:
            raise ExpressionError(f"variable {node.name!r} is not bound here")
        return env[node.name]
    if isinstance(node, Neg):
        return -_eval(node.arg, env)
    if isinstance(node, Call):
        return FUNCTIONS[node.func](_eval(node.arg, env))
    left, right = _eval(node.left, env), _eval(node.right, env)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    return left / right


def variables(node: Node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Num):
        return set()
    if isinstance(node, (Neg, Call)):
        return variables(node.arg)
    return variables(node.left) | variables(node.right)


@dataclass(frozen=True)
class Expression:
    """A compiled expression; call with keyword arrays ``x``, ``y``, ``t``."""

    source: str
    tree: Node

    @property
    def free_variables(self) -> set[str]:
        return variables(self.tree)

    def __call__(self, **env) -> np.ndarray:
        shape = np.broadcast_shapes(*(np.shape(v) for v in env.values())) if env else ()
        with np.errstate(divide="raise", invalid="raise", over="raise"):
            try:
                value = _eval(self.tree, env)
            except FloatingPointError as exc:
                raise ExpressionError(f"{self.source!r}: {exc}") from None
        return np.broadcast_to(np.asarray(value, dtype=float), shape).copy()


def compile_expression(source: Union[str, float, int], allowed: tuple[str, ...] = VARIABLES) -> Expression:
    """Parse ``source`` and check it only uses the ``allowed`` variables."""
    if isinstance(source, (int, float)) and not isinstance(source, bool):
        return Expression(repr(float(source)), Num(float(source)))
    if not isinstance(source, str):
        raise ExpressionError(f"expected an expression string or number, got {type(source).__name__}")
    tree = parse(source)
    extra = variables(tree) - set(allowed)
    if extra:
        raise ExpressionError(f"{source!r} uses {sorted(extra)}; only {list(allowed)} allowed here")
    return Expression(source, tree)


def evaluate_scalar(source: Union[str, float, int]) -> float:
    """Evaluate a variable-free expression such as ``"pi/2"``."""
    return float(compile_expression(source, allowed=())())


CoefficientFunction = Callable[..., np.ndarray]
