"""Recursive-descent parser and vectorized evaluator for coefficient expressions.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := unary ('^' factor)?
    unary  := '-' unary | atom
    atom   := number | symbol | func '(' expr {',' expr} ')' | '(' expr ')'

``^`` is right-associative and unary minus binds tighter than the base of
``^``, so ``-2^2`` is ``(-2)^2 = 4``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

__all__ = [
    "ExpressionError",
    "Num",
    "Sym",
    "Neg",
    "BinOp",
    "Call",
    "parse_expression",
    "evaluate",
    "to_source",
    "symbols_of",
    "compile_expression",
]

CONSTANTS = {"pi": math.pi, "e": math.e}

# name -> (min arity, max arity or None for variadic)
FUNCTIONS = {
    "exp": (1, 1),
    "ln": (1, 1),
    "sin": (1, 1),
    "cos": (1, 1),
    "sqrt": (1, 1),
    "abs": (1, 1),
    "min": (1, None),
    "max": (1, None),
    "pow": (2, 2),
}

_SYMBOL_RE = re.compile(r"^(r|x[1-9][0-9]*)$")


class ExpressionError(ValueError):
    """Syntax, symbol or arity error, with the character offset it refers to."""

    def __init__(self, message: str, position: int | None = None, source: str | None = None):
        self.position = position
        self.source = source
        if position is not None:
            text = f"{message} at position {position}"
            if source is not None:
                text += f"\n  {source}\n  {' ' * position}^"
        else:
            text = message
        super().__init__(text)


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Sym:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Node = Union[Num, Sym, Neg, BinOp, Call]

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExpressionError(f"unexpected character {text[bad]!r}", bad, text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, dim: int | None):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.dim = dim

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        return ExpressionError(message, tok[2], self.text)

    def expect(self, value):
        tok = self.peek()
        if tok[0] != "op" or tok[1] != value:
            found = "end of input" if tok[0] == "end" else repr(tok[1])
            raise self.error(f"expected {value!r}, found {found}")
        return self.take()

    def parse(self) -> Node:
        node = self.expr()
        if self.peek()[0] != "end":
            raise self.error(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        base = self.unary()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.factor())
        return base

    def unary(self):
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.atom()

    def atom(self):
        tok = self.peek()
        kind, value, pos = tok
        if kind == "num":
            self.take()
            return Num(float(value))
        if kind == "name":
            self.take()
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                return self.call(value, tok)
            if value in FUNCTIONS:
                raise self.error(f"function {value!r} used without arguments", tok)
            if value in CONSTANTS:
                return Sym(value)
            if _SYMBOL_RE.match(value):
                if value != "r" and self.dim is not None and int(value[1:]) > self.dim:
                    raise self.error(f"symbol {value!r} exceeds dimension {self.dim}", tok)
                return Sym(value)
            raise self.error(f"unknown symbol {value!r}", tok)
        if kind == "op" and value == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            raise self.error("unexpected end of input")
        raise self.error(f"unexpected token {value!r}")

    def call(self, name, tok):
        if name not in FUNCTIONS:
            raise self.error(f"unknown function {name!r}", tok)
        self.expect("(")
        args = [self.expr()]
        while self.peek()[0] == "op" and self.peek()[1] == ",":
            self.take()
            args.append(self.expr())
        self.expect(")")
        lo, hi = FUNCTIONS[name]
        if len(args) < lo or (hi is not None and len(args) > hi):
            want = str(lo) if lo == hi else f"at least {lo}"
            raise self.error(f"{name}() takes {want} argument(s), got {len(args)}", tok)
        return Call(name, tuple(args))


def parse_expression(text: str, dim: int | None = None) -> Node:
    """Parse ``text`` into an AST.

    When ``dim`` is given, coordinate symbols ``x<k>`` with ``k > dim`` are
    rejected.
    """
    if not isinstance(text, str):
        raise TypeError("expression source must be a string")
    return _Parser(text, dim).parse()


def symbols_of(node: Node) -> set[str]:
    """Free coordinate symbols (constants excluded)."""
    if isinstance(node, Sym):
        return set() if node.name in CONSTANTS else {node.name}
    if isinstance(node, Neg):
        return symbols_of(node.operand)
    if isinstance(node, BinOp):
        return symbols_of(node.left) | symbols_of(node.right)
    if isinstance(node, Call):
        out = set()
        for arg in node.args:
            out |= symbols_of(arg)
        return out
    return set()


_UNARY = {
    "exp": np.exp,
    "ln": np.log,
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": np.sqrt,
    "abs": np.abs,
}


def evaluate(node: Node, env: Mapping[str, object]):
    """Evaluate ``node`` with symbol values taken from ``env``.

    Values may be scalars or numpy arrays (broadcast together). Non-finite
    intermediate results are not trapped here; callers check the output.
    """
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Sym):
        if node.name in CONSTANTS:
            return CONSTANTS[node.name]
        try:
            return env[node.name]
        except KeyError:
            raise ExpressionError(f"no value bound for symbol {node.name!r}") from None
    if isinstance(node, Neg):
        return -evaluate(node.operand, env)
    if isinstance(node, BinOp):
        left = evaluate(node.left, env)
        right = evaluate(node.right, env)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        if node.op == "/":
            return np.divide(left, right)
        return np.power(np.asarray(left, dtype=float), right)
    if isinstance(node, Call):
        args = [evaluate(a, env) for a in node.args]
        if node.func in _UNARY:
            return _UNARY[node.func](args[0])
        if node.func == "pow":
            return np.power(np.asarray(args[0], dtype=float), args[1])
        reduce = np.minimum if node.func == "min" else np.maximum
        out = args[0]
        for arg in args[1:]:
            out = reduce(out, arg)
        return out
    raise TypeError(f"not an expression node: {node!r}")


def to_source(node: Node) -> str:
    """Fully parenthesized source text; re-parsing gives an equivalent AST."""
    if isinstance(node, Num):
        text = repr(node.value)
        return f"({text})" if node.value < 0 else text
    if isinstance(node, Sym):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_source(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_source(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


def compile_expression(node: Node):
    """Turn ``node`` into a closure ``f(env)``; same semantics as :func:`evaluate`.

    Closures avoid the AST walk on every call, which matters inside scalar
    adaptive quadrature loops.
    """
    if isinstance(node, Num):
        value = node.value
        return lambda env: value
    if isinstance(node, Sym):
        name = node.name
        if name in CONSTANTS:
            value = CONSTANTS[name]
            return lambda env: value
        return lambda env: env[name]
    if isinstance(node, Neg):
        inner = compile_expression(node.operand)
        return lambda env: -inner(env)
    if isinstance(node, BinOp):
        lf = compile_expression(node.left)
        rf = compile_expression(node.right)
        op = node.op
        if op == "+":
            return lambda env: lf(env) + rf(env)
        if op == "-":
            return lambda env: lf(env) - rf(env)
        if op == "*":
            return lambda env: lf(env) * rf(env)
        if op == "/":
            return lambda env: np.divide(lf(env), rf(env))
        return lambda env: np.power(np.asarray(lf(env), dtype=float), rf(env))
    if isinstance(node, Call):
        argf = [compile_expression(a) for a in node.args]
        if node.func in _UNARY:
            fn = _UNARY[node.func]
            a0 = argf[0]
            return lambda env: fn(a0(env))
        if node.func == "pow":
            a0, a1 = argf
            return lambda env: np.power(np.asarray(a0(env), dtype=float), a1(env))
        reduce = np.minimum if node.func == "min" else np.maximum

        def _fold(env):
            out = argf[0](env)
            for f in argf[1:]:
                out = reduce(out, f(env))
            return out

        return _fold
    raise TypeError(f"not an expression node: {node!r}")
