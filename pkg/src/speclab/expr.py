"""Scalar field expressions over ``x``, ``y`` (and ``phi`` for boundary radii).

A tiny recursive-descent parser producing an immutable tree that evaluates
on floats or numpy arrays.  Precedence, tightest first: ``^``, unary minus,
``* /``, ``+ -``.  Binary ``+ - * /`` are left-associative; ``^`` is
right-associative, so ``-x^2`` is ``-(x^2)`` and ``2^3^2`` is ``2^9``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

FUNCTIONS: dict[str, tuple[int, Callable]] = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "log": (1, np.log),
    "sqrt": (1, np.sqrt),
    "abs": (1, np.abs),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
}

DEFAULT_VARIABLES = ("x", "y")


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int, source: str):
        super().__init__(f"{message} at byte offset {offset} in {source!r}")
        self.offset = offset
        self.source = source


class UnknownIdentifier(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at byte offset {offset}")
        self.name = name
        self.offset = offset


# --- tree nodes -----------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _tokenize(src: str):
    tokens = []
    i = 0
    n = len(src)
    while i < n:
        ch = src[i]
        if ch.isspace():
            i += 1
        elif ch.isdigit() or (ch == "." and i + 1 < n and src[i + 1].isdigit()):
            j = i
            while j < n and (src[j].isdigit() or src[j] == "."):
                j += 1
            if j < n and src[j] in "eE":
                k = j + 1
                if k < n and src[k] in "+-":
                    k += 1
                if k < n and src[k].isdigit():
                    j = k
                    while j < n and src[j].isdigit():
                        j += 1
            text = src[i:j]
            try:
                value = float(text)
            except ValueError:
                raise ExprSyntaxError(f"malformed number {text!r}", i, src) from None
            tokens.append(("num", value, i))
            i = j
        elif ch.isalpha() or ch == "_":
            j = i
            while j < n and (src[j].isalnum() or src[j] == "_"):
                j += 1
            tokens.append(("id", src[i:j], i))
            i = j
        elif ch in "+-*/^(),":
            tokens.append(("op", ch, i))
            i += 1
        else:
            raise ExprSyntaxError(f"unexpected character {ch!r}", i, src)
    tokens.append(("end", None, n))
    return tokens


class _Parser:
    def __init__(self, src: str, variables):
        self.src = src
        self.variables = set(variables)
        self.tokens = _tokenize(src)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, value):
        kind, val, off = self.take()
        if kind != "op" or val != value:
            raise ExprSyntaxError(f"expected {value!r}", off, self.src)

    def parse(self):
        node = self.additive()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {val!r}", off, self.src)
        return node

    def additive(self):
        node = self.multiplicative()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = BinOp(op, node, self.multiplicative())
        return node

    def multiplicative(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            arg = self.unary()
            return Neg(arg) if op == "-" else arg
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            # exponent may carry its own sign: x^-2
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, val, off = self.take()
        if kind == "num":
            return Num(val)
        if kind == "id":
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                if val not in FUNCTIONS:
                    raise UnknownIdentifier(val, off)
                self.take()
                args = [self.additive()]
                while self.peek()[0] == "op" and self.peek()[1] == ",":
                    self.take()
                    args.append(self.additive())
                self.expect(")")
                arity = FUNCTIONS[val][0]
                if len(args) != arity:
                    raise ExprSyntaxError(
                        f"{val} takes {arity} argument(s), got {len(args)}", off, self.src
                    )
                return Call(val, tuple(args))
            if val == "pi":
                return Num(float(np.pi))
            if val not in self.variables:
                raise UnknownIdentifier(val, off)
            return Var(val)
        if kind == "op" and val == "(":
            node = self.additive()
            self.expect(")")
            return node
        what = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"unexpected {what}", off, self.src)


def _compile(node) -> Callable[[dict], object]:
    if isinstance(node, Num):
        v = node.value
        return lambda env: v
    if isinstance(node, Var):
        name = node.name
        return lambda env: env[name]
    if isinstance(node, Neg):
        f = _compile(node.arg)
        return lambda env: -f(env)
    if isinstance(node, BinOp):
        a, b = _compile(node.left), _compile(node.right)
        op = node.op
        if op == "+":
            return lambda env: a(env) + b(env)
        if op == "-":
            return lambda env: a(env) - b(env)
        if op == "*":
            return lambda env: a(env) * b(env)
        if op == "/":
            return lambda env: a(env) / b(env)
        # integer powers stay exact for negative bases
        if isinstance(node.right, Num) and float(node.right.value).is_integer():
            k = int(node.right.value)
            return lambda env: a(env) ** k
        return lambda env: np.power(a(env), b(env))
    if isinstance(node, Call):
        fn = FUNCTIONS[node.name][1]
        args = [_compile(arg) for arg in node.args]
        if len(args) == 1:
            (g,) = args
            return lambda env: fn(g(env))
        g, h = args
        return lambda env: fn(g(env), h(env))
    raise TypeError(f"unknown node {node!r}")


def _fmt_num(v: float) -> str:
    return repr(float(v))


def to_source(node, parent_prec: int = 0, right_side: bool = False) -> str:
    """Pretty-print a tree with the minimal parentheses that re-parse identically."""
    if isinstance(node, Num):
        s = _fmt_num(node.value)
        return f"({s})" if node.value < 0 else s
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_source(a) for a in node.args)})"
    if isinstance(node, Neg):
        s = "-" + to_source(node.arg, 3)
        return f"({s})" if parent_prec >= 3 else s
    if isinstance(node, BinOp):
        prec = _PREC[node.op]
        if node.op == "^":
            s = f"{to_source(node.left, 5)}^{to_source(node.right, 3)}"
        else:
            s = (f"{to_source(node.left, prec)} {node.op} "
                 f"{to_source(node.right, prec + 1)}")
        return f"({s})" if prec < parent_prec else s
    raise TypeError(f"unknown node {node!r}")


@dataclass(frozen=True)
class FieldExpr:
    """A parsed scalar field.  Call with ``x, y`` (floats or arrays)."""

    source: str
    tree: object = field(repr=False, compare=False)
    variables: tuple = DEFAULT_VARIABLES
    _fn: Callable = field(repr=False, compare=False, default=None)

    def __call__(self, *args, **kwargs):
        env = dict(zip(self.variables, args))
        env.update(kwargs)
        val = self._fn(env)
        # broadcast constants to the argument shape
        if args:
            shape = np.broadcast(*[np.asarray(a) for a in args]).shape
            if np.shape(val) != shape:
                val = np.broadcast_to(np.asarray(val, dtype=float), shape).copy()
        if np.ndim(val) == 0:
            return float(val)
        return np.asarray(val, dtype=float)

    def pretty(self) -> str:
        return to_source(self.tree)

    @property
    def is_constant(self) -> bool:
        return isinstance(self.tree, Num)


def parse_field(source: str, variables=DEFAULT_VARIABLES) -> FieldExpr:
    if not isinstance(source, str) or not source.strip():
        raise ExprSyntaxError("empty expression", 0, str(source))
    tree = _Parser(source, variables).parse()
    return FieldExpr(source, tree, tuple(variables), _compile(tree))


def as_field(value, variables=DEFAULT_VARIABLES) -> FieldExpr:
    if isinstance(value, FieldExpr):
        return value
    if isinstance(value, (int, float)):
        value = repr(float(value))
    return parse_field(value, variables)


def eval_grad(f: FieldExpr, x) -> np.ndarray:
    """Central-difference gradient with step ``1e-5 * (1 + |x|)``."""
    p = np.asarray(x, dtype=float)
    h = 1e-5 * (1.0 + np.linalg.norm(p))
    g = np.empty(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        g[i] = (f(*(p + e)) - f(*(p - e))) / (2 * h)
    return g
