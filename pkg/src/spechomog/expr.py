"""Closed-form coefficient expressions.

Coefficients (kappa, a) and custom kernels are supplied as text in config
files and parsed here into small immutable ASTs.  The grammar is standard
infix arithmetic with ``^`` right-associative, unary minus, and no implicit
multiplication.  Variable names are fixed by convention:

* slow variables ``x1..xd`` and ``y1..yd``,
* fast (periodic) variables ``xi1..xid`` and ``eta1..etad``,
* kernel offsets ``z1..zd``,

plus the constant ``pi``.  Functions: sin, cos, exp, log, sqrt, abs and the
binary min/max.

Evaluation is pure and accepts either floats or numpy arrays as bindings;
mixed scalar/array bindings broadcast.  Domain violations (log of a
nonpositive value, sqrt of a negative, division by zero, fractional power
of a negative base) raise :class:`ExprDomainError` naming the offending
subexpression.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EvalBindingError,
    ExprDomainError,
    ExprSyntaxError,
    UnknownIdentifierError,
)

_VAR_RE = re.compile(r"^(x|y|xi|eta|z)([1-9][0-9]*)$")
_FUNCTIONS_1 = ("sin", "cos", "exp", "log", "sqrt", "abs")
_FUNCTIONS_2 = ("min", "max")
_FUNCTIONS = _FUNCTIONS_1 + _FUNCTIONS_2


def is_variable_name(name: str) -> bool:
    return _VAR_RE.match(name) is not None


# ---------------------------------------------------------------------------
# AST nodes.  Every node keeps its source span for error reporting.


@dataclass(frozen=True)
class Node:
    start: int
    end: int


@dataclass(frozen=True)
class Const(Node):
    value: float


@dataclass(frozen=True)
class Var(Node):
    name: str


@dataclass(frozen=True)
class Neg(Node):
    operand: Node


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node


@dataclass(frozen=True)
class Call(Node):
    func: str
    args: tuple


@dataclass(frozen=True)
class Expression:
    """A parsed expression with its free-variable set."""

    root: Node
    free_variables: frozenset
    text: str = field(compare=False)

    def __str__(self) -> str:
        return _print(self.root)


# ---------------------------------------------------------------------------
# Tokenizer


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            # skip leading whitespace that the regex did not consume
            stripped = text[pos:].lstrip()
            off = len(text) - len(stripped)
            if not stripped:
                break
            raise ExprSyntaxError(f"unexpected character '{stripped[0]}'", off)
        if m.group("num") is not None:
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.group("ident") is not None:
            tokens.append(("ident", m.group("ident"), m.start("ident")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    return tokens


# ---------------------------------------------------------------------------
# Recursive-descent parser


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        if self.pos < len(self.tokens):
            return self.tokens[self.pos]
        return ("end", "", len(self.text))

    def advance(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect_op(self, symbol: str):
        kind, value, off = self.peek()
        if kind != "op" or value != symbol:
            raise ExprSyntaxError(f"expected '{symbol}'", off)
        return self.advance()

    def parse(self) -> Node:
        node = self.parse_sum()
        kind, value, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected '{value}'", off)
        return node

    def parse_sum(self) -> Node:
        node = self.parse_term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.advance()
                right = self.parse_term()
                node = BinOp(node.start, right.end, value, node, right)
            else:
                return node

    def parse_term(self) -> Node:
        node = self.parse_unary()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.advance()
                right = self.parse_unary()
                node = BinOp(node.start, right.end, value, node, right)
            else:
                return node

    def parse_unary(self) -> Node:
        kind, value, off = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            operand = self.parse_unary()
            return Neg(off, operand.end, operand)
        return self.parse_power()

    def parse_power(self) -> Node:
        base = self.parse_atom()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.advance()
            # right-associative; exponent may carry its own unary minus
            exponent = self.parse_unary()
            return BinOp(base.start, exponent.end, "^", base, exponent)
        return base

    def parse_atom(self) -> Node:
        kind, value, off = self.advance()
        if kind == "num":
            return Const(off, off + len(value), float(value))
        if kind == "ident":
            if value == "pi":
                return Const(off, off + len(value), float(np.pi))
            if value in _FUNCTIONS:
                self.expect_op("(")
                args = [self.parse_sum()]
                while True:
                    k, v, o = self.peek()
                    if k == "op" and v == ",":
                        self.advance()
                        args.append(self.parse_sum())
                    else:
                        break
                _, _, close_off = self.expect_op(")")
                nargs = 2 if value in _FUNCTIONS_2 else 1
                if len(args) != nargs:
                    raise ExprSyntaxError(
                        f"function '{value}' takes {nargs} argument(s)", off
                    )
                return Call(off, close_off + 1, value, tuple(args))
            if is_variable_name(value):
                return Var(off, off + len(value), value)
            raise UnknownIdentifierError(value, off)
        if kind == "op" and value == "(":
            node = self.parse_sum()
            self.expect_op(")")
            return node
        raise ExprSyntaxError(f"unexpected '{value}'" if value else "unexpected end of input", off)


def parse(text: str) -> Expression:
    """Parse ``text`` into an :class:`Expression`.

    Raises :class:`ExprSyntaxError` (with byte offset) on malformed input and
    :class:`UnknownIdentifierError` for identifiers outside the fixed
    variable/function vocabulary.
    """
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    root = _Parser(text).parse()
    return Expression(root=root, free_variables=frozenset(_collect_vars(root)), text=text)


def _collect_vars(node: Node):
    if isinstance(node, Var):
        yield node.name
    elif isinstance(node, Neg):
        yield from _collect_vars(node.operand)
    elif isinstance(node, BinOp):
        yield from _collect_vars(node.left)
        yield from _collect_vars(node.right)
    elif isinstance(node, Call):
        for a in node.args:
            yield from _collect_vars(a)


def free_vars(e: Expression) -> frozenset:
    return e.free_variables


# ---------------------------------------------------------------------------
# Evaluation


def _frag(e: Expression, node: Node) -> str:
    return e.text[node.start : node.end]


def evaluate(e: Expression, bindings: dict):
    """Evaluate ``e`` with the given variable bindings.

    Bindings map variable names to floats or numpy arrays.  Returns a float
    when the result is scalar, otherwise a numpy array.  Missing bindings
    raise :class:`EvalBindingError`; arithmetic domain violations raise
    :class:`ExprDomainError`.
    """
    missing = e.free_variables.difference(bindings)
    if missing:
        raise EvalBindingError(
            "missing binding(s) for: " + ", ".join(sorted(missing))
        )
    result = _eval(e, e.root, bindings)
    if np.ndim(result) == 0:
        return float(result)
    return result


def _eval(e: Expression, node: Node, b: dict):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return b[node.name]
    if isinstance(node, Neg):
        return -_eval(e, node.operand, b)
    if isinstance(node, BinOp):
        left = _eval(e, node.left, b)
        right = _eval(e, node.right, b)
        if node.op == "+":
            return np.add(left, right)
        if node.op == "-":
            return np.subtract(left, right)
        if node.op == "*":
            return np.multiply(left, right)
        if node.op == "/":
            if np.any(right == 0):
                raise ExprDomainError("division by zero", _frag(e, node))
            return np.divide(left, right)
        # '^'
        frac = np.not_equal(np.floor(right), right)
        if np.any(np.logical_and(np.less(left, 0), frac)):
            raise ExprDomainError(
                "fractional power of a negative base", _frag(e, node)
            )
        return np.power(left, right)
    if isinstance(node, Call):
        args = [_eval(e, a, b) for a in node.args]
        if node.func == "log":
            if np.any(args[0] <= 0):
                raise ExprDomainError("log of a nonpositive value", _frag(e, node))
            return np.log(args[0])
        if node.func == "sqrt":
            if np.any(args[0] < 0):
                raise ExprDomainError("sqrt of a negative value", _frag(e, node))
            return np.sqrt(args[0])
        if node.func == "sin":
            return np.sin(args[0])
        if node.func == "cos":
            return np.cos(args[0])
        if node.func == "exp":
            return np.exp(args[0])
        if node.func == "abs":
            return np.abs(args[0])
        if node.func == "min":
            return np.minimum(args[0], args[1])
        return np.maximum(args[0], args[1])
    raise TypeError(f"unknown node {node!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# Canonical printing (used by the parse/print round-trip property)


def _print(node: Node) -> str:
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{_print(node.operand)})"
    if isinstance(node, BinOp):
        return f"({_print(node.left)} {node.op} {_print(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(_print(a) for a in node.args)})"
    raise TypeError(f"unknown node {node!r}")  # pragma: no cover
