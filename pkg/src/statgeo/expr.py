"""Small expression language for defining component functions in files.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := base ('^' factor)?
    base   := number | ident | func '(' expr ')' | '(' expr ')' | '-' base

``func`` is one of exp, ln, sin, cos, sqrt, abs. Identifiers are the chart
coordinates ``x1 .. xn`` plus the named constants ``pi`` and ``e``.

Evaluation is vectorised over a trailing coordinate axis, so an Expression can
be handed an array of shape ``(..., n)`` and returns shape ``(...)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "Expression",
    "ExpressionError",
    "ParseError",
    "UnknownIdentifier",
    "ArityError",
    "DomainError",
    "parse_expression",
]

FUNCTIONS = ("exp", "ln", "sin", "cos", "sqrt", "abs")
CONSTANTS = {"pi": math.pi, "e": math.e}


class ExpressionError(Exception):
    """Base class for everything the expression layer raises."""


class ParseError(ExpressionError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnknownIdentifier(ParseError):
    pass


class ArityError(ExpressionError):
    pass


class DomainError(ExpressionError, ArithmeticError):
    pass


# AST ------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 0-based


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]


# Tokenizer ------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ParseError(f"unexpected character {src[bad]!r}", _byte_offset(src, bad))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), _byte_offset(src, start)))
        pos = m.end()
    tokens.append(("end", "", _byte_offset(src, len(src))))
    return tokens


def _byte_offset(src: str, index: int) -> int:
    return len(src[:index].encode("utf-8"))


class _Parser:
    def __init__(self, src: str, arity: int):
        self.tokens = _tokenize(src)
        self.i = 0
        self.arity = arity

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, off = self.take()
        if text != value or kind != "op":
            found = text or "end of input"
            raise ParseError(f"expected {value!r}, found {found!r}", off)

    def parse(self) -> Node:
        node = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {text!r}", off)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Node:
        node = self.base()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            node = BinOp("^", node, self.factor())
        return node

    def base(self) -> Node:
        kind, text, off = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "op" and text == "-":
            return Neg(self.base())
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                if self.peek()[1] == ",":
                    raise ArityError(f"{text}() takes exactly one argument")
                self.expect(")")
                return Call(text, arg)
            if text in CONSTANTS:
                return Num(CONSTANTS[text])
            m = re.fullmatch(r"x([1-9]\d*)", text)
            if m and int(m.group(1)) <= self.arity:
                return Var(int(m.group(1)) - 1)
            raise UnknownIdentifier(f"unknown identifier {text!r}", off)
        found = text or "end of input"
        raise ParseError(f"unexpected token {found!r}", off)


# Evaluation -----------------------------------------------------------------

def _eval(node: Node, X: np.ndarray):
    if isinstance(node, Num):
        return np.asarray(node.value, dtype=X.dtype)
    if isinstance(node, Var):
        return X[..., node.index]
    if isinstance(node, Neg):
        return -_eval(node.arg, X)
    if isinstance(node, Call):
        a = _eval(node.arg, X)
        f = node.func
        if f == "ln":
            if np.any(a <= 0):
                raise DomainError("ln of non-positive value")
            return np.log(a)
        if f == "sqrt":
            if np.any(a < 0):
                raise DomainError("sqrt of negative value")
            return np.sqrt(a)
        return {"exp": np.exp, "sin": np.sin, "cos": np.cos, "abs": np.abs}[f](a)
    left = _eval(node.left, X)
    right = _eval(node.right, X)
    op = node.op
    if op == "+":
        return left + right
    if op == "-":
        return left - right
    if op == "*":
        return left * right
    if op == "/":
        if np.any(right == 0):
            raise DomainError("division by zero")
        return left / right
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        out = np.power(left, right)
    if not np.all(np.isfinite(out)):
        raise DomainError("power produced a non-finite value")
    return out


def _free(node: Node, acc: set):
    if isinstance(node, Var):
        acc.add(node.index)
    elif isinstance(node, (Neg, Call)):
        _free(node.arg, acc)
    elif isinstance(node, BinOp):
        _free(node.left, acc)
        _free(node.right, acc)
    return acc


# Differentiation ------------------------------------------------------------

def _num(node: Node):
    return node.value if isinstance(node, Num) else None


def _add(a: Node, b: Node) -> Node:
    if _num(a) == 0:
        return b
    if _num(b) == 0:
        return a
    if _num(a) is not None and _num(b) is not None:
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def _sub(a: Node, b: Node) -> Node:
    if _num(b) == 0:
        return a
    if _num(a) == 0:
        return _neg(b)
    return BinOp("-", a, b)


def _neg(a: Node) -> Node:
    if _num(a) is not None:
        return Num(-a.value)
    return Neg(a)


def _mul(a: Node, b: Node) -> Node:
    if _num(a) == 0 or _num(b) == 0:
        return Num(0.0)
    if _num(a) == 1:
        return b
    if _num(b) == 1:
        return a
    if _num(a) is not None and _num(b) is not None:
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def _div(a: Node, b: Node) -> Node:
    if _num(a) == 0:
        return Num(0.0)
    if _num(b) == 1:
        return a
    return BinOp("/", a, b)


def _diff(node: Node, i: int) -> Node:
    if isinstance(node, Num):
        return Num(0.0)
    if isinstance(node, Var):
        return Num(1.0 if node.index == i else 0.0)
    if i not in _free(node, set()):
        return Num(0.0)
    if isinstance(node, Neg):
        return _neg(_diff(node.arg, i))
    if isinstance(node, Call):
        u, du = node.arg, _diff(node.arg, i)
        outer = {
            "exp": lambda: Call("exp", u),
            "ln": lambda: _div(Num(1.0), u),
            "sin": lambda: Call("cos", u),
            "cos": lambda: _neg(Call("sin", u)),
            "sqrt": lambda: _div(Num(0.5), Call("sqrt", u)),
            "abs": lambda: _div(u, Call("abs", u)),
        }[node.func]()
        return _mul(outer, du)
    a, b = node.left, node.right
    da, db = _diff(a, i), _diff(b, i)
    if node.op == "+":
        return _add(da, db)
    if node.op == "-":
        return _sub(da, db)
    if node.op == "*":
        return _add(_mul(da, b), _mul(a, db))
    if node.op == "/":
        return _div(_sub(_mul(da, b), _mul(a, db)), BinOp("^", b, Num(2.0)))
    # a^b
    if _num(b) is not None:
        return _mul(_mul(b, BinOp("^", a, Num(b.value - 1))), da)
    if i not in _free(a, set()):
        return _mul(_mul(node, Call("ln", a)), db)
    return _mul(node, _add(_mul(db, Call("ln", a)), _div(_mul(b, da), a)))


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}


def _show(node: Node) -> str:
    if isinstance(node, Num):
        v = node.value
        return repr(v) if v >= 0 else f"(-{repr(-v)})"
    if isinstance(node, Var):
        return f"x{node.index + 1}"
    if isinstance(node, Neg):
        return f"(-{_atom(node.arg)})"
    if isinstance(node, Call):
        return f"{node.func}({_show(node.arg)})"
    p = _PREC[node.op]
    left = _show(node.left)
    right = _show(node.right)
    if isinstance(node.left, BinOp) and (_PREC[node.left.op] < p or node.op == "^"):
        left = f"({left})"
    if isinstance(node.right, BinOp) and (
        _PREC[node.right.op] < p or (_PREC[node.right.op] == p and node.op != "^")
    ):
        right = f"({right})"
    return f"{left}{node.op}{right}"


def _atom(node: Node) -> str:
    s = _show(node)
    return s if isinstance(node, (Num, Var, Call, Neg)) else f"({s})"


class Expression:
    """A parsed expression over the coordinates of an ``arity``-dimensional chart."""

    def __init__(self, ast: Node, arity: int, source: str | None = None):
        self.ast = ast
        self.arity = arity
        self.source = source

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X)
        if not np.issubdtype(X.dtype, np.floating):
            X = X.astype(float)
        if X.shape[-1:] != (self.arity,):
            raise ArityError(f"expected points with {self.arity} coordinates, got shape {X.shape}")
        with np.errstate(over="ignore", invalid="ignore"):
            out = _eval(self.ast, X)
        out = np.broadcast_to(out, X.shape[:-1]).astype(X.dtype, copy=True)
        if not np.all(np.isfinite(out)):
            raise DomainError("expression evaluated to a non-finite value")
        return out

    @property
    def free_vars(self) -> set[int]:
        """0-based indices of the coordinates the expression depends on."""
        return _free(self.ast, set())

    @property
    def is_constant(self) -> bool:
        return not self.free_vars

    def diff(self, i: int) -> "Expression":
        """Exact partial derivative in the 0-based coordinate ``i``."""
        if not 0 <= i < self.arity:
            raise ArityError(f"no coordinate x{i + 1} in a {self.arity}-dimensional chart")
        return Expression(_diff(self.ast, i), self.arity)

    def __str__(self) -> str:
        return _show(self.ast)

    def __repr__(self) -> str:
        return f"Expression({str(self)!r}, arity={self.arity})"


def parse_expression(src: str, n: int) -> Expression:
    """Parse ``src`` into an Expression over coordinates ``x1..xn``.

    Raises ParseError (with a byte offset), UnknownIdentifier for variables
    outside ``x1..xn``, and ArityError for malformed calls.
    """
    if n < 1:
        raise ArityError("arity must be at least 1")
    return Expression(_Parser(src, n).parse(), n, source=src)
