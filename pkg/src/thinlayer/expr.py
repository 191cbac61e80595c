"""A small arithmetic language for coefficients, reactions and initial data.

Grammar (whitespace is insignificant)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("-" | "+") unary | power
    power   := atom ("^" unary)?          # right associative, binds tighter than unary minus
    atom    := NUMBER | NAME | NAME "(" expr ("," expr)* ")" | "(" expr ")"

Names are the variables ``t, y1, y2, x1, x2, z`` and the constants ``pi`` and
``e``. Functions: ``sin cos exp abs`` (one argument), ``min max`` (two).
Evaluation is vectorised over numpy arrays.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

VARIABLES = ("t", "y1", "y2", "x1", "x2", "z")
CONSTANTS = {"pi": math.pi, "e": math.e}
FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "abs": 1, "min": 2, "max": 2}

_NUMPY_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
    "min": np.minimum,
    "max": np.maximum,
}


class ExpressionError(ValueError):
    """Syntax or name error; ``column`` is 1-based within the expression text."""

    def __init__(self, message: str, column: int, text: str = ""):
        self.message = message
        self.column = column
        self.text = text
        super().__init__(f"{message} at column {column}")


# --- AST -----------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


# --- lexer ---------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # "num" | "name" | "op" | "end"
    text: str
    col: int  # 1-based


def tokenize(text: str) -> list[_Tok]:
    tokens = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionError(f"unexpected character {text[pos]!r}", pos + 1, text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append(_Tok(kind, m.group(kind), start + 1))
        pos = m.end()
        # reject things like "2x" or "1.5.3" where a number runs into a name/number
        if kind == "num" and pos < len(text) and (text[pos].isalnum() or text[pos] in "._"):
            raise ExpressionError(f"malformed number {text[start:pos + 1]!r}", start + 1, text)
    tokens.append(_Tok("end", "", len(text) + 1))
    return tokens


# --- parser --------------------------------------------------------------


class _Parser:
    def __init__(self, text: str, allowed: frozenset[str] | None):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0
        self.allowed = allowed

    @property
    def tok(self) -> _Tok:
        return self.tokens[self.i]

    def error(self, message, tok=None):
        tok = tok or self.tok
        raise ExpressionError(message, tok.col, self.text)

    def expect(self, op):
        if self.tok.kind == "op" and self.tok.text == op:
            self.i += 1
            return
        found = "end of input" if self.tok.kind == "end" else repr(self.tok.text)
        self.error(f"expected {op!r}, found {found}")

    def parse(self):
        if self.tok.kind == "end":
            self.error("empty expression")
        node = self.expr()
        if self.tok.kind != "end":
            self.error(f"unexpected {self.tok.text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            operand = self.unary()
            return Neg(operand) if op == "-" else operand
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.i += 1
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Num(float(tok.text))
        if tok.kind == "name":
            self.i += 1
            name = tok.text
            if self.tok.kind == "op" and self.tok.text == "(":
                if name not in FUNCTIONS:
                    self.error(f"unknown function {name!r}", tok)
                self.i += 1
                args = [self.expr()]
                while self.tok.kind == "op" and self.tok.text == ",":
                    self.i += 1
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[name]:
                    self.error(f"{name} takes {FUNCTIONS[name]} argument(s), got {len(args)}", tok)
                return Call(name, tuple(args))
            if name in FUNCTIONS:
                self.error(f"function {name!r} needs arguments", tok)
            if name in CONSTANTS:
                return Const(name)
            if name not in VARIABLES or (self.allowed is not None and name not in self.allowed):
                self.error(f"unknown variable {name!r}", tok)
            return Var(name)
        if tok.kind == "op" and tok.text == "(":
            self.i += 1
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "end":
            self.error("unexpected end of input")
        self.error(f"unexpected {tok.text!r}")


# --- printing ------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def to_source(node) -> str:
    """Print an AST so that parsing the result gives back the same AST."""
    return _print(node, 0)


def _print(node, ctx: int) -> str:
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, (Var, Const)):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({', '.join(_print(a, 0) for a in node.args)})"
    if isinstance(node, Neg):
        # unary minus sits between "*" and "^"
        s = "-" + _print(node.operand, 3)
        return f"({s})" if ctx > 2 else s
    if isinstance(node, BinOp):
        if node.op == "^":
            s = f"{_print(node.left, 5)}^{_print(node.right, 3)}"
            return f"({s})" if ctx > 4 else s
        p = _PREC[node.op]
        s = f"{_print(node.left, p)} {node.op} {_print(node.right, p + 1)}"
        return f"({s})" if ctx > p else s
    raise TypeError(f"not an expression node: {node!r}")


# --- expression object ---------------------------------------------------


def _free(node, acc):
    if isinstance(node, Var):
        acc.add(node.name)
    elif isinstance(node, Neg):
        _free(node.operand, acc)
    elif isinstance(node, BinOp):
        _free(node.left, acc)
        _free(node.right, acc)
    elif isinstance(node, Call):
        for a in node.args:
            _free(a, acc)
    return acc


def _evaluate(node, env, divisors):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Const):
        return CONSTANTS[node.name]
    if isinstance(node, Neg):
        return -_evaluate(node.operand, env, divisors)
    if isinstance(node, Call):
        return _NUMPY_FUNCS[node.func](*(_evaluate(a, env, divisors) for a in node.args))
    left = _evaluate(node.left, env, divisors)
    right = _evaluate(node.right, env, divisors)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if node.op == "/":
        if divisors is not None:
            divisors.append(float(np.min(np.abs(right))))
        return np.divide(left, right)
    return np.power(left, right)


@dataclass(frozen=True)
class Expression:
    source: str
    ast: object

    @property
    def variables(self) -> frozenset[str]:
        return frozenset(_free(self.ast, set()))

    def depends_on(self, *names) -> bool:
        return any(n in self.variables for n in names)

    def __call__(self, **bindings):
        return evaluate(self, bindings)

    def __str__(self):
        return self.source


def parse(text: str, allowed=None) -> Expression:
    """Parse ``text``; ``allowed`` restricts the variables that may appear."""
    allowed = None if allowed is None else frozenset(allowed)
    return Expression(text, _Parser(text, allowed).parse())


def evaluate(expr: Expression, bindings: dict):
    """Evaluate with numpy broadcasting; every free variable must be bound."""
    missing = sorted(expr.variables - set(bindings))
    if missing:
        raise KeyError(f"unbound variable(s) {', '.join(missing)} in {expr.source!r}")
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = _evaluate(expr.ast, bindings, None)
    return out if np.ndim(out) else float(out)


def min_abs_divisor(expr: Expression, bindings: dict) -> float:
    """Smallest divisor magnitude met while evaluating (``inf`` if no division)."""
    divisors: list[float] = []
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        _evaluate(expr.ast, bindings, divisors)
    return min(divisors, default=math.inf)
