"""Small arithmetic expression DSL with exact symbolic differentiation.

Grammar (standard precedence, ``^`` binds tightest, then unary minus,
then ``*``/``/``, then ``+``/``-``; same-precedence binary operators are
left-associative, ``^`` is right-associative)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-' factor | power
    power  := atom ('^' factor)?
    atom   := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'

``pi`` and ``e`` are folded to constants at parse time.  Supported
functions: sin, cos, sinh, cosh, exp, log, sqrt, atan, abs (one
argument) and atan2 (two arguments).

Expressions are immutable trees; parsing, evaluation, differentiation
and printing are pure functions of them, so they can be shared freely
across threads and processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Neg",
    "Fun",
    "Bin",
    "ExprError",
    "ParseError",
    "DomainError",
    "parse",
    "evaluate",
    "differentiate",
    "to_source",
    "free_variables",
    "compile_fn",
]

FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "sinh": 1,
    "cosh": 1,
    "exp": 1,
    "log": 1,
    "sqrt": 1,
    "atan": 1,
    "abs": 1,
    "atan2": 2,
}

CONSTANTS = {"pi": math.pi, "e": math.e}


class ExprError(ValueError):
    """Base class for everything the DSL can complain about."""


class ParseError(ExprError):
    """Syntax/validation failure; ``offset`` is a 0-based byte offset.

    ``expected`` lists the token kinds that would have been accepted at
    that position (empty for lexical errors).
    """

    def __init__(self, message: str, offset: int, expected: Iterable[str] = ()):
        self.offset = offset
        self.expected = tuple(expected)
        if self.expected:
            message = f"{message} at offset {offset} (expected {', '.join(self.expected)})"
        else:
            message = f"{message} at offset {offset}"
        super().__init__(message)


class DomainError(ExprError):
    """Evaluation hit a domain violation (log of non-positive, sqrt of
    negative, division by zero, non-finite result).  Carries the
    offending sub-expression and the evaluation point."""

    def __init__(self, message: str, node: "Expr", point: Mapping[str, float]):
        self.node = node
        self.point = dict(point)
        super().__init__(f"{message} in '{to_source(node)}' at point {self.point}")


# --- AST ----------------------------------------------------------------


class Expr:
    __slots__ = ()

    def __str__(self) -> str:
        return to_source(self)


@dataclass(frozen=True, slots=True)
class Const(Expr):
    value: float


@dataclass(frozen=True, slots=True)
class Var(Expr):
    name: str


@dataclass(frozen=True, slots=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True, slots=True)
class Fun(Expr):
    name: str
    args: tuple


@dataclass(frozen=True, slots=True)
class Bin(Expr):
    op: str
    lhs: Expr
    rhs: Expr


ZERO = Const(0.0)
ONE = Const(1.0)


# --- tokenizer ----------------------------------------------------------

_OPS = set("+-*/^(),")


def _tokenize(source: str):
    tokens = []
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c in " \t\r\n":
            i += 1
            continue
        if c in _OPS:
            tokens.append((c, c, i))
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and (source[j].isdigit() or source[j] == "."):
                j += 1
            if source[i:j].count(".") > 1:
                raise ParseError("malformed number", i)
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k >= n or not source[k].isdigit():
                    raise ParseError("malformed exponent", j)
                while k < n and source[k].isdigit():
                    k += 1
                j = k
            tokens.append(("num", source[i:j], i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("ident", source[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {c!r}", i)
    tokens.append(("end", "", n))
    return tokens


# --- parser -------------------------------------------------------------


class _Parser:
    def __init__(self, source: str, variables: Sequence[str]):
        self.source = source
        self.variables = tuple(variables)
        self.tokens = _tokenize(source)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str):
        tok = self.peek()
        if tok[0] != kind:
            raise ParseError(f"unexpected {tok[0]!r}", tok[2], [repr(kind)])
        return self.advance()

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"trailing input {tok[1]!r}", tok[2], ["end of input"])
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.advance()[0]
            rhs = self.term()
            e = _add(e, rhs) if op == "+" else _sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[0] in ("*", "/"):
            op = self.advance()[0]
            rhs = self.factor()
            e = _mul(e, rhs) if op == "*" else _div(e, rhs)
        return e

    def factor(self) -> Expr:
        if self.peek()[0] == "-":
            self.advance()
            return _neg(self.factor())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "^":
            self.advance()
            return _pow(base, self.factor())
        return base

    def atom(self) -> Expr:
        tok = self.peek()
        kind, text, off = tok
        if kind == "num":
            self.advance()
            return Const(float(text))
        if kind == "(":
            self.advance()
            e = self.expr()
            self.expect(")")
            return e
        if kind == "ident":
            self.advance()
            if self.peek()[0] == "(":
                if text not in FUNCTIONS:
                    raise ParseError(f"unknown function {text!r}", off)
                self.advance()
                args = [self.expr()]
                while self.peek()[0] == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[text]:
                    raise ParseError(
                        f"{text} takes {FUNCTIONS[text]} argument(s), got {len(args)}", off
                    )
                return Fun(text, tuple(args))
            if text in CONSTANTS:
                return Const(CONSTANTS[text])
            if text in self.variables:
                return Var(text)
            raise ParseError(f"unknown identifier {text!r}", off)
        raise ParseError(
            f"unexpected {kind!r}", off, ["number", "identifier", "'('", "'-'"]
        )


def parse(source: str, variables: Sequence[str] = ("x", "y")) -> Expr:
    """Parse ``source`` into an expression over the given variables."""
    if not isinstance(source, str) or not source.strip():
        raise ParseError("empty expression", 0)
    return _Parser(source, variables).parse()


# --- simplifying constructors -------------------------------------------
# Peephole folding only (constants, identities with 0 and 1).  This is not
# a simplifier; it keeps derivative trees from exploding.


def _is_const(e: Expr, v: float | None = None) -> bool:
    return isinstance(e, Const) and (v is None or e.value == v)


def _add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if isinstance(b, Neg):
        return _sub(a, b.arg)
    return Bin("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is_const(a, 0.0):
        return _neg(b)
    if isinstance(b, Neg):
        return _add(a, b.arg)
    return Bin("-", a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return Bin("*", a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    return Bin("/", a, b)


def _pow(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 1.0):
        return a
    if _is_const(b, 0.0):
        return ONE
    if isinstance(a, Const) and isinstance(b, Const):
        try:
            v = a.value ** b.value
        except (ValueError, OverflowError):
            return Bin("^", a, b)
        if isinstance(v, float) and math.isfinite(v):
            return Const(v)
    return Bin("^", a, b)


def _neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


# --- evaluation ---------------------------------------------------------


def _as_env(point, variables: Sequence[str]) -> dict:
    if isinstance(point, Mapping):
        return dict(point)
    values = tuple(point) if isinstance(point, (tuple, list, np.ndarray)) else (point,)
    if len(values) != len(variables):
        raise ExprError(
            f"point has {len(values)} coordinates for variables {tuple(variables)}"
        )
    return dict(zip(variables, (float(v) for v in values)))


def evaluate(expr: Expr, point, variables: Sequence[str] = ("x", "y")) -> float:
    """IEEE-double evaluation with explicit domain-violation reporting.

    ``point`` is either a mapping name -> value or a sequence matched
    positionally against ``variables``.
    """
    env = _as_env(point, variables)

    def ev(e: Expr) -> float:
        if isinstance(e, Const):
            return e.value
        if isinstance(e, Var):
            try:
                return float(env[e.name])
            except KeyError:
                raise ExprError(f"no value supplied for variable {e.name!r}") from None
        if isinstance(e, Neg):
            return -ev(e.arg)
        if isinstance(e, Bin):
            a, b = ev(e.lhs), ev(e.rhs)
            if e.op == "+":
                v = a + b
            elif e.op == "-":
                v = a - b
            elif e.op == "*":
                v = a * b
            elif e.op == "/":
                if b == 0.0:
                    raise DomainError("division by zero", e, env)
                v = a / b
            else:  # ^
                try:
                    v = math.pow(a, b)
                except (ValueError, OverflowError):
                    raise DomainError("invalid power", e, env) from None
            if not math.isfinite(v):
                raise DomainError("non-finite result", e, env)
            return v
        assert isinstance(e, Fun)
        args = [ev(a) for a in e.args]
        name = e.name
        if name == "log":
            if args[0] <= 0.0:
                raise DomainError("log of non-positive value", e, env)
            return math.log(args[0])
        if name == "sqrt":
            if args[0] < 0.0:
                raise DomainError("sqrt of negative value", e, env)
            return math.sqrt(args[0])
        if name == "atan2":
            return math.atan2(args[0], args[1])
        if name == "abs":
            return abs(args[0])
        try:
            v = getattr(math, name)(args[0])
        except (ValueError, OverflowError):
            raise DomainError(f"{name} domain violation", e, env) from None
        if not math.isfinite(v):
            raise DomainError("non-finite result", e, env)
        return v

    return ev(expr)


# --- differentiation ----------------------------------------------------


def differentiate(expr: Expr, var: str) -> Expr:
    """Exact symbolic partial derivative; compose for higher orders."""

    def d(e: Expr) -> Expr:
        if isinstance(e, Const):
            return ZERO
        if isinstance(e, Var):
            return ONE if e.name == var else ZERO
        if isinstance(e, Neg):
            return _neg(d(e.arg))
        if isinstance(e, Bin):
            u, v = e.lhs, e.rhs
            du, dv = d(u), d(v)
            if e.op == "+":
                return _add(du, dv)
            if e.op == "-":
                return _sub(du, dv)
            if e.op == "*":
                return _add(_mul(du, v), _mul(u, dv))
            if e.op == "/":
                return _div(_sub(_mul(du, v), _mul(u, dv)), _mul(v, v))
            # u^v
            if isinstance(v, Const):
                return _mul(_mul(v, _pow(u, Const(v.value - 1.0))), du)
            # general exponent: u^v * (dv*log(u) + v*du/u)
            return _mul(
                e,
                _add(_mul(dv, Fun("log", (u,))), _div(_mul(v, du), u)),
            )
        assert isinstance(e, Fun)
        if e.name == "atan2":
            u, v = e.args
            du, dv = d(u), d(v)
            num = _sub(_mul(du, v), _mul(u, dv))
            den = _add(_mul(u, u), _mul(v, v))
            return _div(num, den)
        (u,) = e.args
        du = d(u)
        if _is_const(du, 0.0):
            return ZERO
        if e.name == "sin":
            return _mul(Fun("cos", (u,)), du)
        if e.name == "cos":
            return _neg(_mul(Fun("sin", (u,)), du))
        if e.name == "sinh":
            return _mul(Fun("cosh", (u,)), du)
        if e.name == "cosh":
            return _mul(Fun("sinh", (u,)), du)
        if e.name == "exp":
            return _mul(e, du)
        if e.name == "log":
            return _div(du, u)
        if e.name == "sqrt":
            return _div(du, _mul(Const(2.0), e))
        if e.name == "atan":
            return _div(du, _add(ONE, _mul(u, u)))
        if e.name == "abs":
            # d|u| = u*du/|u|, undefined at u = 0
            return _div(_mul(u, du), e)
        raise ExprError(f"no derivative rule for {e.name}")

    return d(expr)


def free_variables(expr: Expr) -> set:
    out: set = set()
    stack = [expr]
    while stack:
        e = stack.pop()
        if isinstance(e, Var):
            out.add(e.name)
        elif isinstance(e, Neg):
            stack.append(e.arg)
        elif isinstance(e, Bin):
            stack.extend((e.lhs, e.rhs))
        elif isinstance(e, Fun):
            stack.extend(e.args)
    return out


# --- printing -----------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_source(expr: Expr) -> str:
    """Render with minimal parentheses; parse(to_source(e)) == e up to
    constant formatting (floats printed via repr round-trip exactly)."""

    def render(e: Expr, parent_prec: int, right_side: bool) -> str:
        if isinstance(e, Const):
            if e.value < 0 or (e.value == 0 and math.copysign(1.0, e.value) < 0):
                s = repr(e.value)
                return f"({s})" if parent_prec > 1 else s
            return repr(e.value)
        if isinstance(e, Var):
            return e.name
        if isinstance(e, Fun):
            args = ", ".join(render(a, 0, False) for a in e.args)
            return f"{e.name}({args})"
        if isinstance(e, Neg):
            inner = render(e.arg, _PREC["neg"], False)
            s = f"-{inner}"
            return f"({s})" if parent_prec > _PREC["neg"] or (parent_prec == _PREC["neg"] and right_side) else s
        assert isinstance(e, Bin)
        prec = _PREC[e.op]
        if e.op == "^":
            # right-associative
            s = f"{render(e.lhs, prec + 1, False)}^{render(e.rhs, prec, True)}"
        else:
            s = f"{render(e.lhs, prec, False)} {e.op} {render(e.rhs, prec + 1, True)}"
        if prec < parent_prec or (prec == parent_prec and right_side):
            return f"({s})"
        return s

    return render(expr, 0, False)


# --- vectorized compilation ----------------------------------------------

_NP_FUN = {
    "sin": np.sin,
    "cos": np.cos,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "atan": np.arctan,
    "abs": np.abs,
}


def compile_fn(expr: Expr, variables: Sequence[str] = ("x", "y")):
    """Compile to a numpy-vectorized callable ``f(*coords) -> ndarray``.

    Domain violations surface as nan/inf in the output (callers that
    need diagnosis use :func:`evaluate` on the offending point).
    """
    names = tuple(variables)
    index = {n: i for i, n in enumerate(names)}

    def build(e: Expr):
        if isinstance(e, Const):
            v = e.value
            return lambda cols: v
        if isinstance(e, Var):
            if e.name not in index:
                raise ExprError(f"variable {e.name!r} not among {names}")
            i = index[e.name]
            return lambda cols: cols[i]
        if isinstance(e, Neg):
            f = build(e.arg)
            return lambda cols: -f(cols)
        if isinstance(e, Bin):
            fa, fb = build(e.lhs), build(e.rhs)
            op = e.op
            if op == "+":
                return lambda cols: fa(cols) + fb(cols)
            if op == "-":
                return lambda cols: fa(cols) - fb(cols)
            if op == "*":
                return lambda cols: fa(cols) * fb(cols)
            if op == "/":
                return lambda cols: fa(cols) / fb(cols)
            return lambda cols: np.power(fa(cols), fb(cols))
        assert isinstance(e, Fun)
        if e.name == "atan2":
            fa, fb = build(e.args[0]), build(e.args[1])
            return lambda cols: np.arctan2(fa(cols), fb(cols))
        f = build(e.args[0])
        g = _NP_FUN[e.name]
        return lambda cols: g(f(cols))

    body = build(expr)

    def call(*coords):
        if len(coords) != len(names):
            raise ExprError(f"expected {len(names)} coordinate arrays, got {len(coords)}")
        cols = tuple(np.asarray(c, dtype=float) for c in coords)
        shape = np.broadcast_shapes(*(c.shape for c in cols)) if cols else ()
        with np.errstate(all="ignore"):
            out = body(cols)
        out = np.asarray(out, dtype=float)
        if out.shape != shape:
            out = np.broadcast_to(out, shape).copy()
        return out

    return call
