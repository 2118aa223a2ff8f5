"""Small expression language for coefficient functions and closed-form solutions.

Expressions are in one variable (``r`` or ``t``) plus named parameters::

    >>> e = parse("r^l * log(r/eps)", var="r")
    >>> evaluate(e, 3.0, {"l": -2.0, "eps": 0.5})

Grammar (whitespace insignificant)::

    expr   := term (('+'|'-') term)*
    term   := unary (('*'|'/') unary)*
    unary  := ('-'|'+') unary | factor
    factor := base ('^' unary)?
    base   := number | ident | '(' expr ')' | func '(' expr (',' expr)? ')'

``^`` binds tighter than unary minus and is right-associative, so ``-2^2``
is ``-4`` and ``2^3^2`` is ``512``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Union

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Param",
    "Unary",
    "Binary",
    "ExprSyntaxError",
    "DomainError",
    "UnboundParameterError",
    "parse",
    "evaluate",
    "evaluate_array",
    "compile_scalar",
    "differentiate",
    "serialize",
    "parameters",
]

VARIABLES = ("r", "t")
UNARY_FUNCS = ("log", "exp", "sqrt", "abs", "sgn")
BINARY_FUNCS = ("pow", "min", "max")


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, offset: int, text: str = ""):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} at offset {offset}")


class DomainError(ArithmeticError):
    """Evaluation left the natural domain of a sub-expression."""

    def __init__(self, message: str, expr: "Expr | None" = None):
        self.expr = expr
        where = f" in '{serialize(expr)}'" if expr is not None else ""
        super().__init__(message + where)


class UnboundParameterError(KeyError):
    pass


# --------------------------------------------------------------------------- AST


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # neg, log, exp, sqrt, abs, sgn
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # + - * / ^ min max
    left: "Expr"
    right: "Expr"


Expr = Union[Const, Var, Param, Unary, Binary]


# ------------------------------------------------------------------------ parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {text[bad]!r}", bad, text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, var: str):
        self.text = text
        self.var = var
        self.other_vars = tuple(v for v in VARIABLES if v != var)
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, off = self.take()
        if val != value:
            found = "end of input" if kind == "end" else repr(val)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", off, self.text)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {val!r}", off, self.text)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            e = Binary(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            e = Binary(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self.peek()[1] == "-":
            self.take()
            return Unary("neg", self.unary())
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.factor()

    def factor(self) -> Expr:
        base = self.base()
        if self.peek()[1] == "^":
            self.take()
            return Binary("^", base, self.unary())
        return base

    def base(self) -> Expr:
        kind, val, off = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "ident":
            if self.peek()[1] == "(":
                return self.call(val, off)
            if val in UNARY_FUNCS or val in BINARY_FUNCS:
                raise ExprSyntaxError(f"function {val!r} needs an argument list", off, self.text)
            if val == self.var:
                return Var(val)
            if val in self.other_vars:
                raise ExprSyntaxError(
                    f"variable {val!r} used in an expression of {self.var!r}", off, self.text
                )
            return Param(val)
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"unexpected {found}", off, self.text)

    def call(self, name: str, off: int) -> Expr:
        if name not in UNARY_FUNCS and name not in BINARY_FUNCS:
            raise ExprSyntaxError(f"unknown function {name!r}", off, self.text)
        self.expect("(")
        first = self.expr()
        if name in BINARY_FUNCS:
            self.expect(",")
            second = self.expr()
            self.expect(")")
            return Binary("^" if name == "pow" else name, first, second)
        self.expect(")")
        return Unary(name, first)


def parse(text: str, var: str = "r") -> Expr:
    """Parse ``text`` into an expression tree in the variable ``var``."""
    if var not in VARIABLES:
        raise ValueError(f"variable must be one of {VARIABLES}, got {var!r}")
    return _Parser(text, var).parse()


# ------------------------------------------------------------------- serializing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _fmt_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def serialize(e: Expr) -> str:
    """Canonical text form; ``parse(serialize(e))`` reproduces ``e``."""
    return _ser(e)[0]


def _ser(e: Expr) -> tuple[str, int]:
    if isinstance(e, Const):
        s = _fmt_number(abs(e.value))
        if e.value < 0 or math.copysign(1.0, e.value) < 0:
            return f"(-{s})", 5
        return s, 5
    if isinstance(e, (Var, Param)):
        return e.name, 5
    if isinstance(e, Unary):
        inner, _ = _ser(e.arg)
        if e.op == "neg":
            s, p = _ser(e.arg)
            if p < _PREC["neg"]:
                s = f"({s})"
            return f"-{s}", _PREC["neg"]
        return f"{e.op}({inner})", 5
    if e.op in ("min", "max"):
        return f"{e.op}({serialize(e.left)}, {serialize(e.right)})", 5
    prec = _PREC[e.op]
    ls, lp = _ser(e.left)
    rs, rp = _ser(e.right)
    if e.op == "^":
        # right-associative; the exponent may be a bare unary minus
        if lp <= prec:
            ls = f"({ls})"
        if rp < _PREC["neg"]:
            rs = f"({rs})"
        return f"{ls}^{rs}", prec
    if lp < prec:
        ls = f"({ls})"
    if rp <= prec:
        rs = f"({rs})"
    return f"{ls} {e.op} {rs}", prec


def parameters(e: Expr) -> set[str]:
    if isinstance(e, Param):
        return {e.name}
    if isinstance(e, Unary):
        return parameters(e.arg)
    if isinstance(e, Binary):
        return parameters(e.left) | parameters(e.right)
    return set()


def _depends_on_var(e: Expr) -> bool:
    if isinstance(e, Var):
        return True
    if isinstance(e, Unary):
        return _depends_on_var(e.arg)
    if isinstance(e, Binary):
        return _depends_on_var(e.left) or _depends_on_var(e.right)
    return False


# -------------------------------------------------------------------- evaluation

Number = Union[float, np.ndarray]


def _bind(e: Expr, params: Mapping[str, float]) -> dict[str, float]:
    missing = sorted(parameters(e) - set(params))
    if missing:
        raise UnboundParameterError(f"unbound parameter(s): {', '.join(missing)}")
    return {k: float(v) for k, v in params.items()}


def _is_integer(y: np.ndarray) -> np.ndarray:
    return np.isfinite(y) & (np.floor(y) == y)


def _build_array(e: Expr, p: dict[str, float]) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(e, Const):
        v = e.value
        return lambda x: np.full_like(x, v)
    if isinstance(e, Var):
        return lambda x: x
    if isinstance(e, Param):
        v = p[e.name]
        return lambda x: np.full_like(x, v)
    if isinstance(e, Unary):
        f = _build_array(e.arg, p)
        op = e.op

        def un(x, f=f, op=op, e=e):
            a = f(x)
            if op == "neg":
                return -a
            if op == "abs":
                return np.abs(a)
            if op == "exp":
                with np.errstate(over="raise"):
                    try:
                        return np.exp(a)
                    except FloatingPointError:
                        raise DomainError("exp overflow", e) from None
            if op == "log":
                if np.any(a <= 0):
                    raise DomainError("log of non-positive value", e)
                return np.log(a)
            if op == "sqrt":
                if np.any(a < 0):
                    raise DomainError("sqrt of negative value", e)
                return np.sqrt(a)
            if op == "sgn":
                if np.any(a == 0):
                    raise DomainError("not differentiable where the argument of abs vanishes", e)
                return np.sign(a)
            raise AssertionError(op)

        return un
    fl = _build_array(e.left, p)
    fr = _build_array(e.right, p)
    op = e.op

    def bi(x, fl=fl, fr=fr, op=op, e=e):
        a = fl(x)
        b = fr(x)
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if np.any(b == 0):
                raise DomainError("division by zero", e)
            return a / b
        if op == "min":
            return np.minimum(a, b)
        if op == "max":
            return np.maximum(a, b)
        # power
        if np.any((a == 0) & (b < 0)):
            raise DomainError("0 raised to a negative power", e)
        if np.any((a < 0) & ~_is_integer(b)):
            raise DomainError("negative base with non-integer exponent", e)
        with np.errstate(over="ignore"):
            out = np.power(a, b)
        if not np.all(np.isfinite(out)):
            raise DomainError("power overflow", e)
        return out

    return bi


def evaluate_array(e: Expr, x, params: Mapping[str, float] | None = None) -> np.ndarray:
    """Vectorised evaluation on an array of abscissae."""
    p = _bind(e, params or {})
    xa = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return _build_array(e, p)(xa.copy())


def evaluate(e: Expr, x: float, params: Mapping[str, float] | None = None) -> float:
    return float(compile_scalar(e, params)(float(x)))


def compile_scalar(e: Expr, params: Mapping[str, float] | None = None) -> Callable[[float], float]:
    """Compile to a plain-float closure (used in ODE right-hand sides)."""
    p = _bind(e, params or {})
    return _build_scalar(e, p)


def _build_scalar(e: Expr, p: dict[str, float]) -> Callable[[float], float]:
    if isinstance(e, Const):
        v = e.value
        return lambda x: v
    if isinstance(e, Var):
        return lambda x: x
    if isinstance(e, Param):
        v = p[e.name]
        return lambda x: v
    if isinstance(e, Unary):
        f = _build_scalar(e.arg, p)
        op = e.op
        if op == "neg":
            return lambda x: -f(x)
        if op == "abs":
            return lambda x: abs(f(x))

        def un(x, f=f, op=op, e=e):
            a = f(x)
            if op == "exp":
                try:
                    return math.exp(a)
                except OverflowError:
                    raise DomainError("exp overflow", e) from None
            if op == "log":
                if a <= 0:
                    raise DomainError("log of non-positive value", e)
                return math.log(a)
            if op == "sqrt":
                if a < 0:
                    raise DomainError("sqrt of negative value", e)
                return math.sqrt(a)
            if a == 0:
                raise DomainError("not differentiable where the argument of abs vanishes", e)
            return math.copysign(1.0, a)

        return un
    fl = _build_scalar(e.left, p)
    fr = _build_scalar(e.right, p)
    op = e.op
    if op == "+":
        return lambda x: fl(x) + fr(x)
    if op == "-":
        return lambda x: fl(x) - fr(x)
    if op == "*":
        return lambda x: fl(x) * fr(x)
    if op == "min":
        return lambda x: min(fl(x), fr(x))
    if op == "max":
        return lambda x: max(fl(x), fr(x))
    if op == "/":

        def div(x):
            b = fr(x)
            if b == 0:
                raise DomainError("division by zero", e)
            return fl(x) / b

        return div

    def pw(x):
        a = fl(x)
        b = fr(x)
        if a == 0:
            if b < 0:
                raise DomainError("0 raised to a negative power", e)
            return 1.0 if b == 0 else 0.0
        if a < 0 and b != math.floor(b):
            raise DomainError("negative base with non-integer exponent", e)
        try:
            return math.pow(a, b)
        except OverflowError:
            raise DomainError("power overflow", e) from None

    return pw


# --------------------------------------------------------------- differentiation


def _c(v: float) -> Const:
    return Const(float(v))


def _is_const(e: Expr, v: float | None = None) -> bool:
    return isinstance(e, Const) and (v is None or e.value == v)


def _add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0):
        return b
    if _is_const(b, 0):
        return a
    if _is_const(a) and _is_const(b):
        return _c(a.value + b.value)
    return Binary("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0):
        return a
    if _is_const(a, 0):
        return _neg(b)
    if _is_const(a) and _is_const(b):
        return _c(a.value - b.value)
    return Binary("-", a, b)


def _neg(a: Expr) -> Expr:
    if _is_const(a):
        return _c(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def _mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0) or _is_const(b, 0):
        return _c(0)
    if _is_const(a, 1):
        return b
    if _is_const(b, 1):
        return a
    if _is_const(a) and _is_const(b):
        return _c(a.value * b.value)
    return Binary("*", a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0):
        return _c(0)
    if _is_const(b, 1):
        return a
    return Binary("/", a, b)


def _pow(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 1):
        return a
    if _is_const(b, 0):
        return _c(1)
    return Binary("^", a, b)


def _d(e: Expr) -> Expr:
    if isinstance(e, (Const, Param)):
        return _c(0)
    if isinstance(e, Var):
        return _c(1)
    if isinstance(e, Unary):
        u, du = e.arg, _d(e.arg)
        if _is_const(du, 0):
            return _c(0)
        if e.op == "neg":
            return _neg(du)
        if e.op == "log":
            return _div(du, u)
        if e.op == "exp":
            return _mul(e, du)
        if e.op == "sqrt":
            return _div(du, _mul(_c(2), e))
        if e.op == "abs":
            return _mul(Unary("sgn", u), du)
        if e.op == "sgn":
            # zero almost everywhere; the vanishing set is flagged on evaluation
            return _mul(_c(0), Unary("sgn", u))
        raise AssertionError(e.op)
    a, b = e.left, e.right
    da, db = _d(a), _d(b)
    if e.op == "+":
        return _add(da, db)
    if e.op == "-":
        return _sub(da, db)
    if e.op == "*":
        return _add(_mul(da, b), _mul(a, db))
    if e.op == "/":
        return _div(_sub(_mul(da, b), _mul(a, db)), _pow(b, _c(2)))
    if e.op in ("min", "max"):
        half_sum = _div(_add(da, db), _c(2))
        half_diff = _div(_mul(Unary("sgn", _sub(a, b)), _sub(da, db)), _c(2))
        return _sub(half_sum, half_diff) if e.op == "min" else _add(half_sum, half_diff)
    # power
    if not _depends_on_var(b):
        if _is_const(da, 0):
            return _c(0)
        exponent = _c(b.value - 1) if _is_const(b) else _sub(b, _c(1))
        return _mul(_mul(b, _pow(a, exponent)), da)
    return _mul(e, _add(_mul(db, Unary("log", a)), _div(_mul(b, da), a)))


def differentiate(e: Expr, order: int = 1) -> Expr:
    """Exact symbolic derivative of the given order (at most 4)."""
    if order < 0 or order > 4 or int(order) != order:
        raise ValueError("order must be an integer in [0, 4]")
    for _ in range(order):
        e = _d(e)
    return e
