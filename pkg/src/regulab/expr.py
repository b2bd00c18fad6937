"""Scalar expression language used to declare vector fields and output maps.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom (('^' | '**') INT)*
    atom   := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'

Variables belong to the reserved families ``w1.., x1.., c1.., u1.., e1..,
y1..`` plus the scalar ``t``.  Functions are ``sin``, ``cos``, ``exp``,
``tanh`` and ``abs``; the latter is the smooth surrogate
``sqrt(z**2 + ABS_SIGMA**2)``.

Trees are immutable and may share subtrees (they are DAGs after
substitution or differentiation); every traversal below memoizes on node
identity so shared structure is visited once.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "ABS_SIGMA", "Expr", "Const", "Var", "Unary", "Binary", "Pow",
    "ExprError", "ParseError", "UnboundVariableError", "DomainError",
    "parse", "to_str", "evaluate", "differentiate", "substitute",
    "free_vars", "compile_scalar", "compile_vectorized",
    "const", "var", "add", "sub", "mul", "div", "neg", "linear_form",
    "is_valid_name",
]

ABS_SIGMA = 1e-9

UNARY_FUNCS = ("sin", "cos", "exp", "tanh", "abs")
BINARY_OPS = ("add", "sub", "mul", "div")
_OP_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/"}
_VAR_RE = re.compile(r"^(?:[wxcuey][1-9][0-9]*|t)$")


class ExprError(ValueError):
    """Base class for expression errors."""


class ParseError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnboundVariableError(ExprError):
    pass


class DomainError(ExprError, ArithmeticError):
    pass


def is_valid_name(name: str) -> bool:
    return bool(_VAR_RE.match(name))


# ---------------------------------------------------------------------------
# nodes

class Expr:
    """Base class of all expression nodes."""

    __slots__ = ()

    def __str__(self) -> str:
        return to_str(self)

    # operator sugar for building trees in code
    def __add__(self, other): return add(self, _lift(other))
    def __radd__(self, other): return add(_lift(other), self)
    def __sub__(self, other): return sub(self, _lift(other))
    def __rsub__(self, other): return sub(_lift(other), self)
    def __mul__(self, other): return mul(self, _lift(other))
    def __rmul__(self, other): return mul(_lift(other), self)
    def __truediv__(self, other): return div(self, _lift(other))
    def __neg__(self): return neg(self)

    def __pow__(self, n: int):
        return Pow(self, n)


@dataclass(frozen=True, eq=True, repr=False)
class Const(Expr):
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ExprError(f"non-finite constant {self.value!r}")
        object.__setattr__(self, "value", float(self.value))

    def __repr__(self):
        return f"Const({self.value!r})"


@dataclass(frozen=True, eq=True, repr=False)
class Var(Expr):
    name: str

    def __post_init__(self):
        if not is_valid_name(self.name):
            raise ExprError(f"unknown variable family: {self.name!r}")

    def __repr__(self):
        return f"Var({self.name!r})"


@dataclass(frozen=True, eq=True, repr=False)
class Unary(Expr):
    op: str
    arg: Expr

    def __post_init__(self):
        if self.op not in UNARY_FUNCS and self.op != "neg":
            raise ExprError(f"unknown function name: {self.op!r}")

    def __repr__(self):
        return f"Unary({self.op!r}, {self.arg!r})"


@dataclass(frozen=True, eq=True, repr=False)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise ExprError(f"unknown binary operator: {self.op!r}")

    def __repr__(self):
        return f"Binary({self.op!r}, {self.left!r}, {self.right!r})"


@dataclass(frozen=True, eq=True, repr=False)
class Pow(Expr):
    base: Expr
    exponent: int

    def __post_init__(self):
        if isinstance(self.exponent, bool) or not isinstance(self.exponent, (int, np.integer)) \
                or self.exponent < 0:
            raise ExprError("pow exponent must be a non-negative integer literal")
        object.__setattr__(self, "exponent", int(self.exponent))

    def __repr__(self):
        return f"Pow({self.base!r}, {self.exponent})"


ZERO = Const(0.0)
ONE = Const(1.0)


def _lift(x) -> Expr:
    if isinstance(x, Expr):
        return x
    return Const(float(x))


# ---------------------------------------------------------------------------
# light-weight constructors (prune identities only, no algebraic rewriting)

def const(value: float) -> Const:
    return Const(float(value))


def var(name: str) -> Var:
    return Var(name)


def _is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Binary("add", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return Binary("sub", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Binary("mul", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 1.0):
        return a
    return Binary("div", a, b)


def neg(a: Expr) -> Expr:
    if _is_const(a, 0.0):
        return ZERO
    return Unary("neg", a)


def linear_form(coeffs: Sequence[float], names: Sequence[str],
                offset: float = 0.0) -> Expr:
    """Build ``offset + sum(coeffs[i] * names[i])`` skipping zero terms."""
    out: Expr = ZERO
    for a, name in zip(coeffs, names):
        a = float(a)
        if a == 0.0:
            continue
        term = Var(name) if a == 1.0 else Binary("mul", Const(a), Var(name))
        out = add(out, term)
    if offset != 0.0:
        out = add(out, Const(offset))
    return out


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),])"
    r")"
)


@dataclass
class _Tok:
    kind: str   # 'num', 'name', 'op', 'end'
    text: str
    offset: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    raw = text.encode("utf-8")

    def boff(i: int) -> int:
        return len(text[:i].encode("utf-8"))

    while pos < len(text):
        if text[pos:].strip() == "":
            pos = len(text)
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ParseError(f"unexpected character {text[start]!r}", boff(start))
        kind = m.lastgroup
        start = m.start(kind)
        toks.append(_Tok(kind, m.group(kind), boff(start)))
        pos = m.end()
    toks.append(_Tok("end", "", len(raw)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self, k: int = 0) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> _Tok:
        tok = self.peek()
        if tok.kind != "op" or tok.text != text:
            what = "end of input" if tok.kind == "end" else repr(tok.text)
            raise ParseError(f"expected {text!r}, found {what}", tok.offset)
        return self.take()

    def parse(self) -> Expr:
        if self.peek().kind == "end":
            raise ParseError("empty expression", 0)
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ParseError(f"unexpected token {tok.text!r}", tok.offset)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = "add" if self.take().text == "+" else "sub"
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = "mul" if self.take().text == "*" else "div"
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.take()
            nxt, after = self.peek(), self.peek(1)
            # '-<number>' is a negative literal unless it is a pow base
            if nxt.kind == "num" and not (after.kind == "op" and after.text in ("^", "**")):
                self.take()
                return Const(-float(nxt.text))
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Expr:
        node = self.atom()
        while self.peek().kind == "op" and self.peek().text in ("^", "**"):
            self.take()
            tok = self.peek()
            if tok.kind != "num" or not tok.text.isdigit():
                raise ParseError("pow exponent must be a non-negative integer literal",
                                 tok.offset)
            self.take()
            node = Pow(node, int(tok.text))
        return node

    def atom(self) -> Expr:
        tok = self.peek()
        if tok.kind == "num":
            self.take()
            return Const(float(tok.text))
        if tok.kind == "name":
            self.take()
            if self.peek().kind == "op" and self.peek().text == "(":
                if tok.text not in UNARY_FUNCS:
                    raise ParseError(f"unknown function name {tok.text!r}", tok.offset)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Unary(tok.text, arg)
            if tok.text in UNARY_FUNCS:
                raise ParseError(f"function {tok.text!r} requires an argument", tok.offset)
            if not is_valid_name(tok.text):
                raise ParseError(f"unknown variable family {tok.text!r}", tok.offset)
            return Var(tok.text)
        if tok.kind == "op" and tok.text == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ParseError(f"unexpected {what}", tok.offset)


def parse(text: str) -> Expr:
    """Parse ``text`` into an expression tree.

    Raises
    ------
    ParseError
        With the byte offset of the offending token.
    """
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# printing

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2}
_PREC_UNARY = 3
_PREC_POW = 4
_PREC_ATOM = 5


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return _PREC_UNARY
    if isinstance(e, Pow):
        return _PREC_POW
    if isinstance(e, Const) and e.value < 0:
        return _PREC_UNARY
    return _PREC_ATOM


def _fmt_const(v: float) -> str:
    s = repr(v)
    return f"({s})" if v < 0 or s.startswith("-") else s


def to_str(e: Expr) -> str:
    """Render ``e`` as text that parses back to the same tree."""
    memo: dict[int, str] = {}

    def go(n: Expr) -> str:
        key = id(n)
        if key in memo:
            return memo[key]
        if isinstance(n, Const):
            s = _fmt_const(n.value)
        elif isinstance(n, Var):
            s = n.name
        elif isinstance(n, Unary):
            if n.op == "neg":
                inner = go(n.arg)
                # a bare literal after '-' would fold into a negative constant
                if isinstance(n.arg, Const):
                    inner = f"({n.arg.value!r})"
                elif _prec(n.arg) < _PREC_UNARY:
                    inner = f"({inner})"
                s = f"-{inner}"
            else:
                s = f"{n.op}({go(n.arg)})"
        elif isinstance(n, Pow):
            base = go(n.base)
            if _prec(n.base) <= _PREC_POW and not (isinstance(n.base, Const) and n.base.value < 0):
                base = f"({base})"
            s = f"{base}^{n.exponent}"
        else:
            p = _PREC[n.op]
            left, right = go(n.left), go(n.right)
            if _prec(n.left) < p:
                left = f"({left})"
            if _prec(n.right) <= p:
                right = f"({right})"
            s = f"{left} {_OP_SYMBOL[n.op]} {right}"
        memo[key] = s
        return s

    return go(e)


# ---------------------------------------------------------------------------
# traversal helpers

def free_vars(e: Expr) -> set[str]:
    seen: set[int] = set()
    out: set[str] = set()
    stack = [e]
    while stack:
        n = stack.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        if isinstance(n, Var):
            out.add(n.name)
        elif isinstance(n, Unary):
            stack.append(n.arg)
        elif isinstance(n, Pow):
            stack.append(n.base)
        elif isinstance(n, Binary):
            stack.extend((n.left, n.right))
    return out


def _abs_smooth(z: float) -> float:
    return math.sqrt(z * z + ABS_SIGMA * ABS_SIGMA)


_SCALAR_FUNCS: dict[str, Callable[[float], float]] = {
    "sin": math.sin, "cos": math.cos, "exp": math.exp,
    "tanh": math.tanh, "abs": _abs_smooth,
}


def evaluate(e: Expr, binding: Mapping[str, float]) -> float:
    """Evaluate ``e`` under ``binding`` in double precision.

    Raises
    ------
    UnboundVariableError
        If a free variable of ``e`` is missing from ``binding``.
    DomainError
        On division by zero or overflow.
    """
    memo: dict[int, float] = {}

    def go(n: Expr) -> float:
        key = id(n)
        if key in memo:
            return memo[key]
        if isinstance(n, Const):
            v = n.value
        elif isinstance(n, Var):
            try:
                v = float(binding[n.name])
            except KeyError:
                raise UnboundVariableError(f"unbound variable {n.name!r}") from None
        elif isinstance(n, Unary):
            a = go(n.arg)
            v = -a if n.op == "neg" else _SCALAR_FUNCS[n.op](a)
        elif isinstance(n, Pow):
            v = go(n.base) ** n.exponent
        else:
            a, b = go(n.left), go(n.right)
            if n.op == "add":
                v = a + b
            elif n.op == "sub":
                v = a - b
            elif n.op == "mul":
                v = a * b
            else:
                if b == 0.0:
                    raise DomainError("division by zero")
                v = a / b
        memo[key] = v
        return v

    try:
        return go(e)
    except OverflowError as exc:
        raise DomainError(f"overflow: {exc}") from None


# ---------------------------------------------------------------------------
# symbolic differentiation

def differentiate(e: Expr, name: str) -> Expr:
    """Exact symbolic derivative of ``e`` with respect to variable ``name``."""
    memo: dict[int, Expr] = {}

    def go(n: Expr) -> Expr:
        key = id(n)
        if key in memo:
            return memo[key]
        if isinstance(n, Const):
            d = ZERO
        elif isinstance(n, Var):
            d = ONE if n.name == name else ZERO
        elif isinstance(n, Unary):
            da = go(n.arg)
            a = n.arg
            if _is_const(da, 0.0):
                d = ZERO
            elif n.op == "neg":
                d = neg(da)
            elif n.op == "sin":
                d = mul(Unary("cos", a), da)
            elif n.op == "cos":
                d = mul(neg(Unary("sin", a)), da)
            elif n.op == "exp":
                d = mul(n, da)
            elif n.op == "tanh":
                d = mul(sub(ONE, Pow(n, 2)), da)
            else:  # abs: z / sqrt(z^2 + sigma^2)
                d = mul(div(a, n), da)
        elif isinstance(n, Pow):
            db = go(n.base)
            k = n.exponent
            if k == 0 or _is_const(db, 0.0):
                d = ZERO
            elif k == 1:
                d = db
            elif k == 2:
                d = mul(mul(Const(2.0), n.base), db)
            else:
                d = mul(mul(Const(float(k)), Pow(n.base, k - 1)), db)
        else:
            da, db = go(n.left), go(n.right)
            if n.op == "add":
                d = add(da, db)
            elif n.op == "sub":
                d = sub(da, db)
            elif n.op == "mul":
                d = add(mul(da, n.right), mul(n.left, db))
            else:
                num = sub(mul(da, n.right), mul(n.left, db))
                d = ZERO if _is_const(num, 0.0) else div(num, Pow(n.right, 2))
        memo[key] = d
        return d

    return go(e)


_SMART = {"add": add, "sub": sub, "mul": mul, "div": div}


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions (simultaneously).

    Rebuilt nodes drop 0/1 identities, so substituting ``u1 -> 0`` into
    ``w1 + u1`` yields ``w1``.
    """
    memo: dict[int, Expr] = {}

    def go(n: Expr) -> Expr:
        key = id(n)
        if key in memo:
            return memo[key]
        if isinstance(n, Var):
            r = mapping.get(n.name, n)
        elif isinstance(n, Const):
            r = n
        elif isinstance(n, Unary):
            a = go(n.arg)
            if a is n.arg:
                r = n
            else:
                r = neg(a) if n.op == "neg" else Unary(n.op, a)
        elif isinstance(n, Pow):
            b = go(n.base)
            r = n if b is n.base else Pow(b, n.exponent)
        else:
            a, b = go(n.left), go(n.right)
            r = n if (a is n.left and b is n.right) else _SMART[n.op](a, b)
        memo[key] = r
        return r

    return go(e)


# ---------------------------------------------------------------------------
# code generation

_VEC_FUNCS = {
    "sin": "_np.sin", "cos": "_np.cos", "exp": "_np.exp", "tanh": "_np.tanh",
}
_SCL_FUNCS = {
    "sin": "_m.sin", "cos": "_m.cos", "exp": "_m.exp", "tanh": "_m.tanh",
}


def _codegen(exprs: Sequence[Expr], names: Sequence[str], vectorized: bool) -> str:
    funcs = _VEC_FUNCS if vectorized else _SCL_FUNCS
    lines: list[str] = []
    memo: dict[int, str] = {}
    index = {n: i for i, n in enumerate(names)}
    counter = [0]

    def emit(n: Expr) -> str:
        key = id(n)
        if key in memo:
            return memo[key]
        if isinstance(n, Const):
            return repr(n.value) if n.value >= 0 else f"({n.value!r})"
        if isinstance(n, Var):
            if n.name not in index:
                raise UnboundVariableError(f"unbound variable {n.name!r}")
            return f"v_{n.name}"
        if isinstance(n, Unary):
            a = emit(n.arg)
            if n.op == "neg":
                code = f"-{a}"
            elif n.op == "abs":
                code = (f"_np.sqrt({a}*{a} + {ABS_SIGMA**2!r})" if vectorized
                        else f"_m.sqrt({a}*{a} + {ABS_SIGMA**2!r})")
            else:
                code = f"{funcs[n.op]}({a})"
        elif isinstance(n, Pow):
            b = emit(n.base)
            if n.exponent == 0:
                code = f"({b})*0.0 + 1.0"
            elif n.exponent == 1:
                code = b
            else:
                code = f"{b}**{n.exponent}"
        else:
            a, b = emit(n.left), emit(n.right)
            code = f"{a} {_OP_SYMBOL[n.op]} {b}"
        counter[0] += 1
        tmp = f"_t{counter[0]}"
        lines.append(f"    {tmp} = {code}")
        memo[key] = tmp
        return tmp

    outs = [emit(e) for e in exprs]
    head = ["def _generated(z, _shape=()):"]
    for name in names:
        head.append(f"    v_{name} = z[{index[name]}]")
    if vectorized:
        ret = "    return [" + ", ".join(f"_np.broadcast_to({o}, _shape)" for o in outs) + "]"
    else:
        ret = "    return [" + ", ".join(outs) + "]"
    return "\n".join(head + lines + [ret])


def compile_scalar(exprs: Sequence[Expr], names: Sequence[str]) -> Callable[[Sequence[float]], list]:
    """Compile expressions into a fast function of a flat float sequence.

    The returned callable maps ``z`` (ordered as ``names``) to a list of
    floats.  Division by zero raises :class:`DomainError`; float overflow
    raises :class:`OverflowError` (callers treat it as divergence).
    """
    src = _codegen(exprs, names, vectorized=False)
    ns: dict = {"_m": math, "_np": np}
    exec(compile(src, "<regulab-expr>", "exec"), ns)
    raw = ns["_generated"]

    def fn(z):
        try:
            return raw(z)
        except ZeroDivisionError:
            raise DomainError("division by zero") from None

    fn.source = src  # type: ignore[attr-defined]
    return fn


def compile_vectorized(exprs: Sequence[Expr], names: Sequence[str]) -> Callable[[np.ndarray], np.ndarray]:
    """Compile expressions for evaluation on many points at once.

    The returned callable takes an array of shape ``(len(names), ...)`` and
    returns an array of shape ``(len(exprs), ...)``.  Non-finite results
    raise :class:`DomainError`.
    """
    src = _codegen(exprs, names, vectorized=True)
    ns: dict = {"_m": math, "_np": np}
    exec(compile(src, "<regulab-expr-vec>", "exec"), ns)
    raw = ns["_generated"]

    def fn(z):
        z = np.asarray(z, dtype=float)
        with np.errstate(all="ignore"):
            out = np.array(raw(list(z), z.shape[1:]), dtype=float)
        if out.size and not np.all(np.isfinite(out)):
            raise DomainError("non-finite value (division by zero or overflow)")
        return out

    fn.source = src  # type: ignore[attr-defined]
    return fn


def parse_all(texts: Iterable[str]) -> list[Expr]:
    return [parse(t) if isinstance(t, str) else t for t in texts]
