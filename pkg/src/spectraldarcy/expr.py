"""Arithmetic expression language for coefficients, data, and exact solutions.

The grammar covers constants, ``pi``, the variables x, y, z, t, T, C,
the operators + - * / ^ (nonnegative integer exponents), unary minus,
and the functions sin, cos, exp. Exact symbolic differentiation plus
substitution is enough to machine-derive manufactured forcing terms.
"""

from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping

import numpy as np

__all__ = [
    "Add",
    "Call",
    "Const",
    "Div",
    "EvalError",
    "Expr",
    "ExprSyntaxError",
    "ForcingSet",
    "Mul",
    "Neg",
    "Pi",
    "Pow",
    "Sub",
    "Var",
    "compile_fn",
    "diff",
    "divergence",
    "evaluate",
    "free_vars",
    "mms_forcing",
    "parse",
    "pretty",
    "subst",
]

VARIABLES = ("x", "y", "z", "t", "T", "C")
FUNCTIONS = ("sin", "cos", "exp")


class ExprSyntaxError(ValueError):
    """Parse failure; ``offset`` is the byte position in the source."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class EvalError(ValueError):
    """Evaluation failure: unbound variable or division by zero."""


class Expr:
    """Base class of all AST nodes. Nodes are immutable and hashable."""

    __slots__ = ()


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Pi(Expr):
    pass


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int


@dataclass(frozen=True)
class Call(Expr):
    func: str
    arg: Expr


ZERO = Const(0.0)
ONE = Const(1.0)


def _is_const(e: Expr, v: float | None = None) -> bool:
    return isinstance(e, Const) and (v is None or e.value == v)


# Smart constructors with the light simplifications (0*e -> 0, 1*e -> e,
# e+0 -> e, constant folding). diff() relies on these so that derivatives
# of coordinate-free factors collapse to literal zero.

def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    return Div(a, b)


def pow_(a: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return a
    if isinstance(a, Const):
        return Const(a.value ** n)
    return Pow(a, n)


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokens(src: str) -> Iterator[tuple[str, str, int]]:
    pos = 0
    n = len(src)
    while pos < n:
        m = _TOKEN_RE.match(src, pos)
        if m is None or m.lastgroup is None:
            ws = len(src[pos:]) - len(src[pos:].lstrip())
            at = pos + ws
            if at >= n:
                break  # trailing whitespace
            raise ExprSyntaxError(f"unexpected character {src[at]!r}", at)
        kind = m.lastgroup
        yield kind, m.group(kind), m.start(kind)
        pos = m.end()
    yield "end", "", n


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.toks = list(_tokens(src))
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def advance(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, text, pos = self.peek()
        if kind != "op" or text != op:
            raise ExprSyntaxError(f"expected {op!r}", pos)
        return self.advance()

    def parse(self) -> Expr:
        e = self.sum()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {text!r}", pos)
        return e

    def sum(self) -> Expr:
        e = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                rhs = self.term()
                e = add(e, rhs) if text == "+" else sub(e, rhs)
            else:
                return e

    def term(self) -> Expr:
        e = self.unary()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                rhs = self.unary()
                e = mul(e, rhs) if text == "*" else div(e, rhs)
            else:
                return e

    def unary(self) -> Expr:
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, text, pos = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            kind, text, pos = self.peek()
            if kind != "num" or not re.fullmatch(r"\d+", text):
                raise ExprSyntaxError("exponent must be a nonnegative integer literal", pos)
            self.advance()
            return pow_(base, int(text))
        return base

    def atom(self) -> Expr:
        kind, text, pos = self.advance()
        if kind == "num":
            return Const(float(text))
        if kind == "ident":
            if text == "pi":
                return Pi()
            if text in FUNCTIONS:
                self.expect_op("(")
                arg = self.sum()
                self.expect_op(")")
                return Call(text, arg)
            if text in VARIABLES:
                return Var(text)
            raise ExprSyntaxError(f"unknown identifier {text!r}", pos)
        if kind == "op" and text == "(":
            e = self.sum()
            self.expect_op(")")
            return e
        raise ExprSyntaxError(f"unexpected token {text!r}" if text else "unexpected end",
                              pos)


def parse(src: str) -> Expr:
    """Parse an expression; raises ExprSyntaxError with a byte offset."""
    return _Parser(src).parse()


_PREC_SUM, _PREC_TERM, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _fmt_float(v: float) -> str:
    return repr(v)


def _pretty(e: Expr) -> tuple[str, int]:
    if isinstance(e, Const):
        if e.value < 0.0 or (e.value == 0.0 and math.copysign(1.0, e.value) < 0):
            return f"-{_fmt_float(-e.value)}", _PREC_UNARY
        return _fmt_float(e.value), _PREC_ATOM
    if isinstance(e, Pi):
        return "pi", _PREC_ATOM
    if isinstance(e, Var):
        return e.name, _PREC_ATOM
    if isinstance(e, Call):
        inner, _ = _pretty(e.arg)
        return f"{e.func}({inner})", _PREC_ATOM
    if isinstance(e, Neg):
        s = _wrap(e.arg, _PREC_UNARY)
        return f"-{s}", _PREC_UNARY
    if isinstance(e, Pow):
        return f"{_wrap(e.base, _PREC_ATOM)}^{e.exponent}", _PREC_POW
    if isinstance(e, (Add, Sub)):
        op = "+" if isinstance(e, Add) else "-"
        return f"{_wrap(e.left, _PREC_SUM)}{op}{_wrap(e.right, _PREC_SUM + 1)}", _PREC_SUM
    if isinstance(e, (Mul, Div)):
        op = "*" if isinstance(e, Mul) else "/"
        return f"{_wrap(e.left, _PREC_TERM)}{op}{_wrap(e.right, _PREC_TERM + 1)}", _PREC_TERM
    raise TypeError(f"not an Expr node: {e!r}")


def _wrap(e: Expr, minimum: int) -> str:
    s, prec = _pretty(e)
    return f"({s})" if prec < minimum else s


def pretty(e: Expr) -> str:
    """Render to source text; parse(pretty(e)) reproduces the AST."""
    return _pretty(e)[0]


def free_vars(e: Expr) -> frozenset[str]:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, (Const, Pi)):
        return frozenset()
    if isinstance(e, Neg):
        return free_vars(e.arg)
    if isinstance(e, Call):
        return free_vars(e.arg)
    if isinstance(e, Pow):
        return free_vars(e.base)
    return free_vars(e.left) | free_vars(e.right)


def evaluate(e: Expr, env: Mapping[str, float]) -> float:
    """IEEE-double evaluation with every free variable bound in env."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Pi):
        return math.pi
    if isinstance(e, Var):
        try:
            return float(env[e.name])
        except KeyError:
            raise EvalError(f"unbound variable {e.name!r}") from None
    if isinstance(e, Neg):
        return -evaluate(e.arg, env)
    if isinstance(e, Add):
        return evaluate(e.left, env) + evaluate(e.right, env)
    if isinstance(e, Sub):
        return evaluate(e.left, env) - evaluate(e.right, env)
    if isinstance(e, Mul):
        return evaluate(e.left, env) * evaluate(e.right, env)
    if isinstance(e, Div):
        denom = evaluate(e.right, env)
        if denom == 0.0:
            raise EvalError("division by zero")
        return evaluate(e.left, env) / denom
    if isinstance(e, Pow):
        return evaluate(e.base, env) ** e.exponent
    if isinstance(e, Call):
        return getattr(math, e.func)(evaluate(e.arg, env))
    raise TypeError(f"not an Expr node: {e!r}")


def diff(e: Expr, v: str) -> Expr:
    """Exact symbolic derivative with light simplification."""
    if v not in VARIABLES:
        raise ValueError(f"unknown variable {v!r}")
    if isinstance(e, (Const, Pi)):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if isinstance(e, Neg):
        return neg(diff(e.arg, v))
    if isinstance(e, Add):
        return add(diff(e.left, v), diff(e.right, v))
    if isinstance(e, Sub):
        return sub(diff(e.left, v), diff(e.right, v))
    if isinstance(e, Mul):
        return add(mul(diff(e.left, v), e.right), mul(e.left, diff(e.right, v)))
    if isinstance(e, Div):
        num = sub(mul(diff(e.left, v), e.right), mul(e.left, diff(e.right, v)))
        return div(num, pow_(e.right, 2))
    if isinstance(e, Pow):
        inner = mul(Const(float(e.exponent)), pow_(e.base, e.exponent - 1))
        return mul(inner, diff(e.base, v))
    if isinstance(e, Call):
        darg = diff(e.arg, v)
        if e.func == "sin":
            return mul(Call("cos", e.arg), darg)
        if e.func == "cos":
            return mul(neg(Call("sin", e.arg)), darg)
        return mul(Call("exp", e.arg), darg)
    raise TypeError(f"not an Expr node: {e!r}")


def subst(e: Expr, bindings: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions (used to close T, C dependencies)."""
    if isinstance(e, (Const, Pi)):
        return e
    if isinstance(e, Var):
        return bindings.get(e.name, e)
    if isinstance(e, Neg):
        return neg(subst(e.arg, bindings))
    if isinstance(e, Add):
        return add(subst(e.left, bindings), subst(e.right, bindings))
    if isinstance(e, Sub):
        return sub(subst(e.left, bindings), subst(e.right, bindings))
    if isinstance(e, Mul):
        return mul(subst(e.left, bindings), subst(e.right, bindings))
    if isinstance(e, Div):
        return div(subst(e.left, bindings), subst(e.right, bindings))
    if isinstance(e, Pow):
        return pow_(subst(e.base, bindings), e.exponent)
    if isinstance(e, Call):
        return Call(e.func, subst(e.arg, bindings))
    raise TypeError(f"not an Expr node: {e!r}")


def _codegen(e: Expr) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Pi):
        return "_pi"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{_codegen(e.arg)})"
    if isinstance(e, Add):
        return f"({_codegen(e.left)}+{_codegen(e.right)})"
    if isinstance(e, Sub):
        return f"({_codegen(e.left)}-{_codegen(e.right)})"
    if isinstance(e, Mul):
        return f"({_codegen(e.left)}*{_codegen(e.right)})"
    if isinstance(e, Div):
        return f"({_codegen(e.left)}/{_codegen(e.right)})"
    if isinstance(e, Pow):
        return f"({_codegen(e.base)}**{e.exponent})"
    if isinstance(e, Call):
        return f"_np.{e.func}({_codegen(e.arg)})"
    raise TypeError(f"not an Expr node: {e!r}")


@functools.lru_cache(maxsize=None)
def compile_fn(e: Expr) -> Callable:
    """Compile to a numpy-vectorized callable of (x, y, z, t, T, C).

    Unused variables default to 0.0, so callers pass only what the
    expression needs. Array arguments broadcast.
    """
    args = ", ".join(f"{v}=0.0" for v in VARIABLES)
    src = f"lambda {args}: {_codegen(e)}"
    fn = eval(src, {"_np": np, "_pi": math.pi})  # noqa: S307 - closed namespace
    fn.expression = e
    return fn


def divergence(components, dim: int) -> Expr:
    """Symbolic divergence sum over the first ``dim`` coordinates."""
    out: Expr = ZERO
    for c, comp in enumerate(components[:dim]):
        out = add(out, diff(comp, VARIABLES[c]))
    return out


@dataclass(frozen=True)
class ForcingSet:
    """Forcings and boundary data derived from an exact solution."""

    f: tuple[Expr, ...]
    h1: Expr
    h2: Expr
    theta_dirichlet: Expr
    psi_dirichlet: Expr
    theta_flux: Mapping
    psi_flux: Mapping


def _div_lam_grad(lam: Expr, w: Expr, dim: int) -> Expr:
    # div(lam grad w) expanded as grad(lam).grad(w) + lam*Laplace(w);
    # lam must already have T, C substituted so the chain rule is implicit.
    out: Expr = ZERO
    for c in range(dim):
        xc = VARIABLES[c]
        dw = diff(w, xc)
        out = add(out, add(mul(diff(lam, xc), dw), mul(lam, diff(dw, xc))))
    return out


def mms_forcing(exact_u, exact_p: Expr, exact_theta: Expr, exact_psi: Expr,
                coeffs, dim: int) -> ForcingSet:
    """Derive Darcy/heat/mass forcings and boundary data symbolically.

    ``coeffs`` provides alpha, lam11, lam12, lam21, lam22 (functions of
    x, t, T, C) and the scale gamma; T and C are substituted by the
    exact temperature and concentration. The returned ``f`` is already
    divided by gamma so that gamma*f reproduces the momentum source.
    """
    from .quad import FaceId  # local import to keep module deps one-way

    exact_u = tuple(exact_u)
    if len(exact_u) != dim:
        raise ValueError(f"expected {dim} velocity components, got {len(exact_u)}")
    state = {"T": exact_theta, "C": exact_psi}
    for e in (*exact_u, exact_p, exact_theta, exact_psi):
        bad = free_vars(e) & {"T", "C"}
        if bad:
            raise ValueError(f"exact solution must not reference {sorted(bad)}")

    alpha = subst(coeffs.alpha, state)
    lam11 = subst(coeffs.lam11, state)
    lam12 = subst(coeffs.lam12, state)
    lam21 = subst(coeffs.lam21, state)
    lam22 = subst(coeffs.lam22, state)

    inv_gamma = Const(1.0 / coeffs.gamma)
    f = tuple(
        mul(inv_gamma,
            add(add(diff(exact_u[c], "t"), mul(alpha, exact_u[c])),
                diff(exact_p, VARIABLES[c])))
        for c in range(dim)
    )

    def advect(w: Expr) -> Expr:
        out: Expr = ZERO
        for c in range(dim):
            out = add(out, mul(exact_u[c], diff(w, VARIABLES[c])))
        return out

    h1 = sub(sub(add(diff(exact_theta, "t"), advect(exact_theta)),
                 _div_lam_grad(lam11, exact_theta, dim)),
             _div_lam_grad(lam12, exact_psi, dim))
    h2 = sub(sub(add(diff(exact_psi, "t"), advect(exact_psi)),
                 _div_lam_grad(lam22, exact_psi, dim)),
             _div_lam_grad(lam21, exact_theta, dim))

    theta_flux = {}
    psi_flux = {}
    for axis in range(dim):
        for side in (0, 1):
            sign = Const(-1.0) if side == 0 else ONE
            face = FaceId(axis, side)
            theta_flux[face] = mul(sign, diff(exact_theta, VARIABLES[axis]))
            psi_flux[face] = mul(sign, diff(exact_psi, VARIABLES[axis]))

    return ForcingSet(f=f, h1=h1, h2=h2,
                      theta_dirichlet=exact_theta, psi_dirichlet=exact_psi,
                      theta_flux=theta_flux, psi_flux=psi_flux)
