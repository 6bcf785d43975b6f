"""Expression DSL for generating functions on the chart (x1, x2, t, y).

Expressions are parsed by recursive descent into immutable trees and evaluated
with second-order dual numbers (truncated 2-jets), so first and second partial
derivatives come out exact to rounding error.  Finite differences never appear
here; they live in the test suite as an independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Union

import numpy as np

CHART_VARS = ("x1", "x2", "t", "y")
VAR_INDEX = {name: k for k, name in enumerate(CHART_VARS)}

FUNCTIONS = ("sin", "cos", "tan", "exp", "ln", "sqrt", "abs", "tanh", "sinh", "cosh")

ABS_DERIV_GUARD = 1e-12

# packed symmetric 4x4 storage: upper triangle, row-major
_IU = np.triu_indices(4)
_PACK = {(i, j): k for k, (i, j) in enumerate(zip(*_IU))}


def _pack_index(i: int, j: int) -> int:
    return _PACK[(i, j)] if i <= j else _PACK[(j, i)]


class DomainError(ValueError):
    """Evaluation hit a point outside a function's domain (ln of a nonpositive
    number, division by zero, derivative of abs at zero, overflow)."""


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownIdentifierError(ExprSyntaxError):
    pass


class ArityError(ExprSyntaxError):
    pass


class Jet2:
    """Value, gradient and packed symmetric Hessian of a scalar at a chart point.

    `hess` holds the 10 distinct second partials in upper-triangular row-major
    order ((0,0), (0,1), ..., (3,3)); symmetry is structural.
    """

    __slots__ = ("value", "grad", "hess")

    def __init__(self, value: float, grad: np.ndarray, hess: np.ndarray):
        self.value = float(value)
        self.grad = grad
        self.hess = hess

    @classmethod
    def constant(cls, c: float) -> "Jet2":
        return cls(c, np.zeros(4), np.zeros(10))

    @classmethod
    def variable(cls, index: int, value: float) -> "Jet2":
        g = np.zeros(4)
        g[index] = 1.0
        return cls(value, g, np.zeros(10))

    def hessian(self) -> np.ndarray:
        """Full symmetric 4x4 Hessian."""
        h = np.zeros((4, 4))
        h[_IU] = self.hess
        h.T[_IU] = self.hess
        return h

    def d(self, i: int) -> float:
        return float(self.grad[i])

    def d2(self, i: int, j: int) -> float:
        return float(self.hess[_pack_index(i, j)])

    # --- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = _as_jet(other)
        return Jet2(self.value + other.value, self.grad + other.grad, self.hess + other.hess)

    __radd__ = __add__

    def __sub__(self, other):
        other = _as_jet(other)
        return Jet2(self.value - other.value, self.grad - other.grad, self.hess - other.hess)

    def __rsub__(self, other):
        return _as_jet(other).__sub__(self)

    def __neg__(self):
        return Jet2(-self.value, -self.grad, -self.hess)

    def __mul__(self, other):
        other = _as_jet(other)
        cross = np.outer(self.grad, other.grad)
        return Jet2(
            self.value * other.value,
            self.value * other.grad + other.value * self.grad,
            self.value * other.hess + other.value * self.hess + (cross + cross.T)[_IU],
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_jet(other)
        if other.value == 0.0:
            raise DomainError("division by zero")
        return self * other._reciprocal()

    def __rtruediv__(self, other):
        return _as_jet(other).__truediv__(self)

    def _reciprocal(self) -> "Jet2":
        inv = 1.0 / self.value
        outer = np.outer(self.grad, self.grad)
        # d(1/u) = -u'/u^2 ; d2(1/u) = 2 u'u'/u^3 - u''/u^2
        return Jet2(inv,
                    -self.grad * inv * inv,
                    2.0 * outer[_IU] * (inv ** 3) - self.hess * inv * inv)

    def __pow__(self, other):
        if isinstance(other, Jet2) and not other.grad.any() and not other.hess.any():
            other = other.value
        if isinstance(other, (int, float)):
            if float(other) == int(other):
                return self._int_pow(int(other))
            if self.value <= 0.0:
                raise DomainError("x^y with non-integer exponent needs a positive base")
            return jexp(float(other) * jln(self))
        # variable exponent: u^v = exp(v ln u), requires u > 0
        if self.value <= 0.0:
            raise DomainError("x^y with non-constant exponent needs a positive base")
        return jexp(other * jln(self))

    def _int_pow(self, k: int) -> "Jet2":
        if k == 0:
            return Jet2.constant(1.0)
        if k < 0:
            if self.value == 0.0:
                raise DomainError("zero raised to a negative power")
            return self._int_pow(-k)._reciprocal()
        result = self
        for _ in range(k - 1):
            result = result * self
        return result

    def _chain(self, f: float, df: float, d2f: float) -> "Jet2":
        if not all(map(math.isfinite, (f, df, d2f))):
            raise DomainError("overflow in elementary function")
        outer = np.outer(self.grad, self.grad)[_IU]
        return Jet2(f, df * self.grad, df * self.hess + d2f * outer)


def _as_jet(x) -> Jet2:
    if isinstance(x, Jet2):
        return x
    return Jet2.constant(float(x))


def jexp(u: Jet2) -> Jet2:
    try:
        e = math.exp(u.value)
    except OverflowError as err:
        raise DomainError("overflow in exp") from err
    return u._chain(e, e, e)


def jln(u: Jet2) -> Jet2:
    if u.value <= 0.0:
        raise DomainError("ln of a nonpositive number")
    v = u.value
    return u._chain(math.log(v), 1.0 / v, -1.0 / (v * v))


def jsqrt(u: Jet2) -> Jet2:
    if u.value < 0.0:
        raise DomainError("sqrt of a negative number")
    if u.value == 0.0 and (u.grad.any() or u.hess.any()):
        raise DomainError("sqrt derivative at zero")
    s = math.sqrt(u.value)
    if u.value == 0.0:
        return Jet2.constant(0.0)
    return u._chain(s, 0.5 / s, -0.25 / (s * u.value))


def jabs(u: Jet2) -> Jet2:
    if abs(u.value) < ABS_DERIV_GUARD and (u.grad.any() or u.hess.any()):
        raise DomainError("abs is not differentiable this close to zero")
    s = 1.0 if u.value >= 0.0 else -1.0
    return u._chain(abs(u.value), s, 0.0)


def jsin(u: Jet2) -> Jet2:
    return u._chain(math.sin(u.value), math.cos(u.value), -math.sin(u.value))


def jcos(u: Jet2) -> Jet2:
    return u._chain(math.cos(u.value), -math.sin(u.value), -math.cos(u.value))


def jtan(u: Jet2) -> Jet2:
    c = math.cos(u.value)
    if abs(c) < 1e-300:
        raise DomainError("tan at a pole")
    t_ = math.tan(u.value)
    sec2 = 1.0 + t_ * t_
    return u._chain(t_, sec2, 2.0 * t_ * sec2)


def jtanh(u: Jet2) -> Jet2:
    th = math.tanh(u.value)
    sech2 = 1.0 - th * th
    return u._chain(th, sech2, -2.0 * th * sech2)


def jsinh(u: Jet2) -> Jet2:
    try:
        return u._chain(math.sinh(u.value), math.cosh(u.value), math.sinh(u.value))
    except OverflowError as err:
        raise DomainError("overflow in sinh") from err


def jcosh(u: Jet2) -> Jet2:
    try:
        return u._chain(math.cosh(u.value), math.sinh(u.value), math.cosh(u.value))
    except OverflowError as err:
        raise DomainError("overflow in cosh") from err


_JET_FUNCS = {
    "sin": jsin, "cos": jcos, "tan": jtan, "exp": jexp, "ln": jln,
    "sqrt": jsqrt, "abs": jabs, "tanh": jtanh, "sinh": jsinh, "cosh": jcosh,
}


# --- AST ------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str  # chart variable or declared constant


@dataclass(frozen=True)
class Neg:
    arg: "Expression"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expression"


Expression = Union[Num, Var, Neg, Bin, Call]


# --- tokenizer / parser ---------------------------------------------------

_OPS = set("+-*/^()")


def _tokenize(source: str):
    tokens = []  # (kind, text, pos)
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
            continue
        if c in _OPS:
            tokens.append(("op", c, i))
            i += 1
            continue
        if c.isdigit() or c == ".":
            j = i
            while j < n and (source[j].isdigit() or source[j] == "."):
                j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    while k < n and source[k].isdigit():
                        k += 1
                    j = k
            text = source[i:j]
            try:
                float(text)
            except ValueError:
                raise ExprSyntaxError(f"bad number {text!r}", i)
            tokens.append(("num", text, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("ident", source[i:j], i))
            i = j
            continue
        raise ExprSyntaxError(f"unexpected character {c!r}", i)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, tokens, constants: Mapping[str, float]):
        self.tokens = tokens
        self.pos = 0
        self.constants = constants

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str):
        kind, tok, p = self.next()
        if kind != "op" or tok != text:
            raise ExprSyntaxError(f"expected {text!r}, found {tok!r}", p)

    def parse_expr(self) -> Expression:
        node = self.parse_term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            _, op, _ = self.next()
            node = Bin(op, node, self.parse_term())
        return node

    def parse_term(self) -> Expression:
        node = self.parse_factor()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            _, op, _ = self.next()
            node = Bin(op, node, self.parse_factor())
        return node

    def parse_factor(self) -> Expression:
        if self.peek()[:2] == ("op", "-"):
            self.next()
            return Neg(self.parse_power())
        return self.parse_power()

    def parse_power(self) -> Expression:
        base = self.parse_atom()
        if self.peek()[:2] == ("op", "^"):
            self.next()
            return Bin("^", base, self.parse_factor())  # right-associative
        return base

    def parse_atom(self) -> Expression:
        kind, text, p = self.next()
        if kind == "num":
            return Num(float(text))
        if kind == "ident":
            if self.peek()[:2] == ("op", "("):
                if text not in FUNCTIONS:
                    raise UnknownIdentifierError(f"unknown function {text!r}", p)
                self.next()
                arg = self.parse_expr()
                self.expect(")")
                return Call(text, arg)
            if text in FUNCTIONS:
                raise ArityError(f"function {text!r} needs one parenthesized argument", p)
            if text in VAR_INDEX or text in self.constants:
                return Var(text)
            raise UnknownIdentifierError(f"unknown identifier {text!r}", p)
        if (kind, text) == ("op", "("):
            node = self.parse_expr()
            self.expect(")")
            return node
        raise ExprSyntaxError(f"unexpected token {text!r}", p)


def parse(source: str, constants: Optional[Mapping[str, float]] = None) -> Expression:
    """Parse `source` into an expression tree.

    Identifiers must be chart variables (x1, x2, t, y), names in `constants`,
    or one of the built-in functions applied to a parenthesized argument.
    """
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    parser = _Parser(_tokenize(source), constants or {})
    node = parser.parse_expr()
    kind, text, p = parser.peek()
    if kind != "end":
        raise ExprSyntaxError(f"trailing input {text!r}", p)
    return node


def unparse(node: Expression) -> str:
    """Canonical, fully parenthesized text form; reparsing gives an identical tree."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{unparse(node.arg)})"
    if isinstance(node, Bin):
        return f"({unparse(node.left)}{node.op}{unparse(node.right)})"
    if isinstance(node, Call):
        return f"{node.fn}({unparse(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


def eval_jet(expr: Expression, point, constants: Optional[Mapping[str, float]] = None) -> Jet2:
    """Evaluate `expr` and its first/second partials at `point` (x1, x2, t, y)."""
    constants = constants or {}
    pt = np.asarray(point, dtype=float)

    def walk(node) -> Jet2:
        if isinstance(node, Num):
            return Jet2.constant(node.value)
        if isinstance(node, Var):
            if node.name in VAR_INDEX:
                k = VAR_INDEX[node.name]
                return Jet2.variable(k, pt[k])
            return Jet2.constant(float(constants[node.name]))
        if isinstance(node, Neg):
            return -walk(node.arg)
        if isinstance(node, Bin):
            if node.op == "+":
                return walk(node.left) + walk(node.right)
            if node.op == "-":
                return walk(node.left) - walk(node.right)
            if node.op == "*":
                return walk(node.left) * walk(node.right)
            if node.op == "/":
                return walk(node.left) / walk(node.right)
            if node.op == "^":
                base = walk(node.left)
                if _is_const(node.right, constants):
                    return base ** _const_value(node.right, constants)
                return base ** walk(node.right)
            raise TypeError(node.op)
        if isinstance(node, Call):
            return _JET_FUNCS[node.fn](walk(node.arg))
        raise TypeError(f"not an expression node: {node!r}")

    result = walk(expr)
    if not math.isfinite(result.value):
        raise DomainError("non-finite value")
    return result


def _is_const(node: Expression, constants: Mapping[str, float]) -> bool:
    if isinstance(node, Num):
        return True
    if isinstance(node, Var):
        return node.name in constants
    if isinstance(node, Neg):
        return _is_const(node.arg, constants)
    if isinstance(node, Bin):
        return _is_const(node.left, constants) and _is_const(node.right, constants)
    if isinstance(node, Call):
        return _is_const(node.arg, constants)
    return False


def _const_value(node: Expression, constants: Mapping[str, float]) -> float:
    return eval_jet(node, np.zeros(4), constants).value


# --- symbolic partial derivatives (internal utility) ----------------------
#
# Derivative trees feed composite fields that need one more derivative order
# than a 2-jet carries (e.g. second derivatives of N-coefficients built from
# d(phi)/dt).  Only light constant folding, no general simplification.

_ZERO = Num(0.0)
_ONE = Num(1.0)


def _is_zero(n: Expression) -> bool:
    return isinstance(n, Num) and n.value == 0.0


def _is_one(n: Expression) -> bool:
    return isinstance(n, Num) and n.value == 1.0


def _add(a, b):
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return Bin("+", a, b)


def _sub(a, b):
    if _is_zero(b):
        return a
    if _is_zero(a):
        return Neg(b) if not isinstance(b, Num) else Num(-b.value)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return Bin("-", a, b)


def _mul(a, b):
    if _is_zero(a) or _is_zero(b):
        return _ZERO
    if _is_one(a):
        return b
    if _is_one(b):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return Bin("*", a, b)


def _div(a, b):
    if _is_zero(a):
        return _ZERO
    if _is_one(b):
        return a
    return Bin("/", a, b)


def derivative(node: Expression, var: str) -> Expression:
    """d(node)/d(var) as a new tree, for var one of the chart variables."""
    if isinstance(node, Num):
        return _ZERO
    if isinstance(node, Var):
        return _ONE if node.name == var else _ZERO
    if isinstance(node, Neg):
        d = derivative(node.arg, var)
        return _ZERO if _is_zero(d) else (Num(-d.value) if isinstance(d, Num) else Neg(d))
    if isinstance(node, Bin):
        a, b = node.left, node.right
        da, db = derivative(a, var), derivative(b, var)
        if node.op == "+":
            return _add(da, db)
        if node.op == "-":
            return _sub(da, db)
        if node.op == "*":
            return _add(_mul(da, b), _mul(a, db))
        if node.op == "/":
            return _sub(_div(da, b), _div(_mul(a, db), _mul(b, b)))
        if node.op == "^":
            if _is_zero(db):
                # d(a^c) = c a^(c-1) da
                expm1 = _sub(b, _ONE)
                return _mul(_mul(b, Bin("^", a, expm1)), da)
            # general: a^b = exp(b ln a)
            return _mul(node, _add(_mul(db, Call("ln", a)), _div(_mul(b, da), a)))
        raise TypeError(node.op)
    if isinstance(node, Call):
        u, du = node.arg, derivative(node.arg, var)
        if _is_zero(du):
            return _ZERO
        table = {
            "sin": lambda: Call("cos", u),
            "cos": lambda: Neg(Call("sin", u)),
            "tan": lambda: _div(_ONE, _mul(Call("cos", u), Call("cos", u))),
            "exp": lambda: node,
            "ln": lambda: _div(_ONE, u),
            "sqrt": lambda: _div(Num(0.5), Call("sqrt", u)),
            "abs": lambda: _div(u, Call("abs", u)),  # sign(u)
            "tanh": lambda: _sub(_ONE, _mul(Call("tanh", u), Call("tanh", u))),
            "sinh": lambda: Call("cosh", u),
            "cosh": lambda: Call("sinh", u),
        }
        return _mul(table[node.fn](), du)
    raise TypeError(f"not an expression node: {node!r}")
