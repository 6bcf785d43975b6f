"""Scalar fields over the chart (x1, x2, t, y), all answering 2-jet queries.

Expression-backed fields differentiate symbolically, grid-backed fields
through their interpolating splines, and composite fields (pointwise algebra,
running t-integrals) propagate jets with dual arithmetic.  A field's
`partial(axis)` returns the derivative as a field in its own right, which is
how quantities like N-coefficients built from d(phi)/dt get the extra
derivative order that a single 2-jet cannot carry.
"""

from __future__ import annotations

import math
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np
from scipy.interpolate import RectBivariateSpline, make_interp_spline

from anholo.exprdsl import (
    CHART_VARS,
    DomainError,
    Expression,
    Jet2,
    derivative,
    eval_jet,
    parse,
    unparse,
)

AX_X1, AX_X2, AX_T, AX_Y = 0, 1, 2, 3

_PACKED_IDX = {}
for _k, (_i, _j) in enumerate(zip(*np.triu_indices(4))):
    _PACKED_IDX[(_i, _j)] = _k
    _PACKED_IDX[(_j, _i)] = _k


def _pk(i: int, j: int) -> int:
    return _PACKED_IDX[(i, j)]


class ScalarField:
    """Base class: a real-valued function of the chart point with 2-jets."""

    def jet2(self, point: np.ndarray) -> Jet2:
        raise NotImplementedError

    def value(self, point) -> float:
        return self.jet2(np.asarray(point, dtype=float)).value

    def grad(self, point) -> np.ndarray:
        return self.jet2(np.asarray(point, dtype=float)).grad

    def partial(self, axis: int) -> "ScalarField":
        raise NotImplementedError(f"{type(self).__name__} has no exact derivative field")

    def __call__(self, point) -> float:
        return self.value(point)


class ConstField(ScalarField):
    def __init__(self, c: float):
        self.c = float(c)

    def jet2(self, point) -> Jet2:
        return Jet2.constant(self.c)

    def value(self, point) -> float:
        return self.c

    def partial(self, axis: int) -> "ScalarField":
        return ConstField(0.0)

    def __repr__(self):
        return f"ConstField({self.c})"


class ExprField(ScalarField):
    """Field backed by a DSL expression plus named constants."""

    def __init__(self, expr: Union[str, Expression], constants: Optional[Mapping[str, float]] = None):
        self.constants = dict(constants or {})
        self.expr = parse(expr, self.constants) if isinstance(expr, str) else expr
        self.source = unparse(self.expr)

    def jet2(self, point) -> Jet2:
        return eval_jet(self.expr, np.asarray(point, dtype=float), self.constants)

    def partial(self, axis: int) -> "ExprField":
        return ExprField(derivative(self.expr, CHART_VARS[axis]), self.constants)

    def __repr__(self):
        return f"ExprField({self.source!r})"


def as_field(x: Union[ScalarField, float, int, str]) -> ScalarField:
    if isinstance(x, ScalarField):
        return x
    if isinstance(x, str):
        return ExprField(x)
    return ConstField(float(x))


class DerivedField(ScalarField):
    """Pointwise combination of other fields through Jet2 arithmetic.

    `combine` maps the input jets to one output jet and must consist of jet
    operations only, so the derivative bookkeeping stays exact.
    """

    def __init__(self, inputs: Sequence[ScalarField], combine: Callable[..., Jet2]):
        self.inputs = tuple(inputs)
        self.combine = combine

    def jet2(self, point) -> Jet2:
        p = np.asarray(point, dtype=float)
        return self.combine(*[f.jet2(p) for f in self.inputs])


class IntegralField(ScalarField):
    """F(x, t) = base(x) + coeff(x) * integral_{t0}^{t} integrand(x, s) ds.

    The t-derivative jets are exact (they are the integrand's); horizontal
    derivatives integrate the integrand's corresponding partials, one adaptive
    pass evaluating all six needed quadratures together.
    """

    def __init__(self, base: ScalarField, coeff: ScalarField, integrand: ScalarField,
                 t0: float, abs_tol: float = 1e-10, rel_tol: float = 1e-9,
                 max_subdivisions: int = 2000):
        self.base = as_field(base)
        self.coeff = as_field(coeff)
        self.integrand = as_field(integrand)
        self.t0 = float(t0)
        self.abs_tol = float(abs_tol)
        self.rel_tol = float(rel_tol)
        self.max_subdivisions = int(max_subdivisions)
        self.last_error_bound = 0.0

    def _integrand_vector(self, x1: float, x2: float, yv: float):
        def fvec(s: float) -> np.ndarray:
            j = self.integrand.jet2(np.array([x1, x2, s, yv]))
            return np.array([
                j.value,
                j.d(AX_X1), j.d(AX_X2),
                j.d2(AX_X1, AX_X1), j.d2(AX_X1, AX_X2), j.d2(AX_X2, AX_X2),
            ])
        return fvec

    def jet2(self, point) -> Jet2:
        p = np.asarray(point, dtype=float)
        x1, x2, tv, yv = p
        fvec = self._integrand_vector(x1, x2, yv)
        ints, err = adaptive_simpson(fvec, self.t0, tv, self.abs_tol, self.rel_tol,
                                     self.max_subdivisions)
        self.last_error_bound = float(err)
        I, I1, I2, I11, I12, I22 = ints
        jb = self.base.jet2(p)
        jc = self.coeff.jet2(p)
        jg = self.integrand.jet2(p)

        val = jb.value + jc.value * I
        grad = jb.grad + jc.grad * I
        grad[AX_X1] += jc.value * I1
        grad[AX_X2] += jc.value * I2
        grad[AX_T] += jc.value * jg.value

        hess = jb.hess + jc.hess * I
        Ig = np.array([I1, I2, 0.0, 0.0])
        for k in range(4):
            for l in range(k, 4):
                hess[_pk(k, l)] += jc.grad[k] * Ig[l] + jc.grad[l] * Ig[k]
        hess[_pk(AX_X1, AX_X1)] += jc.value * I11
        hess[_pk(AX_X1, AX_X2)] += jc.value * I12
        hess[_pk(AX_X2, AX_X2)] += jc.value * I22
        # d/dt rows: dF/dt = coeff * g
        hess[_pk(AX_T, AX_T)] += jc.value * jg.d(AX_T)
        for k in (AX_X1, AX_X2, AX_Y):
            hess[_pk(k, AX_T)] += jc.grad[k] * jg.value + jc.value * jg.d(k)
        return Jet2(val, grad, hess)

    def partial(self, axis: int) -> ScalarField:
        if axis == AX_T:
            return DerivedField([self.coeff, self.integrand], lambda c, g: c * g)
        raise NotImplementedError("IntegralField only differentiates exactly in t")


def adaptive_simpson(f: Callable[[float], np.ndarray], a: float, b: float,
                     abs_tol: float, rel_tol: float, max_subdivisions: int = 2000):
    """Vector adaptive Simpson on [a, b]; returns (integral, error_bound).

    Deterministic: a fixed recursion on interval halves, accepting a panel when
    the Richardson error estimate meets the tolerance.
    """
    if a == b:
        probe = np.asarray(f(a), dtype=float)
        return np.zeros_like(probe), 0.0
    sign = 1.0
    if b < a:
        a, b = b, a
        sign = -1.0

    fa, fb = np.asarray(f(a), float), np.asarray(f(b), float)
    m = 0.5 * (a + b)
    fm = np.asarray(f(m), float)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    count = [0]

    def recurse(a_, m_, b_, fa_, fm_, fb_, whole_, depth):
        lm = 0.5 * (a_ + m_)
        rm = 0.5 * (m_ + b_)
        flm = np.asarray(f(lm), float)
        frm = np.asarray(f(rm), float)
        left = (m_ - a_) / 6.0 * (fa_ + 4.0 * flm + fm_)
        right = (b_ - m_) / 6.0 * (fm_ + 4.0 * frm + fb_)
        delta = left + right - whole_
        scale = np.max(np.abs(left + right))
        tol = max(abs_tol, rel_tol * scale)
        count[0] += 1
        if depth <= 0 or count[0] > max_subdivisions:
            if np.max(np.abs(delta)) > 100 * tol:
                raise DomainError("quadrature failed to converge")
            return left + right + delta / 15.0, np.max(np.abs(delta)) / 15.0
        if np.max(np.abs(delta)) <= 15.0 * tol:
            return left + right + delta / 15.0, np.max(np.abs(delta)) / 15.0
        lv, le = recurse(a_, lm, m_, fa_, flm, fm_, left, depth - 1)
        rv, re = recurse(m_, rm, b_, fm_, frm, fb_, right, depth - 1)
        return lv + rv, le + re

    val, err = recurse(a, m, b, fa, fm, fb, whole, 48)
    return sign * val, err


class GridField(ScalarField):
    """Field tabulated on a rectangular (x1, x2, t) grid; singleton axes mean
    the field is constant along them.  Queries outside the stated domain raise,
    never extrapolate.  Values interpolate with splines (quintic along t when
    enough samples exist, else cubic) and derivative queries use the splines'
    analytic derivatives.
    """

    def __init__(self, x1grid, x2grid, tgrid, values, meta: Optional[dict] = None):
        self.x1grid = np.atleast_1d(np.asarray(x1grid, float))
        self.x2grid = np.atleast_1d(np.asarray(x2grid, float))
        self.tgrid = np.atleast_1d(np.asarray(tgrid, float))
        vals = np.asarray(values, float)
        expect = (self.x1grid.size, self.x2grid.size, self.tgrid.size)
        self.values = vals.reshape(expect)
        self.meta = dict(meta or {})
        self.meta.setdefault("discretization_order", 2)

        self._t_splines = None
        if self.tgrid.size > 1:
            kt = min(5, self.tgrid.size - 1)
            if kt == 4:
                kt = 3
            if kt == 2:
                kt = 1
            base = make_interp_spline(self.tgrid, np.moveaxis(self.values, 2, 0), k=kt)
            self._t_splines = [base]
            for order in range(1, min(kt, 4) + 1):
                self._t_splines.append(base.derivative(order))
            self._kt = kt

        self._kx = None
        if self.x1grid.size > 1 or self.x2grid.size > 1:
            nx = [self.x1grid.size, self.x2grid.size]
            self._kx = [0 if n == 1 else (5 if n >= 6 else min(3, n - 1)) for n in nx]

    @classmethod
    def from_2d(cls, x1grid, x2grid, values, meta=None) -> "GridField":
        vals = np.asarray(values, float)[:, :, None]
        return cls(x1grid, x2grid, [0.0], vals, meta)

    @classmethod
    def constant_in_x(cls, tgrid, values, meta=None) -> "GridField":
        vals = np.asarray(values, float)[None, None, :]
        return cls([0.0], [0.0], tgrid, vals, meta)

    def _check_domain(self, p):
        eps = 1e-12
        for axis, grid, val in ((0, self.x1grid, p[0]), (1, self.x2grid, p[1]),
                                (2, self.tgrid, p[2])):
            if grid.size > 1 and not (grid[0] - eps <= val <= grid[-1] + eps):
                raise DomainError(
                    f"{CHART_VARS[axis]}={val} outside grid domain "
                    f"[{grid[0]}, {grid[-1]}]")

    def _t_slice(self, tv: float, order: int) -> np.ndarray:
        """Array over (x1, x2) nodes of the order-th t-derivative at tv."""
        if self._t_splines is None:
            return self.values[:, :, 0] if order == 0 else np.zeros(self.values.shape[:2])
        if order > min(self._kt, 4):
            return np.zeros(self.values.shape[:2])
        return np.asarray(self._t_splines[order](tv), float)

    def _x_eval(self, A: np.ndarray, x1: float, x2: float, o1: int, o2: int) -> float:
        n1, n2 = A.shape
        if n1 == 1 and n2 == 1:
            return float(A[0, 0]) if (o1 == 0 and o2 == 0) else 0.0
        if n2 == 1:
            if o2 > 0:
                return 0.0
            return self._x_eval_1d(self.x1grid, A[:, 0], x1, o1)
        if n1 == 1:
            if o1 > 0:
                return 0.0
            return self._x_eval_1d(self.x2grid, A[0, :], x2, o2)
        k1, k2 = self._kx
        if o1 > max(k1 - 1, 0) or o2 > max(k2 - 1, 0):
            raise DomainError(
                f"grid too coarse for x-derivative orders ({o1},{o2}); add nodes")
        spl = RectBivariateSpline(self.x1grid, self.x2grid, A, kx=k1, ky=k2, s=0)
        return float(spl.ev(x1, x2, dx=o1, dy=o2))

    @staticmethod
    def _x_eval_1d(grid, col, x, order) -> float:
        k = 5 if grid.size >= 6 else min(3, grid.size - 1)
        if k == 2:
            k = 1
        if order > k:
            return 0.0
        spl = make_interp_spline(grid, col, k=k)
        if order:
            spl = spl.derivative(order)
        return float(spl(x))

    def deriv(self, point, o1: int, o2: int, ot: int) -> float:
        """Mixed partial of orders (o1, o2, ot) in (x1, x2, t); y-order zero."""
        p = np.asarray(point, dtype=float)
        self._check_domain(p)
        A = self._t_slice(p[2], ot)
        return self._x_eval(A, p[0], p[1], o1, o2)

    def jet2(self, point) -> Jet2:
        p = np.asarray(point, dtype=float)
        self._check_domain(p)
        A0 = self._t_slice(p[2], 0)
        A1 = self._t_slice(p[2], 1)
        A2 = self._t_slice(p[2], 2)
        x1, x2 = p[0], p[1]
        val = self._x_eval(A0, x1, x2, 0, 0)
        grad = np.zeros(4)
        grad[0] = self._x_eval(A0, x1, x2, 1, 0)
        grad[1] = self._x_eval(A0, x1, x2, 0, 1)
        grad[2] = self._x_eval(A1, x1, x2, 0, 0)
        hess = np.zeros(10)
        hess[_pk(0, 0)] = self._x_eval(A0, x1, x2, 2, 0)
        hess[_pk(0, 1)] = self._x_eval(A0, x1, x2, 1, 1)
        hess[_pk(1, 1)] = self._x_eval(A0, x1, x2, 0, 2)
        hess[_pk(0, 2)] = self._x_eval(A1, x1, x2, 1, 0)
        hess[_pk(1, 2)] = self._x_eval(A1, x1, x2, 0, 1)
        hess[_pk(2, 2)] = self._x_eval(A2, x1, x2, 0, 0)
        return Jet2(val, grad, hess)

    def partial(self, axis: int) -> "ScalarField":
        return _GridPartial(self, axis)


class _GridPartial(ScalarField):
    """Exact spline derivative of a GridField, itself jet-queryable."""

    def __init__(self, base: GridField, axis: int, shift=(0, 0, 0)):
        if axis == AX_Y:
            raise ValueError("grid fields never depend on y")
        self.base = base
        s = list(shift)
        s[axis] += 1
        self.shift = tuple(s)

    def jet2(self, point) -> Jet2:
        p = np.asarray(point, dtype=float)
        s1, s2, st = self.shift
        d = self.base.deriv
        val = d(p, s1, s2, st)
        grad = np.zeros(4)
        grad[0] = d(p, s1 + 1, s2, st)
        grad[1] = d(p, s1, s2 + 1, st)
        grad[2] = d(p, s1, s2, st + 1)
        hess = np.zeros(10)
        hess[_pk(0, 0)] = d(p, s1 + 2, s2, st)
        hess[_pk(0, 1)] = d(p, s1 + 1, s2 + 1, st)
        hess[_pk(1, 1)] = d(p, s1, s2 + 2, st)
        hess[_pk(0, 2)] = d(p, s1 + 1, s2, st + 1)
        hess[_pk(1, 2)] = d(p, s1, s2 + 1, st + 1)
        hess[_pk(2, 2)] = d(p, s1, s2, st + 2)
        return Jet2(val, grad, hess)

    def partial(self, axis: int) -> "ScalarField":
        return _GridPartial(self.base, axis, self.shift)


# --- jet-level helpers shared by geometry/solver ---------------------------

def field_product(*fields: ScalarField) -> DerivedField:
    def mul(*jets):
        out = jets[0]
        for j in jets[1:]:
            out = out * j
        return out
    return DerivedField(list(fields), mul)


def field_scale(field: ScalarField, c: float) -> DerivedField:
    return DerivedField([field], lambda j: j * c)


def field_sum(*fields: ScalarField) -> DerivedField:
    def add(*jets):
        out = jets[0]
        for j in jets[1:]:
            out = out + j
        return out
    return DerivedField(list(fields), add)
