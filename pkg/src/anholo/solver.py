"""Generators for the four solution families, the horizontal Poisson solve,
Levi-Civita extraction residuals, and the de Sitter conformal-factor model.

All running t-integrals are definite integrals from a configurable base point
t0 (default 1); integration constants are absorbed into the user-supplied
integration functions.  Generators return a GeneratedSolution carrying the
metric, the sign choices actually used, and quadrature/ODE error diagnostics.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import spsolve

from anholo.exprdsl import DomainError, Jet2, jabs, jexp
from anholo.fields import (
    AX_T,
    AX_X1,
    AX_X2,
    AX_Y,
    ConstField,
    DerivedField,
    ExprField,
    GridField,
    IntegralField,
    ScalarField,
    as_field,
)
from anholo.geometry import NAdaptedMetric, SourceSpec


class GeneratorError(ValueError):
    pass


@dataclass
class QuadratureSettings:
    t0: float = 1.0
    abs_tol: float = 1e-10
    rel_tol: float = 1e-9
    max_subdivisions: int = 2000

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")


Domain = Sequence  # ((x1lo, x1hi), (x2lo, x2hi), (tlo, thi))

DEFAULT_DOMAIN = ((-1.0, 1.0), (-1.0, 1.0), (0.5, 2.0))


def _lattice(domain, shape=(5, 5, 5), y: float = 0.0):
    axes = [np.linspace(lo, hi, n) if hi > lo else np.full(n, lo)
            for (lo, hi), n in zip(domain, shape)]
    return [np.array([a, b, c, y]) for a in axes[0] for b in axes[1] for c in axes[2]]


def _interior_lattice(domain, shape=(5, 5, 5), margin: float = 0.15, y: float = 0.0):
    shrunk = []
    for lo, hi in domain:
        pad = (hi - lo) * margin
        shrunk.append((lo + pad, hi - pad))
    return _lattice(shrunk, shape, y)


def _check_t0(q: QuadratureSettings, domain):
    tlo, thi = domain[2]
    if not (tlo < q.t0 < thi):
        raise GeneratorError(f"t0={q.t0} must lie strictly inside the t-domain ({tlo}, {thi})")


def _is_zero_field(f: ScalarField, lattice) -> bool:
    return all(abs(f.value(p)) == 0.0 for p in lattice)


def _spec_hash(*parts) -> str:
    text = "|".join(repr(p) for p in parts)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _field_desc(f) -> str:
    if isinstance(f, ExprField):
        return f.source
    if isinstance(f, ConstField):
        return repr(f.c)
    return type(f).__name__


@dataclass
class GeneratedSolution:
    metric: NAdaptedMetric
    type_tag: str
    signs: dict
    t0: float
    diagnostics: dict
    lc_mode: bool


def _x_partial_is_zero(f: ScalarField, lattice) -> bool:
    for p in lattice:
        j = f.jet2(p)
        if abs(j.d(AX_X1)) > 0.0 or abs(j.d(AX_X2)) > 0.0:
            return False
    return True


# --------------------------------------------------------------------------
# horizontal Poisson equation
# --------------------------------------------------------------------------

def solve_psi(upsilon4: ScalarField, domain, bc, grid=(17, 17),
              residual_tol: float = 1e-10) -> GridField:
    """Solve d2(psi)/dx1^2 + d2(psi)/dx2^2 = 2 upsilon4 on a rectangle with
    Dirichlet data, by the 5-point stencil and a sparse direct solve.

    `bc` is either a ScalarField/expression evaluated on the boundary nodes or
    a dict with arrays for edges "x1min", "x1max", "x2min", "x2max".
    Returns a grid-backed field of discretization order 2.
    """
    n1, n2 = grid
    if n1 < 9 or n2 < 9:
        raise GeneratorError("poisson grid needs at least 9 nodes per axis")
    (x1lo, x1hi), (x2lo, x2hi) = domain
    x1g = np.linspace(x1lo, x1hi, n1)
    x2g = np.linspace(x2lo, x2hi, n2)
    d1 = x1g[1] - x1g[0]
    d2 = x2g[1] - x2g[0]

    ups = as_field(upsilon4)
    psi = np.zeros((n1, n2))

    if isinstance(bc, dict):
        for key in ("x1min", "x1max", "x2min", "x2max"):
            if key not in bc:
                raise GeneratorError(f"boundary data missing edge {key!r}")
        psi[0, :] = np.asarray(bc["x1min"], float)
        psi[-1, :] = np.asarray(bc["x1max"], float)
        psi[:, 0] = np.asarray(bc["x2min"], float)
        psi[:, -1] = np.asarray(bc["x2max"], float)
    else:
        bfield = as_field(bc)
        for i in (0, n1 - 1):
            for j in range(n2):
                psi[i, j] = bfield.value(np.array([x1g[i], x2g[j], 0.0, 0.0]))
        for j in (0, n2 - 1):
            for i in range(n1):
                psi[i, j] = bfield.value(np.array([x1g[i], x2g[j], 0.0, 0.0]))

    ni, nj = n1 - 2, n2 - 2
    idx = lambda i, j: (i - 1) * nj + (j - 1)
    A = sparse.lil_matrix((ni * nj, ni * nj))
    rhs = np.zeros(ni * nj)
    for i in range(1, n1 - 1):
        for j in range(1, n2 - 1):
            row = idx(i, j)
            A[row, row] = -2.0 / d1 ** 2 - 2.0 / d2 ** 2
            rhs[row] = 2.0 * ups.value(np.array([x1g[i], x2g[j], 0.0, 0.0]))
            for di, dj, h in ((1, 0, d1), (-1, 0, d1), (0, 1, d2), (0, -1, d2)):
                ii, jj = i + di, j + dj
                if 1 <= ii <= n1 - 2 and 1 <= jj <= n2 - 2:
                    A[row, idx(ii, jj)] = 1.0 / h ** 2
                else:
                    rhs[row] -= psi[ii, jj] / h ** 2
    A = A.tocsr()
    sol = spsolve(A, rhs)
    resid = float(np.max(np.abs(A @ sol - rhs))) if sol.size else 0.0
    if resid > residual_tol * max(1.0, float(np.max(np.abs(rhs))) if rhs.size else 1.0):
        raise GeneratorError(f"poisson solve did not converge (residual {resid:.3e})")
    psi[1:-1, 1:-1] = sol.reshape(ni, nj)
    return GridField.from_2d(x1g, x2g, psi, meta={"discretization_order": 2})


# --------------------------------------------------------------------------
# Type 1
# --------------------------------------------------------------------------

@dataclass
class Type1Spec:
    phi: ScalarField
    source: SourceSpec
    h4_0: ScalarField = dc_field(default_factory=lambda: ConstField(0.0))
    n1_fns: tuple = (ConstField(0.0), ConstField(0.0))   # first-kind integration functions
    n2_fns: tuple = (ConstField(0.0), ConstField(0.0))   # second-kind integration functions
    sign3: Optional[int] = None
    sign4: Optional[int] = None
    psi: Union[None, ScalarField, str] = None
    domain: Domain = DEFAULT_DOMAIN
    probe_shape: tuple = (5, 5, 5)
    psi_grid: tuple = (17, 17)

    def __post_init__(self):
        self.phi = as_field(self.phi)
        self.h4_0 = as_field(self.h4_0)
        self.n1_fns = tuple(as_field(f) for f in self.n1_fns)
        self.n2_fns = tuple(as_field(f) for f in self.n2_fns)
        if self.psi is not None and not isinstance(self.psi, str):
            self.psi = as_field(self.psi)


def _psi_fields(psi, source, domain, psi_grid):
    """g1 = g2 = e^psi; psi may be None (zero), a field, or "solve"."""
    if psi is None:
        return ConstField(1.0), None
    if isinstance(psi, str):
        if psi != "solve":
            raise GeneratorError(f"psi must be a field or 'solve', not {psi!r}")
        psi_field = solve_psi(source.upsilon4, domain[:2],
                              ConstField(0.0), psi_grid)
    else:
        psi_field = psi
    return DerivedField([psi_field], jexp), psi_field


def generate_type1(spec: Type1Spec, q: QuadratureSettings = QuadratureSettings()) -> GeneratedSolution:
    """Family with nonvanishing h3*, h4* driven by a generating function phi.

    h4 integrates 2 (e^{2 phi})* / ups2 from t0 with sign4; h3 follows from
    the first-order relation h4* phi* = 2 h3 h4 ups2, which reduces to
    sign3 |phi*| / ups2 when the integration data match the phi-normalization.
    """
    _check_t0(q, spec.domain)
    lattice = _lattice(spec.domain, spec.probe_shape)
    ups2 = spec.source.upsilon2

    phi_t = spec.phi.partial(AX_T)
    if all(abs(phi_t.value(p)) < 1e-14 for p in lattice):
        raise GeneratorError("phi must be nonconstant in t (phi* = 0 on the probe lattice)")
    for p in lattice:
        if abs(phi_t.value(p)) < 1e-14:
            raise GeneratorError(f"phi* vanishes at probe point {tuple(p)}")
        if abs(ups2.value(p)) < 1e-14:
            raise GeneratorError(f"upsilon2 vanishes at probe point {tuple(p)}")

    integrand = DerivedField([phi_t, spec.phi, ups2],
                             lambda pt, ph, u: (pt * 2.0) * jexp(ph * 2.0) / u)

    s3_options = (spec.sign3,) if spec.sign3 is not None else (1, -1)
    s4_options = (spec.sign4,) if spec.sign4 is not None else (1, -1)
    sign_pairs = list(itertools.product(s3_options, s4_options))

    g_conf, psi_field = _psi_fields(spec.psi, spec.source, spec.domain, spec.psi_grid)

    chosen = None
    failures = []
    for s3, s4 in sign_pairs:
        h4 = IntegralField(spec.h4_0, ConstField(2.0 * s4), integrand, q.t0,
                           q.abs_tol, q.rel_tol, q.max_subdivisions)
        h4_t = h4.partial(AX_T)
        h3 = DerivedField([phi_t, h4_t, h4, ups2],
                          lambda pt, ht, h, u: pt * ht / (h * u * 2.0))
        ok = True
        for p in lattice:
            try:
                h4v = h4.value(p)
                h3v = h3.value(p)
            except DomainError as err:
                failures.append((s3, s4, f"evaluation failed at {tuple(p)}: {err}"))
                ok = False
                break
            if h4v <= 0.0:
                failures.append((s3, s4, f"h4 <= 0 at {tuple(p)} (h4={h4v:.3e})"))
                ok = False
                break
            if h3v >= 0.0:
                failures.append((s3, s4, f"h3 >= 0 at {tuple(p)} (h3={h3v:.3e})"))
                ok = False
                break
            # h3 = sign3 |phi*| / ups2 on compatible data, so its sign is
            # sign3 * sign(ups2); reject combinations that disagree
            if np.sign(h3v) != s3 * np.sign(ups2.value(p)):
                failures.append((s3, s4, f"h3 sign mismatch at {tuple(p)}"))
                ok = False
                break
        if ok:
            chosen = (s3, s4, h3, h4, h4_t)
            break
    if chosen is None:
        detail = "; ".join(f"({s3},{s4}): {msg}" for s3, s4, msg in failures[:4])
        raise GeneratorError(f"no sign combination yields the (+,+,-,+) signature: {detail}")
    s3, s4, h3, h4, h4_t = chosen

    phi_x_zero = _x_partial_is_zero(spec.phi, lattice[:: max(1, len(lattice) // 16)])
    if phi_x_zero:
        w = (ConstField(0.0), ConstField(0.0))
    else:
        w = tuple(DerivedField([spec.phi.partial(i), phi_t], lambda a, b: -(a / b))
                  for i in (AX_X1, AX_X2))

    n_int = DerivedField([h3, h4], lambda a, b: a / (jabs(b) ** 1.5))
    n = []
    for one_n, two_n in zip(spec.n1_fns, spec.n2_fns):
        if _is_zero_field(two_n, lattice[:: max(1, len(lattice) // 8)]):
            n.append(one_n)
        else:
            n.append(IntegralField(one_n, two_n, n_int, q.t0,
                                   q.abs_tol, q.rel_tol, q.max_subdivisions))

    metric = NAdaptedMetric(
        g1=g_conf, g2=g_conf, h3=h3, h4=h4, w1=w[0], w2=w[1], n1=n[0], n2=n[1],
        provenance={
            "type": "type1", "signs": {"sign3": s3, "sign4": s4}, "t0": q.t0,
            "tolerances": {"abs_tol": q.abs_tol, "rel_tol": q.rel_tol},
            "spec_hash": _spec_hash("type1", _field_desc(spec.phi), q.t0, s3, s4),
        },
    )
    err_bound = max(getattr(h4, "last_error_bound", 0.0), q.abs_tol)
    lc_mode = phi_x_zero and all(isinstance(f, ConstField) for f in n)
    return GeneratedSolution(metric=metric, type_tag="type1",
                             signs={"sign3": s3, "sign4": s4}, t0=q.t0,
                             diagnostics={"quadrature_error_bound": err_bound},
                             lc_mode=lc_mode)


# --------------------------------------------------------------------------
# Type 2
# --------------------------------------------------------------------------

@dataclass
class Type2Spec:
    h3: ScalarField
    w_fns: tuple = (ConstField(0.0), ConstField(0.0))
    h4_0: ScalarField = dc_field(default_factory=lambda: ConstField(1.0))
    n1_fns: tuple = (ConstField(0.0), ConstField(0.0))
    n2_fns: tuple = (ConstField(0.0), ConstField(0.0))
    psi: Union[None, ScalarField, str] = None
    source: SourceSpec = dc_field(default_factory=SourceSpec)
    domain: Domain = DEFAULT_DOMAIN
    probe_shape: tuple = (5, 5, 5)
    psi_grid: tuple = (17, 17)

    def __post_init__(self):
        self.h3 = as_field(self.h3)
        self.h4_0 = as_field(self.h4_0)
        self.w_fns = tuple(as_field(f) for f in self.w_fns)
        self.n1_fns = tuple(as_field(f) for f in self.n1_fns)
        self.n2_fns = tuple(as_field(f) for f in self.n2_fns)
        if self.psi is not None and not isinstance(self.psi, str):
            self.psi = as_field(self.psi)


def generate_type2(spec: Type2Spec, q: QuadratureSettings = QuadratureSettings()) -> GeneratedSolution:
    """Family with h4* = 0; solvable only for vanishing vertical source."""
    _check_t0(q, spec.domain)
    lattice = _lattice(spec.domain, spec.probe_shape)
    for p in lattice:
        if abs(spec.source.upsilon2.value(p)) > 0.0:
            raise GeneratorError("type 2 requires upsilon2 = 0 (h4* = 0 forces a sourceless vertical equation)")

    g_conf, _ = _psi_fields(spec.psi, spec.source, spec.domain, spec.psi_grid)
    n = []
    for one_n, two_n in zip(spec.n1_fns, spec.n2_fns):
        if _is_zero_field(two_n, lattice[:: max(1, len(lattice) // 8)]):
            n.append(one_n)
        else:
            n.append(IntegralField(one_n, two_n, spec.h3, q.t0,
                                   q.abs_tol, q.rel_tol, q.max_subdivisions))
    metric = NAdaptedMetric(
        g1=g_conf, g2=g_conf, h3=spec.h3, h4=spec.h4_0,
        w1=spec.w_fns[0], w2=spec.w_fns[1], n1=n[0], n2=n[1],
        provenance={"type": "type2", "t0": q.t0,
                    "spec_hash": _spec_hash("type2", _field_desc(spec.h3), q.t0)},
    )
    return GeneratedSolution(metric=metric, type_tag="type2", signs={}, t0=q.t0,
                             diagnostics={"quadrature_error_bound": q.abs_tol},
                             lc_mode=False)


# --------------------------------------------------------------------------
# Type 3
# --------------------------------------------------------------------------

@dataclass
class Type3Spec:
    h3_0: ScalarField                      # the (negative) metric h3 itself, x-only
    source: SourceSpec
    h4_init: ScalarField                   # h4(t0) per x
    h4_slope_init: ScalarField             # h4*(t0) per x
    n1_fns: tuple = (ConstField(0.0), ConstField(0.0))
    n2_fns: tuple = (ConstField(0.0), ConstField(0.0))
    psi: Union[None, ScalarField, str] = None
    domain: Domain = DEFAULT_DOMAIN
    x_nodes: Optional[tuple] = None        # (x1 nodes, x2 nodes) or None when x-independent
    t_samples: int = 481
    probe_shape: tuple = (5, 5, 5)
    psi_grid: tuple = (17, 17)

    def __post_init__(self):
        self.h3_0 = as_field(self.h3_0)
        self.h4_init = as_field(self.h4_init)
        self.h4_slope_init = as_field(self.h4_slope_init)
        self.n1_fns = tuple(as_field(f) for f in self.n1_fns)
        self.n2_fns = tuple(as_field(f) for f in self.n2_fns)
        if self.psi is not None and not isinstance(self.psi, str):
            self.psi = as_field(self.psi)


def generate_type3(spec: Type3Spec, q: QuadratureSettings = QuadratureSettings()) -> GeneratedSolution:
    """Family with h3* = 0: h4 solves the second-order vertical equation per
    x-node; tabulated solutions back the returned fields."""
    _check_t0(q, spec.domain)
    tlo, thi = spec.domain[2]
    ups2 = spec.source.upsilon2

    if spec.x_nodes is None:
        x1nodes = np.array([0.5 * (spec.domain[0][0] + spec.domain[0][1])])
        x2nodes = np.array([0.5 * (spec.domain[1][0] + spec.domain[1][1])])
    else:
        x1nodes = np.asarray(spec.x_nodes[0], float)
        x2nodes = np.asarray(spec.x_nodes[1], float)
        for nodes, name in ((x1nodes, "x1"), (x2nodes, "x2")):
            if 1 < nodes.size < 6:
                raise GeneratorError(f"type 3 needs at least 6 {name} nodes for spline jets")

    tgrid = np.linspace(tlo, thi, spec.t_samples)
    vals = np.empty((x1nodes.size, x2nodes.size, tgrid.size))
    max_ode_err = 0.0
    for i, x1v in enumerate(x1nodes):
        for j, x2v in enumerate(x2nodes):
            pt0 = np.array([x1v, x2v, q.t0, 0.0])
            h40 = spec.h4_init.value(pt0)
            h40s = spec.h4_slope_init.value(pt0)
            if abs(h40) < 1e-14:
                raise GeneratorError(f"h4(t0) vanishes at node ({x1v}, {x2v})")
            if abs(h40s) < 1e-14 and _is_zero_field(ups2, [pt0]):
                raise GeneratorError(
                    f"h4*(t0) = 0 with zero source at node ({x1v}, {x2v}): "
                    "h4 is constant and the generating function is undefined")

            def rhs(t, yv):
                h4v, h4s = yv
                u = ups2.value(np.array([x1v, x2v, t, 0.0]))
                h3v = spec.h3_0.value(np.array([x1v, x2v, t, 0.0]))
                return [h4s, h4s * h4s / (2.0 * h4v) + 2.0 * h3v * h4v * u]

            def h4_zero(t, yv):
                return yv[0]
            h4_zero.terminal = True
            h4_zero.direction = 0

            row = np.empty_like(tgrid)
            for tspan, mask in (((q.t0, thi), tgrid >= q.t0), ((q.t0, tlo), tgrid < q.t0)):
                teval = tgrid[mask]
                if teval.size == 0:
                    continue
                tsorted = np.sort(teval) if tspan[1] > tspan[0] else np.sort(teval)[::-1]
                sol = solve_ivp(rhs, tspan, [h40, h40s], method="DOP853",
                                t_eval=tsorted, rtol=min(q.rel_tol * 1e-2, 1e-11),
                                atol=min(q.abs_tol * 1e-2, 1e-12), events=h4_zero)
                if sol.status == 1:
                    tc = sol.t_events[0][0] if sol.t_events[0].size else float("nan")
                    raise GeneratorError(
                        f"h4 crosses zero at t={tc:.6g} for node ({x1v}, {x2v}); "
                        f"restrict the t-domain away from the crossing")
                if not sol.success:
                    raise GeneratorError(f"vertical equation integration failed: {sol.message}")
                row[np.searchsorted(tgrid, sol.t)] = sol.y[0]
            vals[i, j, :] = row
            max_ode_err = max(max_ode_err, q.rel_tol * 1e-2 * float(np.max(np.abs(row))))

    if x1nodes.size == 1 and x2nodes.size == 1:
        h4 = GridField.constant_in_x(tgrid, vals[0, 0, :])
        x_dep = False
    else:
        h4 = GridField(x1nodes, x2nodes, tgrid, vals)
        x_dep = True
    # quintic refit noise dominates the reported bound for second derivatives
    dt = tgrid[1] - tgrid[0]
    interp_err = dt ** 4 * float(np.max(np.abs(vals)))
    err_bound = max(max_ode_err, interp_err, q.abs_tol)

    h4_t = h4.partial(AX_T)
    for p in _lattice(spec.domain, (3, 3, 7)):
        if abs(h4_t.value(p)) < 1e-12:
            raise GeneratorError(f"h4* vanishes at {tuple(p)}; generating function undefined")

    if x_dep:
        # phi~ = ln|h4*| - (ln|h3| + ln|h4|)/2 with x-only h3, so
        # d_i(phi~) = h4*_i/h4* - (h3_i/h3 + h4_i/h4)/2 and
        # d_t(phi~) = h4**/h4* - h4*/(2 h4); w_i = -d_i(phi~)/d_t(phi~).
        def w_comb(hti, ht, h3i, h3v, hi, hv, htt):
            num = hti / ht - (h3i / h3v + hi / hv) * 0.5
            den = htt / ht - (ht / hv) * 0.5
            return -(num / den)

        h4_tt = h4_t.partial(AX_T)
        w = tuple(
            DerivedField([h4_t.partial(ax), h4_t, spec.h3_0.partial(ax),
                          spec.h3_0, h4.partial(ax), h4, h4_tt], w_comb)
            for ax in (AX_X1, AX_X2))
    else:
        w = (ConstField(0.0), ConstField(0.0))

    n_int = DerivedField([h4], lambda b: Jet2.constant(1.0) / (jabs(b) ** 1.5))
    lattice = _lattice(spec.domain, spec.probe_shape)
    n = []
    for one_n, two_n in zip(spec.n1_fns, spec.n2_fns):
        if _is_zero_field(two_n, lattice[:: max(1, len(lattice) // 8)]):
            n.append(one_n)
        else:
            n.append(IntegralField(one_n, two_n, n_int, q.t0,
                                   q.abs_tol, q.rel_tol, q.max_subdivisions))

    g_conf, _ = _psi_fields(spec.psi, spec.source, spec.domain, spec.psi_grid)
    metric = NAdaptedMetric(
        g1=g_conf, g2=g_conf, h3=spec.h3_0, h4=h4, w1=w[0], w2=w[1], n1=n[0], n2=n[1],
        provenance={"type": "type3", "t0": q.t0,
                    "tolerances": {"abs_tol": q.abs_tol, "rel_tol": q.rel_tol},
                    "spec_hash": _spec_hash("type3", _field_desc(spec.h3_0), q.t0)},
    )
    return GeneratedSolution(metric=metric, type_tag="type3", signs={}, t0=q.t0,
                             diagnostics={"ode_error_bound": err_bound},
                             lc_mode=False)


# --------------------------------------------------------------------------
# Type 4
# --------------------------------------------------------------------------

@dataclass
class Type4Spec:
    f: ScalarField
    source: SourceSpec
    h0: float = 1.0
    sigma0: int = 1                        # +1 or -1
    n1_fns: tuple = (ConstField(0.0), ConstField(0.0))
    n2_fns: tuple = (ConstField(0.0), ConstField(0.0))
    w_free: Optional[tuple] = None         # free w_i when upsilon2 = 0
    psi: Union[None, ScalarField, str] = None
    domain: Domain = DEFAULT_DOMAIN
    probe_shape: tuple = (5, 5, 5)
    psi_grid: tuple = (17, 17)

    def __post_init__(self):
        self.f = as_field(self.f)
        self.n1_fns = tuple(as_field(f) for f in self.n1_fns)
        self.n2_fns = tuple(as_field(f) for f in self.n2_fns)
        if self.w_free is not None:
            self.w_free = tuple(as_field(f) for f in self.w_free)
        if self.sigma0 not in (1, -1):
            raise GeneratorError("sigma0 must be +1 or -1")


def generate_type4(spec: Type4Spec, q: QuadratureSettings = QuadratureSettings()) -> GeneratedSolution:
    """Family with constant generating function: h3 = -h0^2 (f*)^2 |sigma|,
    h4 = f^2, sigma integrating the source against f^4."""
    _check_t0(q, spec.domain)
    lattice = _lattice(spec.domain, spec.probe_shape)
    ups2 = spec.source.upsilon2
    f_t = spec.f.partial(AX_T)
    for p in lattice:
        if abs(f_t.value(p)) < 1e-14:
            raise GeneratorError(f"f* vanishes at probe point {tuple(p)}")
        if abs(spec.f.value(p)) < 1e-14:
            raise GeneratorError(f"f crosses zero at probe point {tuple(p)}")

    ups_zero = _is_zero_field(ups2, lattice)
    h0sq = spec.h0 * spec.h0

    if ups_zero:
        sigma = ConstField(float(spec.sigma0))
        sigma_t = ConstField(0.0)
    else:
        sig_int = DerivedField([ups2, spec.f], lambda u, jf: u * (jf ** 4))
        sigma = IntegralField(ConstField(float(spec.sigma0)),
                              ConstField(-h0sq / 16.0), sig_int, q.t0,
                              q.abs_tol, q.rel_tol, q.max_subdivisions)
        sigma_t = sigma.partial(AX_T)

    h3 = DerivedField([f_t, sigma], lambda ft, s: (ft * ft * jabs(s)) * (-h0sq))
    h4 = DerivedField([spec.f], lambda jf: jf * jf)

    if ups_zero:
        w = spec.w_free if spec.w_free is not None else (ConstField(0.0), ConstField(0.0))
    else:
        w = []
        for ax in (AX_X1, AX_X2):
            sig_int_i = DerivedField(
                [ups2.partial(ax), spec.f, ups2, spec.f.partial(ax)],
                lambda ui, jf, u, fi: ui * (jf ** 4) + (u * fi * (jf ** 3)) * 4.0)
            sigma_i = IntegralField(ConstField(0.0), ConstField(-h0sq / 16.0),
                                    sig_int_i, q.t0, q.abs_tol, q.rel_tol,
                                    q.max_subdivisions)
            for p in lattice[:: max(1, len(lattice) // 8)]:
                if abs(sigma_t.value(p)) < 1e-14:
                    raise GeneratorError(f"sigma* vanishes at {tuple(p)}; w_i undefined")
            w.append(DerivedField([sigma_i, sigma_t], lambda a, b: -(a / b)))
        w = tuple(w)

    n_int = DerivedField([f_t, spec.f, sigma], lambda ft, jf, s: (ft * ft) / (jf * jf) * s)
    n = []
    for one_n, two_n in zip(spec.n1_fns, spec.n2_fns):
        if _is_zero_field(two_n, lattice[:: max(1, len(lattice) // 8)]):
            n.append(one_n)
        else:
            n.append(IntegralField(one_n, two_n, n_int, q.t0,
                                   q.abs_tol, q.rel_tol, q.max_subdivisions))

    g_conf, _ = _psi_fields(spec.psi, spec.source, spec.domain, spec.psi_grid)
    metric = NAdaptedMetric(
        g1=g_conf, g2=g_conf, h3=h3, h4=h4, w1=w[0], w2=w[1], n1=n[0], n2=n[1],
        provenance={"type": "type4", "t0": q.t0, "sigma0": spec.sigma0,
                    "h0": spec.h0,
                    "spec_hash": _spec_hash("type4", _field_desc(spec.f), q.t0)},
    )
    # by-construction algebraic identity: sqrt|h3| = h0 sqrt|sigma| |f*|
    for p in lattice[:: max(1, len(lattice) // 8)]:
        lhs = math.sqrt(abs(h3.value(p)))
        rhs = abs(spec.h0) * math.sqrt(abs(sigma.value(p))) * abs(f_t.value(p))
        if abs(lhs - rhs) > 1e-9 * max(1.0, abs(lhs)):
            raise GeneratorError("type 4 assembly identity violated (internal error)")
    err = getattr(sigma, "last_error_bound", 0.0) if not ups_zero else 0.0
    return GeneratedSolution(metric=metric, type_tag="type4",
                             signs={"sigma0": spec.sigma0}, t0=q.t0,
                             diagnostics={"quadrature_error_bound": max(err, q.abs_tol)},
                             lc_mode=ups_zero and spec.w_free is None)


# --------------------------------------------------------------------------
# Levi-Civita extraction residuals an the omega condition
# --------------------------------------------------------------------------

def lc_residuals(m: NAdaptedMetric, lattice) -> dict:
    """Residuals of the four extraction conditions on a probe lattice:
    (a) w_i* - e_i ln|h4|, (b) e_k w_i - e_i w_k, (c) n_i*, (d) d_i n_k - d_k n_i.
    """
    out = {"w_star": [], "w_curl": [], "n_star": [], "n_curl": [], "points": []}
    for p in lattice:
        p = np.asarray(p, float)
        jh4 = m.h4.jet2(p)
        if abs(jh4.value) < 1e-300:
            raise DomainError(f"h4 vanishes at {tuple(p)}; ln|h4| undefined")
        jw = [m.w1.jet2(p), m.w2.jet2(p)]
        jn = [m.n1.jet2(p), m.n2.jet2(p)]
        wv = [jw[0].value, jw[1].value]
        nv = [jn[0].value, jn[1].value]

        def e_of(jet, i):
            return jet.d(i) - wv[i] * jet.d(AX_T) - nv[i] * jet.d(AX_Y)

        a = max(abs(jw[i].d(AX_T) - e_of(jh4, i) / jh4.value) for i in (0, 1))
        b = abs(e_of(jw[1], 0) - e_of(jw[0], 1))
        c = max(abs(jn[i].d(AX_T)) for i in (0, 1))
        d = abs(jn[1].d(AX_X1) - jn[0].d(AX_X2))
        out["w_star"].append(a)
        out["w_curl"].append(b)
        out["n_star"].append(c)
        out["n_curl"].append(d)
        out["points"].append(tuple(p))
    for key in ("w_star", "w_curl", "n_star", "n_curl"):
        arr = np.asarray(out[key])
        out[key] = {"per_point": arr, "max_abs": float(np.max(arr)),
                    "mean_abs": float(np.mean(arr))}
    return out


def omega_residual(m: NAdaptedMetric, lattice) -> dict:
    """Per-point |d_k omega + w_k omega* + n_k d_y omega| for k = 1, 2."""
    if m.omega is None:
        raise GeneratorError("metric has no omega field")
    rows = []
    for p in lattice:
        p = np.asarray(p, float)
        jo = m.omega.jet2(p)
        wv = [m.w1.value(p), m.w2.value(p)]
        nv = [m.n1.value(p), m.n2.value(p)]
        rows.append([abs(jo.d(k) + wv[k] * jo.d(AX_T) + nv[k] * jo.d(AX_Y))
                     for k in (0, 1)])
    arr = np.asarray(rows)
    return {"per_point": arr, "max_abs": float(np.max(arr))}


# --------------------------------------------------------------------------
# de Sitter model
# --------------------------------------------------------------------------

@dataclass
class DeSitterSpec:
    a0: float
    hubble: float
    tw_fns: tuple = (ConstField(0.0), ConstField(0.0))   # t-dependent w-parts
    sw_fns: tuple = (ConstField(0.0), ConstField(0.0))   # x-dependent w-parts
    eta3: ScalarField = dc_field(default_factory=lambda: ConstField(1.0))
    h4_0: ScalarField = dc_field(default_factory=lambda: ConstField(1.0))
    n1_fns: tuple = (ConstField(0.0), ConstField(0.0))
    domain: Domain = DEFAULT_DOMAIN
    probe_shape: tuple = (5, 5, 5)

    def __post_init__(self):
        self.tw_fns = tuple(as_field(f) for f in self.tw_fns)
        self.sw_fns = tuple(as_field(f) for f in self.sw_fns)
        self.eta3 = as_field(self.eta3)
        self.h4_0 = as_field(self.h4_0)
        self.n1_fns = tuple(as_field(f) for f in self.n1_fns)


def build_desitter(spec: DeSitterSpec) -> GeneratedSolution:
    """Exponential-expansion model: conformal factor q = a0 e^{Ht} q~(x) with
    ln|q~| = H * integral of sw_i dx^i = -H h4_0(x), using the closure
    sw_k = -d_k h4_0.  The conformal-invariance residual |d_i q - w_i q*| and
    the extraction residuals are evaluated and stored, never silenced.
    """
    H = float(spec.hubble)
    a0 = float(spec.a0)
    lattice = _lattice(spec.domain, spec.probe_shape)

    for p in lattice:
        js1 = spec.sw_fns[0].jet2(p)
        js2 = spec.sw_fns[1].jet2(p)
        if abs(js1.d(AX_X2) - js2.d(AX_X1)) > 1e-10:
            raise GeneratorError(f"sw is not curl-free at {tuple(p)}")
        jn1 = spec.n1_fns[0].jet2(p)
        jn2 = spec.n1_fns[1].jet2(p)
        if abs(jn1.d(AX_X2) - jn2.d(AX_X1)) > 1e-10:
            raise GeneratorError(f"n1 functions are not curl-free at {tuple(p)}")
        jh = spec.h4_0.jet2(p)
        for k, js in ((0, js1), (1, js2)):
            if abs(js.value + jh.d(k)) > 1e-10:
                raise GeneratorError(
                    f"closure sw_k = -d_k h4_0 violated at {tuple(p)} (k={k})")

    w = tuple(DerivedField([tw, sw], lambda a, b: a + b)
              for tw, sw in zip(spec.tw_fns, spec.sw_fns))

    exp_ht = ExprField("exp(hb*t)", {"hb": H})
    qfield = DerivedField([exp_ht, spec.h4_0],
                          lambda e, h: (e * jexp(h * (-H))) * a0)

    h3 = DerivedField([spec.eta3, exp_ht],
                      lambda e3, ex: -(e3 / (ex * ex)) / (a0 * a0))

    metric = NAdaptedMetric(
        g1=ConstField(1.0), g2=ConstField(1.0), h3=h3, h4=spec.h4_0,
        w1=w[0], w2=w[1], n1=spec.n1_fns[0], n2=spec.n1_fns[1],
        qfactor=qfield,
        provenance={"type": "desitter", "a0": a0, "H": H,
                    "spec_hash": _spec_hash("desitter", a0, H)},
    )

    conf = []
    for p in lattice:
        jq = qfield.jet2(p)
        conf.append(max(abs(jq.d(k) - w[k].value(p) * jq.d(AX_T)) for k in (0, 1)))
    conf = np.asarray(conf)
    lc = lc_residuals(metric, lattice)
    return GeneratedSolution(
        metric=metric, type_tag="desitter", signs={}, t0=0.0,
        diagnostics={
            "confeq": {"per_point": conf, "max_abs": float(np.max(conf))},
            "lc": {k: lc[k] for k in ("w_star", "w_curl", "n_star", "n_curl")},
        },
        lc_mode=True,
    )
