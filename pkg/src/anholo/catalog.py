"""Prime cosmological metrics and their defining consistency checks.

Charts follow the 2+2 convention with y^3 = t: spherical FRW uses
(x1, x2, t, y) = (r, theta, t, phi); Cartesian metrics use (x, z, t, y).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from anholo.exprdsl import DomainError
from anholo.fields import AX_T, ConstField, DerivedField, ExprField, ScalarField, as_field
from anholo.geometry import NAdaptedMetric


@dataclass(frozen=True)
class KasnerExponents:
    p1: float
    p2: float
    p3: float


@dataclass
class BianchiData:
    """Diagonal tensor n(t) and vector b(t) entering the frame structure
    constants of spatially homogeneous models."""
    n_diag: tuple   # three callables or constants: n^11(t), n^22(t), n^33(t)
    b: tuple        # three callables or constants: b_1(t), b_2(t), b_3(t)

    def n_matrix(self, t: float) -> np.ndarray:
        return np.diag([_call(v, t) for v in self.n_diag])

    def b_vector(self, t: float) -> np.ndarray:
        return np.array([_call(v, t) for v in self.b])


def _call(v, t: float) -> float:
    return float(v(t)) if callable(v) else float(v)


def frw_metric(a: Union[ScalarField, str, float], kappa: int = 0,
               chart: str = "cartesian") -> NAdaptedMetric:
    """FRW prime metric.

    Cartesian (flat slicing, kappa must be 0): coefficients (a^2, a^2, -1, a^2).
    Spherical: g1 = a^2/(1 - kappa r^2), g2 = a^2 r^2, h3 = -1,
    h4 = a^2 r^2 sin^2(x2), with x1 = r and x2 = theta.
    """
    if kappa not in (-1, 0, 1):
        raise ValueError("kappa must be -1, 0 or +1")
    a = as_field(a)
    a2 = DerivedField([a], lambda j: j * j)
    if chart == "cartesian":
        if kappa != 0:
            raise ValueError("the Cartesian chart is the flat-slicing form; use chart='spherical' for kappa != 0")
        return NAdaptedMetric(
            g1=a2, g2=a2, h3=ConstField(-1.0), h4=a2,
            provenance={"kind": "frw", "chart": "cartesian", "kappa": 0},
        )
    if chart != "spherical":
        raise ValueError("chart must be 'cartesian' or 'spherical'")
    r2fac = ExprField(f"1-({kappa})*x1*x1")

    def g1_fn(ja, jf):
        if jf.value <= 0.0:
            raise DomainError("1 - kappa r^2 must stay positive on the chart")
        return ja * ja / jf

    sin2 = ExprField("sin(x2)*sin(x2)")
    return NAdaptedMetric(
        g1=DerivedField([a, r2fac], g1_fn),
        g2=DerivedField([a, ExprField("x1*x1")], lambda ja, jr: ja * ja * jr),
        h3=ConstField(-1.0),
        h4=DerivedField([a, ExprField("x1*x1"), sin2], lambda ja, jr, js: ja * ja * jr * js),
        provenance={"kind": "frw", "chart": "spherical", "kappa": kappa},
    )


def friedmann_residuals(a: ScalarField, rho: ScalarField, p: ScalarField,
                        kappa: int, tgrid) -> dict:
    """Residuals of the two Friedmann equations and the continuity equation.

    Returns per-point arrays for |H^2 - rho/3 + kappa/a^2|,
    |a''/a + (rho + 3p)/6| and |rho' + 3H(rho + p)|.
    """
    a, rho, p = as_field(a), as_field(rho), as_field(p)
    r1, r2, rc = [], [], []
    for tv in np.asarray(tgrid, float):
        pt = np.array([0.0, 0.0, tv, 0.0])
        ja, jr, jp = a.jet2(pt), rho.jet2(pt), p.jet2(pt)
        Hv = ja.d(AX_T) / ja.value
        r1.append(abs(Hv ** 2 - jr.value / 3.0 + kappa / ja.value ** 2))
        r2.append(abs(ja.d2(AX_T, AX_T) / ja.value + (jr.value + 3.0 * jp.value) / 6.0))
        rc.append(abs(jr.d(AX_T) + 3.0 * Hv * (jr.value + jp.value)))
    return {"friedmann1": np.array(r1), "friedmann2": np.array(r2),
            "continuity": np.array(rc)}


def kasner_metric(p: KasnerExponents) -> NAdaptedMetric:
    """Kasner metric (t^2p1, t^2p3, -1, t^2p2), valid on t-domains excluding 0."""
    consts = {"p1": p.p1, "p2": p.p2, "p3": p.p3}
    return NAdaptedMetric(
        g1=ExprField("t^(2*p1)", consts),
        g2=ExprField("t^(2*p3)", consts),
        h3=ConstField(-1.0),
        h4=ExprField("t^(2*p2)", consts),
        provenance={"kind": "kasner", "p": [p.p1, p.p2, p.p3]},
    )


def kasner_condition(p: KasnerExponents) -> dict:
    """Evaluate 2 P3 = P2 - P1 with P1 the positive root of sum of squares."""
    P3 = p.p1 * p.p2 + p.p2 * p.p3 + p.p1 * p.p3
    P2 = p.p1 + p.p2 + p.p3
    P1 = float(np.sqrt(p.p1 ** 2 + p.p2 ** 2 + p.p3 ** 2))
    lhs = 2.0 * P3
    rhs = P2 - P1
    return {"holds": abs(lhs - rhs) < 1e-12, "lhs": lhs, "rhs": rhs}


def godel_metric(a: float) -> tuple:
    """Goedel rotating universe with scale a > 0.

    Coefficients g1 = a^2, g2 = a^2 e^{2 x1}/2, h3 = -a^2, h4 = a^2,
    w2 = -e^{x1} (the dt-dz cross term of the line element sits in w2; w1 = 0).
    Returns (metric, parameters) with the rotation/cosmological-constant record.
    """
    if a <= 0:
        raise ValueError("Goedel scale must be positive")
    consts = {"ga": float(a)}
    metric = NAdaptedMetric(
        g1=ExprField("ga*ga", consts),
        g2=ExprField("ga*ga*exp(2*x1)/2", consts),
        h3=ExprField("-(ga*ga)", consts),
        h4=ExprField("ga*ga", consts),
        w1=ConstField(0.0),
        w2=ExprField("-exp(x1)", consts),
        provenance={"kind": "godel", "a": float(a)},
    )
    params = {
        "omega_sq": 1.0 / (2.0 * a * a),
        "epsilon_times_8piG": 1.0 / (a * a),
        "lambda": -1.0 / (2.0 * a * a),
    }
    return metric, params


_EPS3 = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    _EPS3[_i, _j, _k] = 1.0
    _EPS3[_j, _i, _k] = -1.0


def bianchi_structure_constants(data: BianchiData, t: float) -> np.ndarray:
    """Frame structure constants w^g_{ab} = eps_{abt} n^{tg} + d^g_b b_a - d^g_a b_b
    over the three spatial frame directions; antisymmetric in (a, b)."""
    n = data.n_matrix(t)
    if np.max(np.abs(n - np.diag(np.diag(n)))) > 0:
        raise ValueError("n tensor must be diagonal")
    b = data.b_vector(t)
    w = np.zeros((3, 3, 3))  # w[g, a, b]
    for g in range(3):
        for a in range(3):
            for bb in range(3):
                w[g, a, bb] = (sum(_EPS3[a, bb, tau] * n[tau, g] for tau in range(3))
                               + (b[a] if g == bb else 0.0)
                               - (b[bb] if g == a else 0.0))
    return w
