"""N-adapted metrics on the 2+2 split chart.

A metric is stored through its eight ansatz coefficients: the horizontal pair
(g1, g2), the vertical pair (h3, h4), and the N-coefficients (w1, w2) and
(n1, n2) that elongate dt and dy.  An optional vertical conformal factor
omega(x, t, y) and horizontal conformal factor q(x, t) scale the blocks.
Intended signature is (+, +, -, +): g1, g2 > 0, h3 < 0, h4 > 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from anholo.exprdsl import Jet2
from anholo.fields import (
    AX_T,
    AX_X1,
    AX_X2,
    AX_Y,
    ConstField,
    ExprField,
    GridField,
    ScalarField,
    as_field,
)

COEFF_NAMES = ("g1", "g2", "h3", "h4", "w1", "w2", "n1", "n2")

# expected sign of each diagonal coefficient under the (+,+,-,+) signature
_SIGNS = {"g1": +1.0, "g2": +1.0, "h3": -1.0, "h4": +1.0}


class GeometryError(ValueError):
    pass


@dataclass
class NAdaptedMetric:
    g1: ScalarField
    g2: ScalarField
    h3: ScalarField
    h4: ScalarField
    w1: ScalarField = field(default_factory=lambda: ConstField(0.0))
    w2: ScalarField = field(default_factory=lambda: ConstField(0.0))
    n1: ScalarField = field(default_factory=lambda: ConstField(0.0))
    n2: ScalarField = field(default_factory=lambda: ConstField(0.0))
    omega: Optional[ScalarField] = None
    qfactor: Optional[ScalarField] = None
    signature: tuple = (1, 1, -1, 1)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in COEFF_NAMES:
            setattr(self, name, as_field(getattr(self, name)))
        if self.omega is not None:
            self.omega = as_field(self.omega)
        if self.qfactor is not None:
            self.qfactor = as_field(self.qfactor)

    def coeffs(self) -> dict:
        return {name: getattr(self, name) for name in COEFF_NAMES}

    def diag(self) -> Sequence[ScalarField]:
        return (self.g1, self.g2, self.h3, self.h4)

    def ncoeff(self, i: int, a: int) -> ScalarField:
        """N_i^a for horizontal i in (0, 1) and vertical a in (2, 3)."""
        return ((self.w1, self.w2), (self.n1, self.n2))[a - 2][i]

    def signature_diagnostics(self, lattice) -> list:
        """Report points where the coefficient signs break (+,+,-,+).

        A diagnostic pass over probe points, not a proof.
        """
        bad = []
        for p in lattice:
            for name in ("g1", "g2", "h3", "h4"):
                v = getattr(self, name).value(p)
                if v * _SIGNS[name] <= 0.0:
                    bad.append((tuple(np.asarray(p, float)), name, v))
            if self.omega is not None and self.omega.value(p) <= 0.0:
                bad.append((tuple(np.asarray(p, float)), "omega", self.omega.value(p)))
        return bad


@dataclass
class Polarizations:
    """Deformation data eta_alpha, eta_i^a carrying a prime metric to a target.

    mode selects how the N-coefficient polarizations combine with the prime's
    N-coefficients: "additive" (N = eta + N0, the default) or "multiplicative"
    (N = eta * N0, which cannot create N-coefficients a prime lacks).
    """
    eta1: ScalarField = field(default_factory=lambda: ConstField(1.0))
    eta2: ScalarField = field(default_factory=lambda: ConstField(1.0))
    eta3: ScalarField = field(default_factory=lambda: ConstField(1.0))
    eta4: ScalarField = field(default_factory=lambda: ConstField(1.0))
    etaN31: ScalarField = field(default_factory=lambda: ConstField(0.0))
    etaN32: ScalarField = field(default_factory=lambda: ConstField(0.0))
    etaN41: ScalarField = field(default_factory=lambda: ConstField(0.0))
    etaN42: ScalarField = field(default_factory=lambda: ConstField(0.0))
    mode: str = "additive"

    def __post_init__(self):
        if self.mode not in ("additive", "multiplicative"):
            raise GeometryError(f"unknown polarization mode {self.mode!r}")
        for name in ("eta1", "eta2", "eta3", "eta4",
                     "etaN31", "etaN32", "etaN41", "etaN42"):
            setattr(self, name, as_field(getattr(self, name)))


@dataclass
class SourceSpec:
    """Diagonalized effective source: diag[ups2, ups2, ups4, ups4] with
    ups2 = ups2(x1, x2, t) and ups4 = ups4(x1, x2) only."""
    upsilon2: ScalarField = field(default_factory=lambda: ConstField(0.0))
    upsilon4: ScalarField = field(default_factory=lambda: ConstField(0.0))

    def __post_init__(self):
        from anholo.exprdsl import DomainError
        self.upsilon2 = as_field(self.upsilon2)
        self.upsilon4 = as_field(self.upsilon4)
        for p in _default_probe():
            try:
                j = self.upsilon4.jet2(p)
            except DomainError:
                continue
            if abs(j.d(AX_T)) > 0.0 or abs(j.d(AX_Y)) > 0.0:
                raise GeometryError("upsilon4 must not depend on t or y")


def _default_probe():
    vals = (-0.7, 0.1, 0.9)
    return [np.array([a, b, c, 0.3]) for a in vals for b in vals for c in (0.5, 1.0, 1.5)]


def probe_lattice(bounds=((-1.0, 1.0), (-1.0, 1.0), (0.5, 1.5)), shape=(5, 5, 5), y: float = 0.0):
    """Rectangular probe lattice over (x1, x2, t) at fixed y."""
    axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(bounds, shape)]
    pts = []
    for a in axes[0]:
        for b in axes[1]:
            for c in axes[2]:
                pts.append(np.array([a, b, c, y]))
    return pts


def apply_polarizations(prime: NAdaptedMetric, pol: Polarizations,
                        check_lattice=None) -> NAdaptedMetric:
    """Deform a prime metric: g_i = eta_i g0_i, h_a = eta_a h0_a, N per mode."""
    from anholo.fields import DerivedField

    def scaled(eta, base):
        return DerivedField([eta, base], lambda a, b: a * b)

    def combined(eta, base):
        if pol.mode == "multiplicative":
            return DerivedField([eta, base], lambda a, b: a * b)
        return DerivedField([eta, base], lambda a, b: a + b)

    target = NAdaptedMetric(
        g1=scaled(pol.eta1, prime.g1),
        g2=scaled(pol.eta2, prime.g2),
        h3=scaled(pol.eta3, prime.h3),
        h4=scaled(pol.eta4, prime.h4),
        w1=combined(pol.etaN31, prime.w1),
        w2=combined(pol.etaN32, prime.w2),
        n1=combined(pol.etaN41, prime.n1),
        n2=combined(pol.etaN42, prime.n2),
        omega=prime.omega,
        qfactor=prime.qfactor,
        provenance={
            "kind": "polarized",
            "prime": prime.provenance or {"kind": "anonymous"},
            "mode": pol.mode,
        },
    )
    if check_lattice is not None:
        bad = target.signature_diagnostics(check_lattice)
        if bad:
            raise GeometryError(f"signature violated at {len(bad)} probe points; first: {bad[0]}")
    return target


def coefficient_jets(m: NAdaptedMetric, p) -> dict:
    p = np.asarray(p, dtype=float)
    jets = {name: getattr(m, name).jet2(p) for name in COEFF_NAMES}
    jets["omega"] = m.omega.jet2(p) if m.omega is not None else Jet2.constant(1.0)
    jets["qfactor"] = m.qfactor.jet2(p) if m.qfactor is not None else Jet2.constant(1.0)
    return jets


def coordinate_matrix_jets(m: NAdaptedMetric, p) -> np.ndarray:
    """4x4 array of Jet2 entries of the coordinate-basis metric at p."""
    j = coefficient_jets(m, p)
    om2 = j["omega"] * j["omega"]
    q2 = j["qfactor"] * j["qfactor"]
    g = [j["g1"], j["g2"]]
    h3, h4 = j["h3"], j["h4"]
    w = [j["w1"], j["w2"]]
    n = [j["n1"], j["n2"]]

    M = np.empty((4, 4), dtype=object)
    for i in range(2):
        for k in range(2):
            entry = om2 * (w[i] * w[k] * h3 + n[i] * n[k] * h4)
            if i == k:
                entry = entry + g[i]
            M[i, k] = entry
    for i in range(2):
        M[i, 2] = M[2, i] = om2 * (w[i] * h3)
        M[i, 3] = M[3, i] = om2 * (n[i] * h4)
    M[2, 2] = om2 * h3
    M[2, 3] = M[3, 2] = Jet2.constant(0.0)
    M[3, 3] = om2 * h4
    for i in range(4):
        for k in range(4):
            M[i, k] = q2 * M[i, k]
    return M


def to_coordinate_matrix(m: NAdaptedMetric, p) -> np.ndarray:
    """Coordinate-basis metric g_{alpha beta}(p) as a symmetric 4x4 float array."""
    M = coordinate_matrix_jets(m, p)
    out = np.array([[M[i, k].value for k in range(4)] for i in range(4)], dtype=float)
    return out


def frame_apply(m: NAdaptedMetric, f: ScalarField, i: int, p) -> float:
    """N-elongated horizontal derivative e_i f = d_i f - w_i f* - n_i df/dy."""
    if i not in (0, 1):
        raise GeometryError("frame_apply takes a horizontal index 0 or 1")
    p = np.asarray(p, dtype=float)
    jf = as_field(f).jet2(p)
    w = (m.w1, m.w2)[i].value(p)
    n = (m.n1, m.n2)[i].value(p)
    return jf.d(i) - w * jf.d(AX_T) - n * jf.d(AX_Y)


def frame_apply_jet(w: Sequence[Jet2], n: Sequence[Jet2], jf: Jet2, i: int) -> float:
    """e_i applied to a quantity given by its jet, N-coefficients as jets."""
    return jf.d(i) - w[i].value * jf.d(AX_T) - n[i].value * jf.d(AX_Y)


@dataclass
class AnholonomyCoeffs:
    """Nontrivial anholonomy coefficients of the N-adapted frame.

    omega[a-2][i][j] = Omega^a_{ij} = e_j N_i^a - e_i N_j^a  (a in 2..3),
    w_mixed[b-2][i][a-2] = w^b_{ia} = d_a N_i^b.
    """
    omega: np.ndarray
    w_mixed: np.ndarray


def anholonomy(m: NAdaptedMetric, p) -> AnholonomyCoeffs:
    p = np.asarray(p, dtype=float)
    jets = {name: getattr(m, name).jet2(p) for name in ("w1", "w2", "n1", "n2")}
    N = [[jets["w1"], jets["n1"]], [jets["w2"], jets["n2"]]]  # N[i][a-2]
    w = (jets["w1"], jets["w2"])
    n = (jets["n1"], jets["n2"])

    omega = np.zeros((2, 2, 2))
    for a in range(2):
        for i in range(2):
            for jdx in range(2):
                ej_Ni = frame_apply_jet(w, n, N[i][a], jdx)
                ei_Nj = frame_apply_jet(w, n, N[jdx][a], i)
                omega[a, i, jdx] = ej_Ni - ei_Nj

    w_mixed = np.zeros((2, 2, 2))  # [b-2][i][a-2] = d_a N_i^b
    for b in range(2):
        for i in range(2):
            for a in range(2):
                w_mixed[b, i, a] = N[i][b].d(2 + a)
    return AnholonomyCoeffs(omega=omega, w_mixed=w_mixed)


# --- serialization ----------------------------------------------------------

def _field_to_doc(f: ScalarField):
    if isinstance(f, ConstField):
        return {"kind": "expression", "source": repr(f.c)}
    if isinstance(f, ExprField):
        return {"kind": "expression", "source": f.source}
    if isinstance(f, GridField):
        return {
            "kind": "grid",
            "domain": {
                "x1": [float(f.x1grid[0]), float(f.x1grid[-1])],
                "x2": [float(f.x2grid[0]), float(f.x2grid[-1])],
                "t": [float(f.tgrid[0]), float(f.tgrid[-1])],
            },
            "shape": list(f.values.shape),
            "values": [float(v) for v in f.values.reshape(-1)],
        }
    raise GeometryError(
        f"{type(f).__name__} does not serialize directly; tabulate it to a grid first")


def _field_from_doc(doc, constants) -> ScalarField:
    if doc["kind"] == "expression":
        return ExprField(doc["source"], constants)
    if doc["kind"] == "grid":
        shape = doc["shape"]
        dom = doc["domain"]
        ax = [np.linspace(dom[k][0], dom[k][1], shape[idx]) if shape[idx] > 1
              else np.array([dom[k][0]])
              for idx, k in enumerate(("x1", "x2", "t"))]
        vals = np.asarray(doc["values"], float).reshape(shape)
        return GridField(ax[0], ax[1], ax[2], vals)
    raise GeometryError(f"unknown field kind {doc.get('kind')!r}")


def metric_to_doc(m: NAdaptedMetric, constants: Optional[dict] = None) -> dict:
    doc = {
        "signature": list(m.signature),
        "coefficients": {name: _field_to_doc(getattr(m, name)) for name in COEFF_NAMES},
        "constants": dict(constants or {}),
        "provenance": m.provenance,
    }
    if m.omega is not None:
        doc["coefficients"]["omega"] = _field_to_doc(m.omega)
    if m.qfactor is not None:
        doc["coefficients"]["qfactor"] = _field_to_doc(m.qfactor)
    return doc


def metric_from_doc(doc: dict) -> NAdaptedMetric:
    constants = doc.get("constants", {})
    co = doc["coefficients"]
    kwargs = {name: _field_from_doc(co[name], constants) for name in COEFF_NAMES}
    if "omega" in co:
        kwargs["omega"] = _field_from_doc(co["omega"], constants)
    if "qfactor" in co:
        kwargs["qfactor"] = _field_from_doc(co["qfactor"], constants)
    return NAdaptedMetric(signature=tuple(doc.get("signature", (1, 1, -1, 1))),
                          provenance=doc.get("provenance", {}), **kwargs)


def save_metric(m: NAdaptedMetric, path: str, constants: Optional[dict] = None) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(metric_to_doc(m, constants), fp, indent=1)


def load_metric(path: str) -> NAdaptedMetric:
    with open(path, "r", encoding="utf-8") as fp:
        return metric_from_doc(json.load(fp))
