"""Connections and curvature at a point: canonical d-connection, its torsion,
the distortion to Levi-Civita, the separated Ricci blocks, and the independent
coordinate-basis Levi-Civita curvature.

All tables live in the N-adapted frame with indices ordered (x1, x2, t, y);
horizontal indices are 0..1 and vertical 2..3.  Connection tables conn[g, a, b]
mean the coefficient of e_g in D_{e_b} e_a, i.e. the differentiation direction
is the last index.  The conformal factors omega and q do not enter the
d-connection tables (they belong to the coordinate-basis metric and its
curvature); the d-formalism acts on the ansatz blocks themselves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from anholo.exprdsl import Jet2
from anholo.fields import AX_T, AX_Y
from anholo.geometry import NAdaptedMetric, anholonomy, coordinate_matrix_jets

H = (0, 1)
V = (2, 3)

DEGENERACY_EPS = 1e-14


class DegenerateMetricError(ValueError):
    pass


@dataclass
class DConnectionCoeffs:
    """Canonical d-connection coefficient tables.

    Lh[i, j, k] = L^i_jk, Lv[a, b, k] = L^(2+a)_(2+b)k,
    Ch[i, j, c] = C^i_j(2+c), Cv[a, b, c] = C^(2+a)_(2+b)(2+c).
    """
    Lh: np.ndarray
    Lv: np.ndarray
    Ch: np.ndarray
    Cv: np.ndarray

    def as_array(self) -> np.ndarray:
        conn = np.zeros((4, 4, 4))
        conn[0:2, 0:2, 0:2] = self.Lh
        conn[2:4, 2:4, 0:2] = self.Lv
        conn[0:2, 0:2, 2:4] = self.Ch
        conn[2:4, 2:4, 2:4] = self.Cv
        return conn


@dataclass
class TorsionCoeffs:
    """Nontrivial torsion families of the canonical d-connection.

    hh[i, j, k] = T^i_jk, hv[i, j, a] = T^i_j(2+a), vh[a, j, i] = T^(2+a)_ji,
    mixed[c, a, j] = T^(2+c)_(2+a)j, vv[a, b, c] = T^(2+a)_(2+b)(2+c).
    """
    hh: np.ndarray
    hv: np.ndarray
    vh: np.ndarray
    mixed: np.ndarray
    vv: np.ndarray

    def as_array(self) -> np.ndarray:
        T = np.zeros((4, 4, 4))
        T[0:2, 0:2, 0:2] = self.hh
        for i in H:
            for j in H:
                for a in V:
                    T[i, j, a] = self.hv[i, j, a - 2]
                    T[i, a, j] = -self.hv[i, j, a - 2]
        for a in V:
            for j in H:
                for i in H:
                    T[a, j, i] = self.vh[a - 2, j, i]
        for c in V:
            for a in V:
                for j in H:
                    T[c, a, j] = self.mixed[c - 2, a - 2, j]
                    T[c, j, a] = -self.mixed[c - 2, a - 2, j]
        T[2:4, 2:4, 2:4] = self.vv
        return T

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(f))) for f in
                   (self.hh, self.hv, self.vh, self.mixed, self.vv))


@dataclass
class DistortionCoeffs:
    """Distortion Z with Gamma_LC = Gamma_hat + Z; the pure-horizontal and
    pure-vertical families vanish identically, as does Z^a_bk."""
    Zajk: np.ndarray   # [a, j, k]
    Zibk: np.ndarray   # [i, b, k]
    Zikb: np.ndarray   # [i, k, b]
    Zabk: np.ndarray   # [a, b, k] (identically zero)
    Zajb: np.ndarray   # [a, j, b]
    Ziab: np.ndarray   # [i, a, b]

    def as_array(self) -> np.ndarray:
        Z = np.zeros((4, 4, 4))
        for a in V:
            for j in H:
                for k in H:
                    Z[a, j, k] = self.Zajk[a - 2, j, k]
        for i in H:
            for b in V:
                for k in H:
                    Z[i, b, k] = self.Zibk[i, b - 2, k]
                    Z[i, k, b] = self.Zikb[i, k, b - 2]
        for a in V:
            for b in V:
                for k in H:
                    Z[a, b, k] = self.Zabk[a - 2, b - 2, k]
        for a in V:
            for j in H:
                for b in V:
                    Z[a, j, b] = self.Zajb[a - 2, j, b - 2]
        for i in H:
            for a in V:
                for b in V:
                    Z[i, a, b] = self.Ziab[i, a - 2, b - 2]
        return Z

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(f))) for f in
                   (self.Zajk, self.Zibk, self.Zikb, self.Zabk, self.Zajb, self.Ziab))


@dataclass
class RicciBlocks:
    """Separated Ricci blocks of the canonical d-connection for the ansatz
    with t-independent horizontal coefficients."""
    r11: float
    r33: float
    r3k: np.ndarray
    r4k: np.ndarray


@dataclass
class CoordinateCurvature:
    metric: np.ndarray
    metric_inv: np.ndarray
    christoffel: np.ndarray   # Gamma[a, m, n], symmetric in (m, n)
    ricci: np.ndarray
    scalar: float
    einstein: np.ndarray      # G_{mn}

    def einstein_mixed(self) -> np.ndarray:
        return self.metric_inv @ self.einstein

    def ricci_mixed(self) -> np.ndarray:
        return self.metric_inv @ self.ricci


class _PointData:
    """Jets and frame-derivative helpers for one metric at one point."""

    def __init__(self, m: NAdaptedMetric, p):
        p = np.asarray(p, dtype=float)
        self.p = p
        names = ("g1", "g2", "h3", "h4", "w1", "w2", "n1", "n2")
        self.j = {name: getattr(m, name).jet2(p) for name in names}
        self.G = [self.j["g1"], self.j["g2"], self.j["h3"], self.j["h4"]]
        self.gval = np.array([jet.value for jet in self.G])
        if np.any(np.abs(self.gval) < DEGENERACY_EPS):
            raise DegenerateMetricError(f"degenerate block coefficient at {tuple(p)}")
        self.ginv = 1.0 / self.gval
        # N[i][a-2] jets
        self.N = [[self.j["w1"], self.j["n1"]], [self.j["w2"], self.j["n2"]]]
        self.wval = np.array([self.j["w1"].value, self.j["w2"].value])
        self.nval = np.array([self.j["n1"].value, self.j["n2"].value])

    def e(self, alpha: int, jet: Jet2) -> float:
        """Frame derivative e_alpha of a jetted scalar."""
        if alpha in H:
            return (jet.d(alpha) - self.wval[alpha] * jet.d(AX_T)
                    - self.nval[alpha] * jet.d(AX_Y))
        return jet.d(alpha)

    def gfr(self, al: int, be: int) -> float:
        return self.gval[al] if al == be else 0.0

    def ginvf(self, al: int, be: int) -> float:
        return self.ginv[al] if al == be else 0.0

    def eN(self, alpha: int, i: int, a: int) -> float:
        """e_alpha applied to N_i^a (a in 2..3)."""
        return self.e(alpha, self.N[i][a - 2])

    def omega_coeffs(self) -> np.ndarray:
        om = np.zeros((2, 2, 2))  # [a-2, i, j]
        for a in V:
            for i in H:
                for j in H:
                    om[a - 2, i, j] = self.eN(j, i, a) - self.eN(i, j, a)
        return om

    def struct(self) -> np.ndarray:
        """Structure coefficients c[al, be, gm] with [e_al, e_be] = c e_gm."""
        c = np.zeros((4, 4, 4))
        om = self.omega_coeffs()
        for i in H:
            for j in H:
                for a in V:
                    c[i, j, a] = om[a - 2, i, j]
        for i in H:
            for a in V:
                for b in V:
                    dab = self.N[i][b - 2].d(a)
                    c[i, a, b] = dab
                    c[a, i, b] = -dab
        return c


def canonical_dconnection(m: NAdaptedMetric, p) -> DConnectionCoeffs:
    """Canonical d-connection coefficients at p for diagonal h/v blocks."""
    d = _PointData(m, p)
    Lh = np.zeros((2, 2, 2))
    for i in H:
        for j in H:
            for k in H:
                val = 0.0
                if j == i:
                    val += d.e(k, d.G[i])
                if k == i:
                    val += d.e(j, d.G[i])
                if j == k:
                    val -= d.e(i, d.G[j])
                Lh[i, j, k] = 0.5 * d.ginv[i] * val
    Lv = np.zeros((2, 2, 2))  # [a-2, b-2, k]
    for a in V:
        for b in V:
            for k in H:
                val = 0.0
                if b == a:
                    val += d.e(k, d.G[a])
                val -= d.gval[a] * d.N[k][a - 2].d(b)
                val -= d.gval[b] * d.N[k][b - 2].d(a)
                Lv[a - 2, b - 2, k] = d.eN(b, k, a) + 0.5 * d.ginv[a] * val
    Ch = np.zeros((2, 2, 2))  # [i, j, c-2]
    for i in H:
        for j in H:
            for c in V:
                if j == i:
                    Ch[i, j, c - 2] = 0.5 * d.ginv[i] * d.G[i].d(c)
    Cv = np.zeros((2, 2, 2))  # [a-2, b-2, c-2]
    for a in V:
        for b in V:
            for c in V:
                val = 0.0
                if b == a:
                    val += d.G[a].d(c)
                if c == a:
                    val += d.G[a].d(b)
                if b == c:
                    val -= d.G[b].d(a)
                Cv[a - 2, b - 2, c - 2] = 0.5 * d.ginv[a] * val
    return DConnectionCoeffs(Lh=Lh, Lv=Lv, Ch=Ch, Cv=Cv)


def dtorsion(m: NAdaptedMetric, p) -> TorsionCoeffs:
    d = _PointData(m, p)
    conn = canonical_dconnection(m, p)
    om = d.omega_coeffs()
    hh = conn.Lh - conn.Lh.transpose(0, 2, 1)
    hv = conn.Ch.copy()
    vh = np.zeros((2, 2, 2))  # [a-2, j, i] = -Omega^a_ji
    for a in V:
        for j in H:
            for i in H:
                vh[a - 2, j, i] = -om[a - 2, j, i]
    mixed = np.zeros((2, 2, 2))  # [c-2, a-2, j] = L^c_aj - e_a N_j^c
    for c in V:
        for a in V:
            for j in H:
                mixed[c - 2, a - 2, j] = conn.Lv[c - 2, a - 2, j] - d.N[j][c - 2].d(a)
    vv = conn.Cv - conn.Cv.transpose(0, 2, 1)
    return TorsionCoeffs(hh=hh, hv=hv, vh=vh, mixed=mixed, vv=vv)


def distortion(m: NAdaptedMetric, p) -> DistortionCoeffs:
    d = _PointData(m, p)
    conn = canonical_dconnection(m, p)
    tors = dtorsion(m, p)
    om = d.omega_coeffs()

    def Om(a, j, k):
        return om[a - 2, j, k]

    def Chf(i, j, c):
        return conn.Ch[i, j, c - 2]

    def Tvh(c, a, j):
        """Torsion family value T^c_aj = L^c_aj - e_a N_j^c."""
        return tors.mixed[c - 2, a - 2, j]

    Zajk = np.zeros((2, 2, 2))
    for a in V:
        for j in H:
            for k in H:
                s = -sum(Chf(i, j, b) * d.gfr(i, k) * d.ginvf(a, b)
                         for i in H for b in V)
                Zajk[a - 2, j, k] = s - 0.5 * Om(a, j, k)

    Zibk = np.zeros((2, 2, 2))
    Zikb = np.zeros((2, 2, 2))
    for i in H:
        for b in V:
            for k in H:
                half_om = 0.5 * sum(Om(c, j, k) * d.gfr(c, b) * d.ginvf(j, i)
                                    for c in V for j in H)
                Zibk[i, b - 2, k] = half_om + Chf(i, k, b)
                Zikb[i, k, b - 2] = half_om

    Zabk = np.zeros((2, 2, 2))

    Zajb = np.zeros((2, 2, 2))
    for a in V:
        for j in H:
            for b in V:
                s = 0.0
                for c in V:
                    for e in V:
                        xi = 0.5 * ((1.0 if (a == c and e == b) else 0.0)
                                    + d.gfr(c, b) * d.ginvf(a, e))
                        s += xi * Tvh(c, e, j)
                Zajb[a - 2, j, b - 2] = s

    Ziab = np.zeros((2, 2, 2))
    for i in H:
        for a in V:
            for b in V:
                s = 0.0
                for c in V:
                    s += Tvh(c, a, i) * d.gfr(c, b) + Tvh(c, b, i) * d.gfr(c, a)
                Ziab[i, a - 2, b - 2] = -0.5 * d.ginv[i] * s
    return DistortionCoeffs(Zajk=Zajk, Zibk=Zibk, Zikb=Zikb, Zabk=Zabk,
                            Zajb=Zajb, Ziab=Ziab)


def levicivita_nadapted(m: NAdaptedMetric, p) -> np.ndarray:
    """Levi-Civita connection coefficients in the N-adapted frame, via the
    Koszul formula with the frame's structure coefficients."""
    d = _PointData(m, p)
    c = d.struct()
    LC = np.zeros((4, 4, 4))
    for gm in range(4):
        for al in range(4):
            for be in range(4):
                dl = gm
                expr = 0.0
                if al == dl:
                    expr += d.e(be, d.G[al])
                if be == dl:
                    expr += d.e(al, d.G[be])
                if be == al:
                    expr -= d.e(dl, d.G[be])
                expr += sum(c[be, al, s] * d.gfr(s, dl) for s in range(4))
                expr -= sum(c[be, dl, s] * d.gfr(s, al) for s in range(4))
                expr -= sum(c[al, dl, s] * d.gfr(s, be) for s in range(4))
                LC[gm, al, be] = 0.5 * d.ginv[gm] * expr
    return LC


def dricci_blocks(m: NAdaptedMetric, p) -> RicciBlocks:
    """Separated Ricci blocks for the ansatz with g_i = g_i(x1, x2).

    The horizontal block uses only x-derivatives of (g1, g2); the vertical and
    mixed blocks use t- and x-derivatives of (h3, h4) and the N-coefficients.
    """
    d = _PointData(m, p)
    g1, g2, h3, h4 = d.j["g1"], d.j["g2"], d.j["h3"], d.j["h4"]

    bra_h = (g2.d2(0, 0) - g1.d(0) * g2.d(0) / (2 * g1.value)
             - g2.d(0) ** 2 / (2 * g2.value)
             + g1.d2(1, 1) - g1.d(1) * g2.d(1) / (2 * g2.value)
             - g1.d(1) ** 2 / (2 * g1.value))
    r11 = -bra_h / (2 * g1.value * g2.value)

    h4s = h4.d(AX_T)
    h3s = h3.d(AX_T)
    bra_v = (h4.d2(AX_T, AX_T) - h4s ** 2 / (2 * h4.value)
             - h3s * h4s / (2 * h3.value))
    r33 = -bra_v / (2 * h3.value * h4.value)

    r3k = np.zeros(2)
    for k in H:
        r3k[k] = (d.wval[k] / (2 * h4.value) * bra_v
                  + h4s / (4 * h4.value) * (h3.d(k) / h3.value + h4.d(k) / h4.value)
                  - h4.d2(k, AX_T) / (2 * h4.value))

    gamma = 1.5 * h4s / h4.value - h3s / h3.value
    r4k = np.zeros(2)
    for k in H:
        nk = d.N[k][1]
        r4k[k] = -(h4.value / (2 * h3.value)) * (nk.d2(AX_T, AX_T) + gamma * nk.d(AX_T))
    return RicciBlocks(r11=r11, r33=r33, r3k=r3k, r4k=r4k)


def coordinate_einstein(m: NAdaptedMetric, p) -> CoordinateCurvature:
    """Coordinate-basis Levi-Civita curvature of the assembled 4x4 metric.

    Works entirely from 2-jets of the coefficient fields; never touches the
    d-connection, so it serves as the independent oracle.
    """
    M = coordinate_matrix_jets(m, p)
    g = np.array([[M[i, j].value for j in range(4)] for i in range(4)])
    dg = np.array([[[M[i, j].d(k) for k in range(4)] for j in range(4)] for i in range(4)])
    d2g = np.array([[[[M[i, j].d2(k, l) for l in range(4)] for k in range(4)]
                     for j in range(4)] for i in range(4)])
    try:
        ginv = np.linalg.inv(g)
    except np.linalg.LinAlgError as err:
        raise DegenerateMetricError(f"singular coordinate metric at {tuple(np.asarray(p))}") from err

    T = np.empty((4, 4, 4))
    for s in range(4):
        for mm in range(4):
            for nn in range(4):
                T[s, mm, nn] = dg[s, mm, nn] + dg[s, nn, mm] - dg[mm, nn, s]
    Gam = 0.5 * np.einsum("as,smn->amn", ginv, T)

    dginv = -np.einsum("ab,bcr,cd->adr", ginv, dg, ginv)
    dT = np.empty((4, 4, 4, 4))
    for s in range(4):
        for mm in range(4):
            for nn in range(4):
                for r in range(4):
                    dT[s, mm, nn, r] = d2g[s, mm, nn, r] + d2g[s, nn, mm, r] - d2g[mm, nn, s, r]
    dGam = 0.5 * (np.einsum("asr,smn->amnr", dginv, T) + np.einsum("as,smnr->amnr", ginv, dT))

    Ric = np.zeros((4, 4))
    for mm in range(4):
        for nn in range(4):
            v = 0.0
            for a in range(4):
                v += dGam[a, mm, nn, a] - dGam[a, mm, a, nn]
                for s in range(4):
                    v += Gam[a, s, a] * Gam[s, mm, nn] - Gam[a, s, nn] * Gam[s, mm, a]
            Ric[mm, nn] = v
    scalar = float(np.einsum("mn,mn->", ginv, Ric))
    G = Ric - 0.5 * g * scalar
    return CoordinateCurvature(metric=g, metric_inv=ginv, christoffel=Gam,
                               ricci=Ric, scalar=scalar, einstein=G)
