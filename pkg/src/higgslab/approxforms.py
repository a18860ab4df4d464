"""Glued metrics and approximate harmonic End(E)-valued 1-forms on planar models.

Conventions
-----------
E = O^2 with global frame (e1, e2) in which theta = Theta dz,
Theta = [[0, p], [1, 0]] and xi^2 = p.  A metric is stored as the matrix
H_ij = h(e_i, e_j); all metrics built here are diagonal and real in this
frame, so K = conj(H) = H.  The h-adjoint is G^dagger = K^{-1} G^* K.

A 1-form rho = A dz + B dzbar is stored as the pair (A, B).  The L2 pairing
2i int Tr(rho1^{1,0} (rho2^{1,0})^dagger - rho1^{0,1} (rho2^{0,1})^dagger)
has density 4 [Tr(A1 A2^dagger) + Tr(B1 B2^dagger)] dx dy.

Near a simple zero P the cube-root coordinate zeta = z_P (p dz^2 =
(9/4) zeta dzeta^2, flat distance |zeta|^{3/2}) carries the model metric
diag(e^psi, e^-psi) in the frame u = e g^{-1}, g = diag(a, 1/a),
a^2 = dz/dzeta / 1.5.  In the global frame that metric reads
diag(|p|^{-1/2} e^v, |p|^{1/2} e^-v) with v = psi + log|zeta|/2.

A holomorphic 1-form nu = q dz / xi has the local primitive
alpha_P = a1(z) xi vanishing at P; F_alpha = a1 Theta.  For the
anti-holomorphic tau = conj(mu), mu = q_mu dz / xi, the primitive is
beta_P = conj(a1_mu xi) and F^dagger_beta = conj(a1_mu) Theta^dagger_h.
"""

from __future__ import annotations

import concurrent.futures as cf
import math
from dataclasses import dataclass, field
from functools import cached_property

import mpmath
import numpy as np
from scipy.special import expit

from .errors import (DomainError, FrameError, InputError, RegionError, ScheduleError)
from .localmodel import adjoint, painleve_profile
from .numerics import (PowerSeries, circle, contour_integrate, fit_decay_rate, gauss_legendre)
from .quadiff import CHART_ORDER, Zero
from .spectral import AuxInput, HolDifferential, SpectralCurve, aux_pairing

PRIMITIVE_ORDER = 100

_I2 = np.eye(2, dtype=complex)
_S3 = np.diag([1.0, -1.0]).astype(complex)


# ---------------------------------------------------------------------------
# Small matrix helpers
# ---------------------------------------------------------------------------

def _offdiag(x12, x21):
    x12, x21 = np.broadcast_arrays(np.asarray(x12, complex), np.asarray(x21, complex))
    M = np.zeros(x12.shape + (2, 2), complex)
    M[..., 0, 1] = x12
    M[..., 1, 0] = x21
    return M


def _diag(x11, x22):
    x11, x22 = np.broadcast_arrays(np.asarray(x11, complex), np.asarray(x22, complex))
    M = np.zeros(x11.shape + (2, 2), complex)
    M[..., 0, 0] = x11
    M[..., 1, 1] = x22
    return M


def _scal(c, M):
    return np.asarray(c)[..., None, None] * M


def theta_matrix(curve: SpectralCurve, z):
    """Theta(z) = [[0, p], [1, 0]]."""
    z = np.asarray(z, complex)
    return _offdiag(curve.p(z), np.ones(z.shape))


def _theta_dagger(p, k1, k2):
    """Theta^dagger for K = diag(k1, k2)."""
    return _offdiag(k2 / k1, np.conj(p) * k1 / k2)


def _trace_pair(A, B, H):
    """Tr(A B^dagger_H)."""
    return np.trace(A @ adjoint(B, H), axis1=-2, axis2=-1)


def pairing_density(rho1, rho2, H):
    """4 [Tr(A1 A2^dagger) + Tr(B1 B2^dagger)], the dx dy density of the L2 pairing."""
    (A1, B1), (A2, B2) = rho1, rho2
    return 4 * (_trace_pair(A1, A2, H) + _trace_pair(B1, B2, H))


def sheet_frame(curve: SpectralCurve, z):
    """Columns v_i = (xi_i, 1) / sqrt(2|xi|), xi_1 = sqrt(p) (principal), xi_2 = -xi_1."""
    z = np.asarray(z, complex)
    xi = np.sqrt(curve.p(z))
    if np.any(xi == 0):
        raise DomainError("sheet frame is singular at a branch point")
    s = np.sqrt(2 * np.abs(xi))
    V = np.zeros(z.shape + (2, 2), complex)
    V[..., 0, 0], V[..., 0, 1] = xi / s, -xi / s
    V[..., 1, 0], V[..., 1, 1] = 1 / s, 1 / s
    return V


def split_commuting(curve: SpectralCurve, z, A):
    """(A°, A⊥): the parts commuting with Theta and sheet-exchanging.

    A° = x I + y Theta is block diagonal in the sheet frame; A⊥ lies in the
    span of J = [[0, p], [-1, 0]] and diag(1, -1).
    """
    p = curve.p(np.asarray(z, complex))
    if np.any(p == 0):
        raise DomainError("decomposition undefined at a branch point")
    A = np.asarray(A, complex)
    x = 0.5 * (A[..., 0, 0] + A[..., 1, 1])
    y = 0.5 * (A[..., 0, 1] / p + A[..., 1, 0])
    circ = _scal(x, _I2) + _scal(y, _offdiag(p, np.ones_like(p)))
    return circ, A - circ


# ---------------------------------------------------------------------------
# Cut-off schedule
# ---------------------------------------------------------------------------

def _smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1, S'(1/2) = 2 is the maximum slope."""
    s = np.asarray(s, float)
    out = np.where(s >= 1, 1.0, 0.0)
    mid = (s > 0) & (s < 1)
    sm = s[mid]
    out[mid] = expit(1 / (1 - sm) - 1 / sm)
    return out


def _smooth_step_d(s):
    s = np.asarray(s, float)
    out = np.zeros_like(s)
    mid = (s > 0) & (s < 1)
    sm = s[mid]
    S = expit(1 / (1 - sm) - 1 / sm)
    out[mid] = S * (1 - S) * (1 / sm ** 2 + 1 / (1 - sm) ** 2)
    return out


@dataclass(frozen=True)
class CutoffSchedule:
    """kappa0 = M/2, kappa in (0, kappa0) and delta = min((kappa0-kappa)/10, kappa/20).

    X1 = {flat distance < kappa0 - delta}, X2 = {flat distance < kappa0 - 2 delta};
    chi(d) is 1 on X2, 0 outside X1 and |chi'| <= 2 / delta.
    """
    kappa0: float
    kappa: float
    threshold: float | None = None

    def __post_init__(self):
        if not (self.kappa0 > 0 and 0 < self.kappa < self.kappa0):
            raise ScheduleError(f"need 0 < kappa < kappa0, got kappa={self.kappa}, kappa0={self.kappa0}")
        if self.threshold is not None and 2 * self.kappa0 > self.threshold * (1 + 1e-12):
            raise ScheduleError("2 kappa0 exceeds the saddle-connection threshold")

    @classmethod
    def from_threshold(cls, M: float, fraction: float = 0.5):
        """Schedule with kappa0 = M/2 and kappa = fraction * kappa0."""
        if not M > 0:
            raise ScheduleError("threshold must be positive")
        return cls(M / 2, fraction * M / 2, M)

    @property
    def delta(self) -> float:
        return min((self.kappa0 - self.kappa) / 10, self.kappa / 20)

    @property
    def d_outer(self) -> float:
        return self.kappa0 - self.delta

    @property
    def d_inner(self) -> float:
        return self.kappa0 - 2 * self.delta

    def chi(self, d):
        return 1.0 - _smooth_step((np.asarray(d, float) - self.d_inner) / self.delta)

    def dchi(self, d):
        """d chi / d(flat distance)."""
        return -_smooth_step_d((np.asarray(d, float) - self.d_inner) / self.delta) / self.delta


# ---------------------------------------------------------------------------
# Local data at a zero
# ---------------------------------------------------------------------------

class ZeroPatch:
    """Cube-root chart at a zero with the series needed for primitives."""

    def __init__(self, zero: Zero):
        self.zero = zero
        self.chart = zero.chart
        self._prim: dict = {}

    @property
    def location(self) -> complex:
        return self.zero.location

    def zeta(self, z):
        return self.chart.to_zeta(z)

    def z(self, zeta):
        return self.chart.to_z(zeta)

    def Z1(self, zeta):
        return self.chart.dz_dzeta(zeta)

    def Z2(self, zeta):
        return self.chart.d2z_dzeta2(zeta)

    def primitive(self, q) -> tuple[PowerSeries, PowerSeries]:
        """Series A(zeta) = a1 and A'(zeta) for nu = q dz / xi."""
        key = tuple(np.asarray(q, complex).tolist())
        if key not in self._prim:
            n = PRIMITIVE_ORDER
            inv = self.chart.inverse.truncate(n)
            qz = PowerSeries.from_polynomial(np.asarray(q, complex), n, center=self.location)
            qz = PowerSeries(qz.coeffs, 0, 0.0, qz.order)
            dz = inv.derivative()
            Q = (qz.compose(inv) * dz * dz).truncate(n)
            k = np.arange(Q.start, Q.order)
            S = PowerSeries(Q.coeffs / (k + 0.5), Q.start, 0.0, Q.order)
            A = (dz * S * (4.0 / 9.0)).truncate(n - 1)
            self._prim[key] = (A, A.derivative())
        return self._prim[key]

    def a1(self, q, zeta):
        A, dA = self.primitive(q)
        return A(zeta), dA(zeta) / self.Z1(zeta)


def _q_of(nu) -> np.ndarray:
    if isinstance(nu, HolDifferential):
        return np.asarray(nu.q, complex)
    return np.atleast_1d(np.asarray(nu, complex))


# ---------------------------------------------------------------------------
# Limiting and glued metrics
# ---------------------------------------------------------------------------

def limiting_metric(curve: SpectralCurve, z, *, twist: float = 0.0, frame: str = "global", zero=None):
    """Decoupled metric h_infinity.

    In the normalized sheet frame (see :func:`sheet_frame`) it is
    diag(w1, w2) with w_i = exp(+-twist Re xi_i), w1 w2 = 1; ``twist = 0`` is
    the limiting configuration diag(|p|^{-1/2}, |p|^{1/2}) of the global
    frame.  ``frame="model"`` returns the matrix in the model frame of the
    zero ``zero`` (a :class:`Zero` or :class:`ZeroPatch`), which is
    diag(|zeta|^{-1/2}, |zeta|^{1/2}) for twist 0.
    """
    z = np.asarray(z, complex)
    p = curve.p(z)
    if np.any(np.abs(p) == 0):
        raise DomainError("limiting metric is singular at a zero of p")
    if frame == "sheet":
        xi = np.sqrt(p)
        w = np.exp(twist * xi.real)
        return _diag(w, 1 / w)
    if twist == 0.0:
        m = np.abs(p)
        H = _diag(m ** -0.5, m ** 0.5)
    else:
        V = sheet_frame(curve, z)
        Vi = np.linalg.inv(V)
        W = limiting_metric(curve, z, twist=twist, frame="sheet")
        H = np.swapaxes(Vi, -1, -2) @ W @ np.conj(Vi)
    if frame == "global":
        return H
    if frame == "model":
        patch = zero if isinstance(zero, ZeroPatch) else ZeroPatch(zero)
        g = model_frame(patch, patch.zeta(z))
        gi = np.linalg.inv(g)
        return np.swapaxes(gi, -1, -2) @ H @ np.conj(gi)
    raise FrameError(f"unknown frame {frame!r}")


def model_frame(patch: ZeroPatch, zeta):
    """g = diag(a, 1/a), a^2 = (dz/dzeta)/1.5, with e = u g (u the model frame)."""
    a = np.sqrt(patch.Z1(np.asarray(zeta, complex)) / 1.5)
    return _diag(a, 1 / a)


def transport_sheet_frame(curve: SpectralCurve, path):
    """Continue xi = sqrt(p) along a path; return the start and end frames.

    The continued frame at the end of a loop around one zero has its columns
    exchanged relative to the principal frame there.
    """
    path = np.asarray(path, complex)
    p = curve.p(path)
    xi = np.empty_like(p)
    xi[0] = np.sqrt(p[0])
    for k in range(1, len(p)):
        r = np.sqrt(p[k])
        xi[k] = r if abs(r - xi[k - 1]) <= abs(r + xi[k - 1]) else -r
    def frame(x):
        s = np.sqrt(2 * abs(x))
        return np.array([[x / s, -x / s], [1 / s, 1 / s]])
    return frame(xi[0]), frame(xi[-1]), xi


def metric_in_frame(H, V):
    """h(v_i, v_j) for the frame with columns V: V^T H conj(V)."""
    return np.swapaxes(V, -1, -2) @ H @ np.conj(V)


@dataclass
class Located:
    """Nearest-zero data for a batch of points."""
    index: np.ndarray      # patch index, -1 outside every X_P(kappa0)
    zeta: np.ndarray
    d: np.ndarray          # flat distance to that zero (inf when index = -1)


class GluedMetric:
    """h_infinity patched with the model metrics h_{P,t} near every zero.

    The diagonal gauge exponent is w = chi(d) v_t(|zeta|): h = h_P on X2,
    h = h_infinity outside X1 and det h = 1 everywhere.
    """

    def __init__(self, curve: SpectralCurve, t: float, schedule: CutoffSchedule, *,
                 profile=None, n: int = 4001):
        if not t >= 1:
            raise InputError("t must be >= 1")
        self.curve, self.t, self.schedule = curve, float(t), schedule
        self.patches = [ZeroPatch(P) for P in curve.branch_points]
        for P in self.patches:
            if self.schedule.kappa0 ** (2 / 3) >= 0.999 * _chart_radius(P):
                raise ScheduleError("X_P(kappa0) leaves the chart disc; zeros too close for this kappa0")
        if profile is None:
            r_max = max(schedule.kappa0 + 2.3 / t, 7.5 / t) ** (2 / 3)
            profile = painleve_profile(t, r_max, n=n)
        if profile.r_max ** 1.5 < schedule.kappa0 * (1 - 1e-12) or abs(profile.t - t) > 1e-12:
            raise InputError("profile does not cover X_P(kappa0) at this t")
        self.profile = profile

    # -- geometry ----------------------------------------------------------
    def locate(self, z) -> Located:
        z = np.asarray(z, complex).ravel()
        index = -np.ones(z.shape, int)
        zeta = np.zeros(z.shape, complex)
        d = np.full(z.shape, np.inf)
        for k, P in enumerate(self.patches):
            near = np.abs(z - P.location) < 0.95 * _z_extent(P, self.schedule.kappa0)
            if not np.any(near):
                continue
            zk = P.zeta(z[near])
            dk = np.abs(zk) ** 1.5
            ok = np.abs(P.z(zk) - z[near]) <= 1e-10 * (1 + np.abs(z[near]))
            dk = np.where(ok, dk, np.inf)
            idx = np.flatnonzero(near)
            better = dk < d[idx]
            d[idx[better]] = dk[better]
            zeta[idx[better]] = zk[better]
            index[idx[better]] = k
        inside = d < self.schedule.kappa0
        index[~inside] = -1
        return Located(index, zeta, np.where(inside, d, np.inf))

    # -- metric ------------------------------------------------------------
    def diagonal(self, z, loc: Located | None = None):
        """(k1, w): H = diag(k1, 1/k1) and the gauge exponent w (0 outside X1)."""
        z = np.asarray(z, complex).ravel()
        loc = self.locate(z) if loc is None else loc
        sch = self.schedule
        k1 = np.empty(z.shape)
        w = np.zeros(z.shape)
        out = loc.d >= sch.d_outer
        m = np.abs(self.curve.p(z[out]))
        if np.any(m == 0):
            raise DomainError("limiting metric is singular at a zero of p")
        k1[out] = m ** -0.5
        glue = (loc.d < sch.d_outer) & (loc.d > sch.d_inner)
        if np.any(glue):
            r = np.abs(loc.zeta[glue])
            w[glue] = sch.chi(loc.d[glue]) * self.profile.v(r)
            k1[glue] = np.abs(self.curve.p(z[glue])) ** -0.5 * np.exp(w[glue])
        core = loc.d <= sch.d_inner
        if np.any(core):
            zt = loc.zeta[core]
            psi = self.profile.psi(np.abs(zt))
            k1[core] = np.exp(psi) * np.abs(_Z1_of(self, loc.index[core], zt)) / 1.5
            nz = np.abs(zt) > 0
            w_core = np.full(zt.shape, -np.inf)
            w_core[nz] = self.profile.v(np.abs(zt[nz]))
            w[core] = w_core
        return k1, w

    def matrix(self, z):
        """H_ij = h(e_i, e_j) at the points z (flattened)."""
        k1, _ = self.diagonal(z)
        return _diag(k1, 1 / k1)

    def limiting(self, z):
        return limiting_metric(self.curve, np.asarray(z, complex).ravel())

    def deviation(self, z):
        """(|s° - id|, |s⊥|) of s = h_infinity^{-1} h (Frobenius norms).

        s = diag(e^w, e^-w) = cosh(w) I + sinh(w) diag(1, -1), so
        |s° - id| = sqrt(2) * 2 sinh(w/2)^2 and |s⊥| = sqrt(2) |sinh w|.
        """
        _, w = self.diagonal(z)
        return np.sqrt(2) * 2 * np.sinh(w / 2) ** 2, np.sqrt(2) * np.abs(np.sinh(w))


def _chart_radius(P: ZeroPatch) -> float:
    """|zeta| of the nearest other zero, bounding the chart disc.

    |zeta(Q)|^{3/2} = |int_P^Q sqrt(p) dz| along the straight segment, with the
    branch continued along the segment.
    """
    others = [q for q in P.zero.phi.zeros if q.index != P.zero.index]
    rad = np.inf
    for q in others:
        s = np.linspace(0, 1, 4001)
        seg = P.location + s * (q.location - P.location)
        root = np.sqrt(P.zero.phi(seg))
        for k in range(1, root.size):
            if abs(root[k] - root[k - 1]) > abs(root[k] + root[k - 1]):
                root[k] = -root[k]
        f = root * (q.location - P.location)
        period = np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(s))
        rad = min(rad, abs(period) ** (2 / 3))
    return rad


def _z_extent(P: ZeroPatch, kappa0: float) -> float:
    """Upper bound of |z - P| over X_P(kappa0), sampled on the boundary circle."""
    zeta = kappa0 ** (2 / 3) * np.exp(2j * np.pi * np.arange(256) / 256)
    return 1.05 * float(np.max(np.abs(P.z(zeta) - P.location)))


def _Z1_of(metric: GluedMetric, index, zeta):
    out = np.empty(zeta.shape, complex)
    for k in np.unique(index):
        sel = index == k
        out[sel] = metric.patches[k].Z1(zeta[sel])
    return out


# ---------------------------------------------------------------------------
# F_alpha and forms
# ---------------------------------------------------------------------------

def F_alpha(curve: SpectralCurve, alpha, z):
    """Endomorphism induced by multiplication with a function on the spectral curve.

    ``alpha`` is either a callable ``alpha(z, xi)`` giving the value on the
    sheet xi, evaluated as alpha_even I + (alpha_odd / xi) Theta, or a pair
    ``(alpha0, alpha1)`` of callables of z giving alpha0 I + alpha1 Theta,
    which is the form to use at branch points.
    """
    z = np.asarray(z, complex)
    Th = theta_matrix(curve, z)
    if isinstance(alpha, tuple):
        a0, a1 = (np.broadcast_to(np.asarray(f(z), complex), z.shape) for f in alpha)
        return _scal(a0, _I2) + _scal(a1, Th)
    xi = np.sqrt(curve.p(z))
    if np.any(np.abs(xi) == 0):
        raise FrameError("sheet values are ambiguous at a branch point; pass (alpha0, alpha1)")
    ap = np.asarray(alpha(z, xi), complex)
    am = np.asarray(alpha(z, -xi), complex)
    return _scal(0.5 * (ap + am), _I2) + _scal(0.5 * (ap - am) / xi, Th)


@dataclass
class EndValuedOneForm:
    """rho = A dz + B dzbar sampled at nodes, in the global frame.

    ``weights`` are area quadrature weights (dx dy) when the nodes are
    quadrature nodes; ``frame`` records the frame of the matrices.
    """
    nodes: np.ndarray
    a10: np.ndarray
    a01: np.ndarray
    weights: np.ndarray | None = None
    frame: str = "global"

    @property
    def pair(self):
        return self.a10, self.a01

    def to_frame(self, g, name: str):
        """Matrices in the frame u = e g^{-1}: A -> g A g^{-1}."""
        gi = np.linalg.inv(g)
        return EndValuedOneForm(self.nodes, g @ self.a10 @ gi, g @ self.a01 @ gi, self.weights, name)

    def parts(self, curve: SpectralCurve):
        """((A°, B°), (A⊥, B⊥))."""
        if self.frame != "global":
            raise FrameError("decomposition is implemented in the global frame")
        ac, ap = split_commuting(curve, self.nodes, self.a10)
        bc, bp = split_commuting(curve, self.nodes, self.a01)
        return (ac, bc), (ap, bp)


def _zeros_like(z):
    return np.zeros(np.shape(z) + (2, 2), complex)


def F_nu(curve: SpectralCurve, nu, z):
    """(1,0) coefficient of F_nu: (q/p) Theta."""
    z = np.asarray(z, complex)
    q = np.polynomial.polynomial.polyval(z, _q_of(nu))
    return _scal(q / curve.p(z), theta_matrix(curve, z))


def F_tau(curve: SpectralCurve, mu, z):
    """(0,1) coefficient of F_tau for tau = conj(mu): conj(q_mu) / |p| Theta."""
    z = np.asarray(z, complex)
    q = np.polynomial.polynomial.polyval(z, _q_of(mu))
    return _scal(np.conj(q) / np.abs(curve.p(z)), theta_matrix(curve, z))


def _model_core(metric: GluedMetric, P: ZeroPatch, z, zeta):
    """Model-metric data in the global frame: k1, d log k1 / dz, p, p'."""
    z = np.asarray(z, complex)
    r = np.abs(zeta)
    Z1, Z2 = P.Z1(zeta), P.Z2(zeta)
    psi = metric.profile.psi(r)
    dpsi = metric.profile.psi(r, 1)
    ratio = np.zeros_like(r)
    nz = r > 0
    ratio[nz] = dpsi[nz] / r[nz]
    k1 = np.exp(psi) * np.abs(Z1) / 1.5
    L = ratio * np.conj(zeta) / (2 * Z1) + 0.5 * Z2 / Z1 ** 2
    return k1, L, metric.curve.p(z), metric.curve.phi.derivative(z)


def _hz_from(a1, da1, p, dp, L, Th):
    J = _offdiag(p, -np.ones_like(p))
    U = _offdiag(dp, np.zeros_like(dp))
    return _scal(da1, Th) + _scal(a1, U) + _scal(2 * L * a1, J)


def _check_in(metric: GluedMetric, loc: Located, zero: int | None, limit: float):
    if np.any(loc.index < 0) or np.any(loc.d > limit):
        raise RegionError("point outside X_P(kappa0)")
    if zero is not None and np.any(loc.index != zero):
        raise RegionError("point belongs to another zero's region")


def H_P_t(metric: GluedMetric, nu, z, zero: int | None = None) -> EndValuedOneForm:
    """(d_h + t ad theta^dagger_h) F_{alpha_P} with the model metric on X_P(kappa0).

    (1,0): d a1 Theta + a1 d Theta + 2 (d log k1) a1 J;
    (0,1): t a1 [Theta^dagger, Theta].
    """
    z = np.asarray(z, complex).ravel()
    loc = metric.locate(z)
    _check_in(metric, loc, zero, metric.schedule.kappa0)
    q = _q_of(nu)
    A, B = _zeros_like(z), _zeros_like(z)
    for k in np.unique(loc.index):
        sel = loc.index == k
        P = metric.patches[k]
        zt, zs = loc.zeta[sel], z[sel]
        k1, L, p, dp = _model_core(metric, P, zs, zt)
        a1, da1 = P.a1(q, zt)
        Th = theta_matrix(metric.curve, zs)
        A[sel] = _hz_from(a1, da1, p, dp, L, Th)
        s = (1 / k1) / k1
        c = s - np.abs(p) ** 2 / s
        B[sel] = _scal(metric.t * a1, _diag(c, -c))
    return EndValuedOneForm(z, A, B)


def rho_P_t(metric: GluedMetric, nu, z) -> np.ndarray:
    """Closed-form solution rho = -(a1 dv / t) diag(1, -1) of (dbar + t ad theta) rho = H_{P,t} - F_nu.

    The (1,0) equation t [Theta, rho] = 2 a1 (dv) J and the (0,1) equation
    dbar rho = -2 t a1 |p| sinh(2v) diag(1, -1) are both satisfied because v
    solves dd-bar v = 2 t^2 |p| sinh 2v.  Defined away from the zeros.
    """
    z = np.asarray(z, complex).ravel()
    loc = metric.locate(z)
    _check_in(metric, loc, None, metric.schedule.kappa0)
    out = _zeros_like(z)
    q = _q_of(nu)
    for k in np.unique(loc.index):
        sel = loc.index == k
        P = metric.patches[k]
        zt = loc.zeta[sel]
        a1, _ = P.a1(q, zt)
        dv = _dv(metric, P, zt)
        out[sel] = _scal(-a1 * dv / metric.t, _S3)
    return out


def _dv(metric, P, zeta):
    """d v / dz for v = v_t(|zeta|)."""
    r = np.abs(zeta)
    return metric.profile.v(r, 1) * np.conj(zeta) / (2 * r * P.Z1(zeta))


def _dchi_bar(metric, P, zeta, d):
    """d chi / d zbar with chi = chi(|zeta|^{3/2})."""
    r = np.abs(zeta)
    return metric.schedule.dchi(d) * 0.75 * r ** -0.5 * zeta / np.conj(P.Z1(zeta))


def H_prime(metric: GluedMetric, nu, z) -> EndValuedOneForm:
    """F_nu outside X1; F_nu + (dbar + t ad theta)(chi rho) on the glue; H_{P,t} on X2."""
    z = np.asarray(z, complex).ravel()
    loc = metric.locate(z)
    sch, t = metric.schedule, metric.t
    q = _q_of(nu)
    A, B = _zeros_like(z), _zeros_like(z)
    out = loc.d >= sch.d_outer
    if np.any(out):
        A[out] = F_nu(metric.curve, q, z[out])
    core = loc.d <= sch.d_inner
    if np.any(core):
        hp = H_P_t(metric, q, z[core])
        A[core], B[core] = hp.a10, hp.a01
    glue = ~(out | core)
    for k in np.unique(loc.index[glue]):
        sel = glue & (loc.index == k)
        P = metric.patches[k]
        zt, zs, d = loc.zeta[sel], z[sel], loc.d[sel]
        p = metric.curve.p(zs)
        a1, _ = P.a1(q, zt)
        v = metric.profile.v(np.abs(zt))
        dv = _dv(metric, P, zt)
        chi = sch.chi(d)
        dbchi = _dchi_bar(metric, P, zt, d)
        A[sel] = F_nu(metric.curve, q, zs) + _scal(chi * a1 * 2 * dv, _offdiag(p, -np.ones_like(p)))
        D = chi * (-2 * t * a1 * np.abs(p) * np.sinh(2 * v)) + dbchi * (-a1 * dv / t)
        B[sel] = _scal(D, _S3)
    return EndValuedOneForm(z, A, B)


def F_dagger_beta(metric: GluedMetric, mu, z):
    """conj(a1_mu) Theta^dagger_h for the glued metric (= (F_{conj beta})^dagger_h)."""
    z = np.asarray(z, complex).ravel()
    loc = metric.locate(z)
    _check_in(metric, loc, None, metric.schedule.kappa0)
    k1, _ = metric.diagonal(z, loc)
    q = _q_of(mu)
    out = _zeros_like(z)
    p = metric.curve.p(z)
    for k in np.unique(loc.index):
        sel = loc.index == k
        a1, _ = metric.patches[k].a1(q, loc.zeta[sel])
        out[sel] = _scal(np.conj(a1), _theta_dagger(p[sel], k1[sel], 1 / k1[sel]))
    return out


def V_prime(metric: GluedMetric, mu, z) -> EndValuedOneForm:
    """F_{tau°} + sum_P (dbar + t ad theta)(chi F^dagger_beta) for tau = conj(mu dz / xi).

    With k1 = h(e1, e1), s = k2/k1 = k1^{-2} and Lb = dbar log k1:
    dbar(conj(a1) Theta^dagger) = conj(a1') Theta^dagger
        + conj(a1) [[0, -2 s Lb], [(conj(p') + 2 conj(p) Lb) / s, 0]],
    t [Theta, conj(a1) Theta^dagger] = t conj(a1) (|p|^2/s - s) diag(1, -1).
    """
    z = np.asarray(z, complex).ravel()
    loc = metric.locate(z)
    sch, t = metric.schedule, metric.t
    q = _q_of(mu)
    A, B = _zeros_like(z), _zeros_like(z)
    out = loc.d >= sch.d_outer
    if np.any(out):
        B[out] = F_tau(metric.curve, q, z[out])
    inside = ~out
    for k in np.unique(loc.index[inside]):
        sel = inside & (loc.index == k)
        P = metric.patches[k]
        zt, zs, d = loc.zeta[sel], z[sel], loc.d[sel]
        p, dp = metric.curve.p(zs), metric.curve.phi.derivative(zs)
        a1, da1 = P.a1(q, zt)
        ab, dab = np.conj(a1), np.conj(da1)          # conj(a1), dbar conj(a1)
        chi = sch.chi(d)
        core = d <= sch.d_inner
        # k1 and Lb = dbar log k1 for the glued metric
        k1 = np.empty(zs.shape)
        Lb = np.empty(zs.shape, complex)
        if np.any(core):
            kc, Lc, _, _ = _model_core(metric, P, zs[core], zt[core])
            k1[core], Lb[core] = kc, np.conj(Lc)
        g = ~core
        if np.any(g):
            v = metric.profile.v(np.abs(zt[g]))
            w = chi[g] * v
            dbw = _dchi_bar(metric, P, zt[g], d[g]) * v + chi[g] * np.conj(_dv(metric, P, zt[g]))
            m = np.abs(p[g])
            k1[g] = m ** -0.5 * np.exp(w)
            Lb[g] = -np.conj(dp[g]) / (4 * np.conj(p[g])) + dbw
        s = k1 ** -2.0
        Td = _offdiag(s, np.conj(p) / s)
        V2 = _scal(dab, Td) + _scal(ab, _offdiag(-2 * s * Lb, (np.conj(dp) + 2 * np.conj(p) * Lb) / s))
        V1 = _scal(t * ab * (np.abs(p) ** 2 / s - s), _S3)
        Ak, Bk = _scal(chi, V1), _scal(chi, V2)
        if np.any(g):
            m = np.abs(p[g])
            T0 = _offdiag(m, np.conj(p[g]) / m)
            dbchi = _dchi_bar(metric, P, zt[g], d[g])
            Ftau = F_tau(metric.curve, q, zs[g])
            Bk[g] += _scal(1 - chi[g], Ftau) + _scal(dbchi * ab[g], Td[g] - T0)
        A[sel], B[sel] = Ak, Bk
    return EndValuedOneForm(z, A, B)


def closedness_residual(form_fn, curve: SpectralCurve, t: float, center: complex, h: float, n: int = 2):
    """Sup of -dbar A + t [Theta, B] at center by central differences of step h.

    ``form_fn(z)`` returns an :class:`EndValuedOneForm` at the points z.
    Returns (residual, scale) with scale = sup |A| + |B| at the stencil.
    """
    offs = np.array([0, h, -h, 1j * h, -1j * h])
    pts = center + offs
    f = form_fn(pts)
    A, B = f.a10, f.a01
    dAx = (A[1] - A[2]) / (2 * h)
    dAy = (A[3] - A[4]) / (2 * h)
    dbarA = 0.5 * (dAx + 1j * dAy)
    Th = theta_matrix(curve, np.array([center]))[0]
    res = -dbarA + t * (Th @ B[0] - B[0] @ Th)
    scale = float(np.max(np.abs(A)) + np.max(np.abs(B)))
    return float(np.max(np.abs(res))), scale


# ---------------------------------------------------------------------------
# Quadrature on zero discs and L2 pairings
# ---------------------------------------------------------------------------

def _composite_gl(breaks, n):
    xs, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        x, w = gauss_legendre(n, a, b)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def zero_disc_nodes(patch: ZeroPatch, r_breaks, n_r: int = 24, n_theta: int = 128):
    """Tensor nodes in zeta-polar coordinates and dx dy weights of the z-plane.

    ``r_breaks`` are |zeta| panel boundaries; Gauss-Legendre in |zeta|,
    trapezoid in angle; weight |dz/dzeta|^2 r dr dtheta.
    """
    r, wr = _composite_gl(np.asarray(r_breaks, float), n_r)
    th = 2 * np.pi * (np.arange(n_theta) + 0.5) / n_theta
    R, T = np.meshgrid(r, th, indexing="ij")
    zeta = (R * np.exp(1j * T)).ravel()
    z = patch.z(zeta)
    w = np.abs(patch.Z1(zeta)) ** 2 * (wr[:, None] * R).ravel() * (2 * np.pi / n_theta)
    return z, zeta, w


def l2_pairing_forms(rho1: EndValuedOneForm, rho2: EndValuedOneForm, metric, region=None) -> complex:
    """2i int_W Tr(rho1^{1,0} (rho2^{1,0})^dagger - rho1^{0,1} (rho2^{0,1})^dagger).

    ``metric`` is a :class:`GluedMetric`, a callable z -> H or an array of
    H matrices at the nodes; ``region`` an optional boolean mask or a
    predicate on the nodes.
    """
    if rho1.weights is None:
        raise RegionError("forms carry no quadrature weights")
    if rho1.nodes.shape != rho2.nodes.shape or np.any(rho1.nodes != rho2.nodes):
        raise RegionError("forms are sampled on different nodes")
    if rho1.frame != rho2.frame:
        raise FrameError("forms are in different frames")
    z = rho1.nodes
    if isinstance(metric, GluedMetric):
        H = metric.matrix(z)
    elif callable(metric):
        H = metric(z)
    else:
        H = np.asarray(metric)
    mask = np.ones(z.shape, bool)
    if region is not None:
        mask = region(z) if callable(region) else np.asarray(region, bool)
    dens = pairing_density(rho1.pair, rho2.pair, H)
    return complex(np.sum(dens[mask] * rho1.weights[mask]))


# ---------------------------------------------------------------------------
# Stokes identities
# ---------------------------------------------------------------------------

@dataclass
class StokesResult:
    """Both sides of ((d_h + t ad theta^dagger) a, b) = 2i oint Tr(a B1^dagger) dzbar + 2i int Tr(a Omega_b^dagger).

    ``interior`` is the left side, ``boundary`` and ``adjoint_term`` the two
    pieces of the right side; Omega_b = -dbar B1 + t [Theta, B2].
    """
    interior: complex
    boundary: complex
    adjoint_term: complex
    h: float
    scale: float

    @property
    def defect(self) -> float:
        return abs(self.interior - self.boundary - self.adjoint_term)


def _c2_norm(F, h):
    """Sup of the field and its first and second differences (per unit length)."""
    F = np.asarray(F)
    out = np.max(np.abs(F))
    for ax in (0, 1):
        d1 = np.gradient(F, h, axis=ax, edge_order=2)
        out = max(out, np.max(np.abs(d1)))
        for ax2 in (0, 1):
            out = max(out, np.max(np.abs(np.gradient(d1, h, axis=ax2, edge_order=2))))
    return float(out)


def stokes_check(a, b, metric, region, h: float, *, theta=None, t: float = 1.0) -> StokesResult:
    """Evaluate both sides of the Stokes corollary on a rectangle.

    Parameters
    ----------
    a : callable z -> (..., 2, 2)
        Section of End(E).
    b : callable z -> (A, B)
        1-form coefficients.
    metric : callable z -> H (Hermitian, H_ij = h(e_i, e_j))
    region : (x0, x1, y0, y1)
    h : float
        Lattice spacing; derivatives by second-order differences, area and
        boundary integrals by the trapezoid rule.
    theta : callable z -> Theta, optional (zero by default)
    """
    x0, x1, y0, y1 = region
    nx = int(round((x1 - x0) / h)) + 1
    ny = int(round((y1 - y0) / h)) + 1
    x = np.linspace(x0, x1, nx)
    y = np.linspace(y0, y1, ny)
    hx, hy = x[1] - x[0], y[1] - y[0]
    X, Y = np.meshgrid(x, y, indexing="ij")
    Z = X + 1j * Y
    av = np.asarray(a(Z), complex)
    B1, B2 = (np.asarray(v, complex) for v in b(Z))
    H = np.asarray(metric(Z), complex)
    Th = np.zeros_like(av) if theta is None else np.broadcast_to(np.asarray(theta(Z), complex), av.shape)
    K = np.conj(H)

    def dz(F):
        return 0.5 * (np.gradient(F, hx, axis=0, edge_order=2) - 1j * np.gradient(F, hy, axis=1, edge_order=2))

    def dzb(F):
        return 0.5 * (np.gradient(F, hx, axis=0, edge_order=2) + 1j * np.gradient(F, hy, axis=1, edge_order=2))

    Kinv = np.linalg.inv(K)
    conn = Kinv @ dz(K)
    Dh_a = dz(av) + conn @ av - av @ conn
    Thd = adjoint(Th, H)
    comm = Thd @ av - av @ Thd
    dens = 2j * (-2j) * (np.trace(Dh_a @ adjoint(B1, H), axis1=-2, axis2=-1)
                         + t * np.trace(comm @ adjoint(B2, H), axis1=-2, axis2=-1))
    Omega = -dzb(B1) + t * (Th @ B2 - B2 @ Th)
    dens_adj = 2j * (-2j) * np.trace(av @ adjoint(Omega, H), axis1=-2, axis2=-1)
    wx = np.full(nx, hx)
    wx[[0, -1]] *= 0.5
    wy = np.full(ny, hy)
    wy[[0, -1]] *= 0.5
    W = wx[:, None] * wy[None, :]
    interior = complex(np.sum(W * dens))
    adj_term = complex(np.sum(W * dens_adj))
    f = np.trace(av @ adjoint(B1, H), axis1=-2, axis2=-1)

    def trap(vals, step):
        return step * (np.sum(vals) - 0.5 * (vals[0] + vals[-1]))
    # counter-clockwise; dzbar = dx on horizontal edges, -i dy on vertical ones
    bnd = (trap(f[:, 0], hx) - trap(f[:, -1], hx)
           + (-1j) * trap(f[-1, :], hy) - (-1j) * trap(f[0, :], hy))
    boundary = complex(2j * bnd)
    area = (x1 - x0) * (y1 - y0)
    # field norms of the discretization model: area x C2(a) x C2(b) x C2(h)
    scale = area * _c2_norm(av, hx) * (_c2_norm(B1, hx) + _c2_norm(B2, hx)) * max(1.0, _c2_norm(H, hx))
    return StokesResult(interior, boundary, adj_term, float(max(hx, hy)), float(scale))


@dataclass
class BoundaryReduction:
    """(H, H) over X2 by area quadrature against 2i oint_{dX2} Tr(F_alpha (H^{1,0})^dagger) dzbar."""
    area: complex
    boundary: complex
    tolerance: float

    @property
    def defect(self) -> float:
        return abs(self.area - self.boundary)


def boundary_reduction(metric: GluedMetric, nu, zero: int = 0, *, n_r: int = 48, n_theta: int = 256,
                       n_contour: int = 512) -> BoundaryReduction:
    """The pairing-to-boundary reduction for H_{P,t} on X2 (both sides by spectral-accuracy quadrature)."""
    P = metric.patches[zero]
    r2 = metric.schedule.d_inner ** (2 / 3)
    z, zeta, w = zero_disc_nodes(P, np.linspace(0, r2, 5), n_r, n_theta)
    Hf = H_P_t(metric, nu, z, zero)
    Hf.weights = w
    area = l2_pairing_forms(Hf, Hf, metric)
    zc = P.z(circle(0.0, r2, n_contour))
    Hc = H_P_t(metric, nu, zc, zero)
    loc = metric.locate(zc)
    a1, _ = P.a1(_q_of(nu), loc.zeta)
    Fa = _scal(a1, theta_matrix(metric.curve, zc))
    f = np.trace(Fa @ adjoint(Hc.a10, metric.matrix(zc)), axis1=-2, axis2=-1)
    # oint f dzbar = conj(oint conj(f) dz)
    zeta_c = circle(0.0, r2, n_contour)
    dz = P.Z1(zeta_c) * 1j * zeta_c * (2 * np.pi / n_contour)
    boundary = complex(2j * np.sum(f * np.conj(dz)))
    h_mesh = float(max(np.max(np.diff(metric.profile.psi_profile.radii)),
                       np.max(np.diff(metric.profile.v_profile.radii))))
    tol = 20 * h_mesh ** 2 * max(1.0, abs(area))
    return BoundaryReduction(area, boundary, tol)


# ---------------------------------------------------------------------------
# Residue pairing through local primitives
# ---------------------------------------------------------------------------

def residue_boundary_pairing(curve: SpectralCurve, nu1, nu2, eta: AuxInput, *,
                             radius: float | None = None, n: int = 512) -> complex:
    """Sum over zeros of 2i oint alpha_1 upsilon d(beta-bar) on a xi_P circle.

    alpha_1 is evaluated from the z-plane primitive a1 of nu1
    (alpha_1 = a1 dz_P/dz in the xi_P normalization) and d(beta-bar) = nu2 is
    pulled back through the chart, so this is independent of the local
    Laurent expansions used by :func:`spectral.aux_pairing`.
    """
    total = 0j
    q1, q2 = _q_of(nu1), _q_of(nu2)
    for Pz in curve.branch_points:
        e = eta.series.get(Pz.index)
        if e is None:
            continue
        P = ZeroPatch(Pz)
        rad = radius if radius is not None else 0.25 * min(1.0, _chart_radius(P)) ** 0.5
        xi = circle(0.0, rad, n)
        zeta = (4.0 / 9.0) * xi ** 2
        Z1 = P.Z1(zeta)
        a1, _ = P.a1(q1, zeta)
        alpha1 = a1 / Z1
        ups = e(xi) / ((8.0 / 9.0) * xi)
        g2 = (8.0 / 9.0) * np.polynomial.polynomial.polyval(P.z(zeta), q2) * Z1 ** 2
        total += 2j * contour_integrate(xi, lambda x: alpha1 * ups * g2).value
    return complex(total)


# ---------------------------------------------------------------------------
# Error-term lemmas
# ---------------------------------------------------------------------------

@dataclass
class LemmaFit:
    """Remainder decay of one lemma over a random family.

    ``family_exponent`` is the fitted exponent of the worst remainder over
    all trials at each t, i.e. of the uniform bound the lemma asserts;
    ``exponents`` are the per-trial fits, which can sit below 2 gamma for
    small gamma where e^{-gamma t} is not yet small at the start of the t
    range and the e^{-3 gamma t} terms partly cancel the leading one.
    """
    gamma: float
    lemma: str
    exponents: np.ndarray       # per trial; inf when the remainder vanishes identically
    t_values: np.ndarray
    remainders: np.ndarray      # (trials, len(t_values))

    @property
    def min_exponent(self) -> float:
        return float(np.min(self.exponents))

    @property
    def family_exponent(self) -> float:
        return _fit_remainders(self.t_values, np.max(self.remainders, axis=0))

    @property
    def normalized_sup(self) -> float:
        """sup over trials and t of remainder * e^{2 gamma t}."""
        return float(np.max(self.remainders * np.exp(2 * self.gamma * self.t_values)))

    def passed(self, factor: float = 1.9) -> bool:
        return bool(self.family_exponent >= factor * self.gamma)


def _mp_adjoint(A, H):
    K = H.conjugate()
    return K ** -1 * A.transpose_conj() * K


def _mp_herm_exp(X):
    """exp of a Hermitian 2x2 mpmath matrix via the eigen-decomposition."""
    E, Q = mpmath.eighe(X)
    D = mpmath.diag([mpmath.exp(e) for e in E])
    return Q * D * Q.transpose_conj()


def _mp_trace(M):
    return M[0, 0] + M[1, 1]


def _clip(x, dps):
    """Remainders at the working-precision floor count as exact zeros."""
    x = float(x)
    return 0.0 if x <= 10.0 ** (-(dps - 10)) else x


def _fit_remainders(t_values, rems):
    """Decay exponent of the tightest non-increasing upper bound of the remainders.

    The lemmas bound the remainder by C e^{-2 gamma t}; a remainder with
    sign changes has isolated near-zeros that carry no information about
    that bound, so the fit is made to the envelope max_{s >= t} |rem(s)|.
    """
    rems = np.abs(np.asarray(rems, float))
    if np.all(rems == 0):
        return np.inf
    env = np.maximum.accumulate(rems[::-1])[::-1]
    keep = env > 0
    if keep.sum() < 3:
        return np.inf
    return fit_decay_rate(np.asarray(t_values)[keep], env[keep]).rate


def error_lemma_checks(trials: int = 100, gamma: float = 1.0, t_values=None, *, seed: int = 0,
                       zero_perturbation: bool = False, dps: int = 60) -> dict[str, LemmaFit]:
    """Random families satisfying the lemma hypotheses and their fitted remainder exponents.

    Trace lemma: A^(l)_t = diag(alpha^(l)) + e^{-2 gamma t} D^(l) + e^{-gamma t} O^(l)
    (D diagonal, O off-diagonal), H_t = exp(e^{-gamma t} X) with X Hermitian
    traceless; remainder |Tr(A1 A2^dagger_H) - sum alpha1_i conj(alpha2_i)|.
    Projection lemma: G_t = alpha1 Pi1 + alpha2 Pi2 + beta1 Pi1^dagger + beta2 Pi2^dagger;
    remainder ||G_t|^2_H - |alpha1+beta1|^2 - |alpha2+beta2|^2|.
    """
    if trials < 100:
        raise InputError("need at least 100 trials")
    t_values = np.linspace(1, 10, 10) if t_values is None else np.asarray(t_values, float)
    rng = np.random.default_rng(seed)
    mpmath.mp.dps = dps

    def cplx(n):
        # python complex: numpy scalars would turn mpmath products into object arrays
        return [complex(x, y) for x, y in rng.normal(size=(n, 2))]

    ex_trace, ex_proj, rem_trace, rem_proj = [], [], [], []
    for _ in range(trials):
        al1, al2 = cplx(2), cplx(2)
        D1, D2 = cplx(2), cplx(2)
        O1, O2 = cplx(2), cplx(2)
        xh = float(rng.normal())
        xo = complex(rng.normal(), rng.normal())
        be = cplx(2)
        if zero_perturbation:
            D1 = D2 = O1 = O2 = [0j, 0j]
            xh, xo = 0.0, 0j
        r_tr, r_pr = [], []
        for t in t_values:
            e1 = mpmath.exp(-gamma * mpmath.mpf(t))
            e2 = e1 * e1
            X = mpmath.matrix([[xh, xo], [mpmath.conj(xo), -xh]]) * e1
            H = _mp_herm_exp(X)
            A1 = mpmath.matrix([[al1[0] + e2 * D1[0], e1 * O1[0]], [e1 * O1[1], al1[1] + e2 * D1[1]]])
            A2 = mpmath.matrix([[al2[0] + e2 * D2[0], e1 * O2[0]], [e1 * O2[1], al2[1] + e2 * D2[1]]])
            lhs = _mp_trace(A1 * _mp_adjoint(A2, H))
            rhs = mpmath.mpc(al1[0]) * mpmath.conj(al2[0]) + mpmath.mpc(al1[1]) * mpmath.conj(al2[1])
            r_tr.append(_clip(abs(lhs - rhs), dps))
            P1 = mpmath.matrix([[1, 0], [0, 0]])
            P2 = mpmath.matrix([[0, 0], [0, 1]])
            G = (al1[0] * P1 + al1[1] * P2 + be[0] * _mp_adjoint(P1, H) + be[1] * _mp_adjoint(P2, H))
            g2 = _mp_trace(G * _mp_adjoint(G, H))
            ref = (abs(mpmath.mpc(al1[0]) + be[0]) ** 2 + abs(mpmath.mpc(al1[1]) + be[1]) ** 2)
            r_pr.append(_clip(abs(g2 - ref), dps))
        ex_trace.append(_fit_remainders(t_values, r_tr))
        ex_proj.append(_fit_remainders(t_values, r_pr))
        rem_trace.append(r_tr)
        rem_proj.append(r_pr)
    return {"trace": LemmaFit(gamma, "trace", np.array(ex_trace), t_values, np.array(rem_trace)),
            "projection": LemmaFit(gamma, "projection", np.array(ex_proj), t_values, np.array(rem_proj))}


# ---------------------------------------------------------------------------
# Pairing deltas (cancellation-free) and the pipeline report
# ---------------------------------------------------------------------------

@dataclass
class PairingRow:
    t: float
    pair_HH: float
    target_HH: float
    pair_VV: float
    target_VV: float
    pair_HV: complex
    target_HV: complex
    delta_HH: float
    delta_VV: float
    direct_HH: float | None = None
    direct_VV: float | None = None

    def as_dict(self):
        out = {}
        for k, v in self.__dict__.items():
            out[k] = [v.real, v.imag] if isinstance(v, complex) else v
        return out


@dataclass
class PairingReport:
    rows: list
    kappa: float
    kappa0: float
    exponent_HH: float
    exponent_VV: float
    exponent_HV: float
    hv_identically_zero: bool
    glue: dict = field(default_factory=dict)

    @property
    def required_exponent(self) -> float:
        return 4 * self.kappa

    @property
    def target_exponent(self) -> float:
        return 8 * self.kappa

    def to_json(self):
        return {"kappa": self.kappa, "kappa0": self.kappa0,
                "required_exponent": self.required_exponent,
                "target_exponent": self.target_exponent,
                "exponent_HH": self.exponent_HH, "exponent_VV": self.exponent_VV,
                "exponent_HV": self.exponent_HV if np.isfinite(self.exponent_HV) else "inf",
                "hv_identically_zero": self.hv_identically_zero,
                "glue": self.glue,
                "rows": [r.as_dict() for r in self.rows]}


def _glue_data(metric: GluedMetric, P: ZeroPatch, q_nu, q_mu, n_r, n_theta):
    sch = metric.schedule
    r2, r1 = sch.d_inner ** (2 / 3), sch.d_outer ** (2 / 3)
    z, zeta, w = zero_disc_nodes(P, np.linspace(r2, r1, 9), n_r, n_theta)
    return z, zeta, w


def delta_pairings(metric: GluedMetric, nu, mu, *, n_r: int = 16, n_theta: int = 128,
                   n_contour: int = 256, parts: bool = False):
    """(H',H') - ||nu||^2 and (V',V') - ||tau||^2 on X1, summed over zeros.

    Glue annulus: area quadrature of the pairing densities minus their
    limits written so that every term is explicitly quadratic in the small
    quantities w = chi v, sinh w, dv.  X2: boundary reduction on dX2 with
    the same quadratic form of the integrand.  Outside X1 both densities
    coincide identically.  With ``parts=True`` a dict of the glue and X2
    pieces is returned as well.
    """
    t, sch = metric.t, metric.schedule
    q_nu, q_mu = _q_of(nu), _q_of(mu)
    dHH = 0.0
    dVV = 0.0
    pieces = {"glue_HH": 0.0, "glue_VV": 0.0, "core_HH": 0.0, "core_VV": 0.0}
    for P in metric.patches:
        z, zeta, wq = _glue_data(metric, P, q_nu, q_mu, n_r, n_theta)
        r = np.abs(zeta)
        d = r ** 1.5
        chi = sch.chi(d)
        dbchi = _dchi_bar(metric, P, zeta, d)
        v = metric.profile.v(r)
        dv = _dv(metric, P, zeta)
        dbv = np.conj(dv)
        w = chi * v
        dbw = dbchi * v + chi * dbv
        p = metric.curve.p(z)
        m = np.abs(p)
        sw2 = np.sinh(w) ** 2
        # HH
        q = np.polynomial.polynomial.polyval(z, q_nu)
        a1, _ = P.a1(q_nu, zeta)
        eps = chi * a1 * 2 * dv
        Dv = chi * (-2 * t * a1 * m * np.sinh(2 * v)) + dbchi * (-a1 * dv / t)
        R = 2 * np.real(q * np.conj(eps) * np.conj(p)) / m
        dens = 4 * ((np.abs(q) ** 2 / m + np.abs(eps) ** 2 * m) * 4 * sw2 + 2 * R * np.sinh(2 * w)
                    + 2 * np.abs(eps) ** 2 * m + 2 * np.abs(Dv) ** 2)
        dHH += float(np.sum(dens * wq))
        pieces["glue_HH"] += float(np.sum(dens * wq))
        # VV
        qm = np.polynomial.polynomial.polyval(z, q_mu)
        b1, _ = P.a1(q_mu, zeta)
        Y = np.conj(qm) * p / m
        Zc = np.conj(b1) * m
        s1 = dbchi * 2 * np.sinh(w) + 2 * chi * dbw * np.exp(-w)
        s2 = dbchi * 2 * np.sinh(w) + 2 * chi * dbw * np.exp(w)
        lam = 1 - 2 * chi
        cross = -4 * lam * dbchi * sw2 + 4 * chi ** 2 * dbw * np.sinh(2 * w)
        B = (2 * np.abs(Y) ** 2 * sw2 * (1 + lam ** 2)
             + 2 * np.real(Y * np.conj(Zc) * np.conj(cross))
             + np.abs(Zc) ** 2 * (np.abs(s1) ** 2 + np.abs(s2) ** 2))
        Aterm = 2 * np.abs(chi * t * np.conj(b1) * 2 * m * np.sinh(2 * w)) ** 2
        densV = 4 * (B / m + Aterm)
        dVV += float(np.sum(densV * wq))
        pieces["glue_VV"] += float(np.sum(densV * wq))
        # X2 boundary
        r2 = sch.d_inner ** (2 / 3)
        zc_zeta = circle(0.0, r2, n_contour)
        zc = P.z(zc_zeta)
        dz = P.Z1(zc_zeta) * 1j * zc_zeta * (2 * np.pi / n_contour)
        vb = metric.profile.v(np.full(n_contour, r2))
        dvb = _dv(metric, P, zc_zeta)
        pb = metric.curve.p(zc)
        mb = np.abs(pb)
        qb = np.polynomial.polynomial.polyval(zc, q_nu)
        a1b, _ = P.a1(q_nu, zc_zeta)
        fH = a1b * (pb * np.conj(qb) / mb) * 4 * np.sinh(vb) ** 2 + 4 * mb * np.abs(a1b) ** 2 * np.conj(dvb) * np.sinh(2 * vb)
        dHH += float(np.real(2j * np.sum(fH * np.conj(dz))))
        pieces["core_HH"] += float(np.real(2j * np.sum(fH * np.conj(dz))))
        qmb = np.polynomial.polynomial.polyval(zc, q_mu)
        b1b, _ = P.a1(q_mu, zc_zeta)
        Yb = np.conj(qmb) * pb / mb
        fV = np.conj(b1b) * np.conj(Yb) * 4 * np.sinh(vb) ** 2 + 4 * mb * np.abs(b1b) ** 2 * dvb * np.sinh(2 * vb)
        dVV += float(np.real(-2j * np.sum(fV * dz)))
        pieces["core_VV"] += float(np.real(-2j * np.sum(fV * dz)))
    if parts:
        return dHH, dVV, pieces
    return dHH, dVV


def target_on_X1(metric: GluedMetric, nu, *, n_r: int = 24, n_theta: int = 128) -> float:
    """2i int nu ^ conj(nu) over the preimage of X1 = 8 int |q|^2/|p| dx dy.

    In zeta-polar coordinates the density times the area element is
    (32/9) |q|^2 |dz/dzeta|^4 dr dtheta, which is smooth up to the zero.
    """
    total = 0.0
    q = _q_of(nu)
    r1 = metric.schedule.d_outer ** (2 / 3)
    for P in metric.patches:
        r, wr = _composite_gl(np.linspace(0, r1, 5), n_r)
        th = 2 * np.pi * (np.arange(n_theta) + 0.5) / n_theta
        zeta = (r[:, None] * np.exp(1j * th[None, :]))
        Z1 = P.Z1(zeta)
        qq = np.polynomial.polynomial.polyval(P.z(zeta), q)
        total += float(np.sum((32 / 9) * np.abs(qq) ** 2 * np.abs(Z1) ** 4 * wr[:, None]) * 2 * np.pi / n_theta)
    return total


def direct_pairings(metric: GluedMetric, nu, mu, *, n_r: int = 24, n_theta: int = 128):
    """(H',H'), (V',V'), (H',V') and the limits over X1 by brute-force area quadrature."""
    sch = metric.schedule
    r2, r1 = sch.d_inner ** (2 / 3), sch.d_outer ** (2 / 3)
    HH = VV = T_HH = T_VV = 0.0
    HV = 0j
    for P in metric.patches:
        z, zeta, w = zero_disc_nodes(P, np.concatenate([np.linspace(0, r2, 5), np.linspace(r2, r1, 9)[1:]]),
                                     n_r, n_theta)
        Hf, Vf = H_prime(metric, nu, z), V_prime(metric, mu, z)
        Hm = metric.matrix(z)
        HH += float(np.real(np.sum(pairing_density(Hf.pair, Hf.pair, Hm) * w)))
        VV += float(np.real(np.sum(pairing_density(Vf.pair, Vf.pair, Hm) * w)))
        HV += complex(np.sum(pairing_density(Hf.pair, Vf.pair, Hm) * w))
        H0 = limiting_metric(metric.curve, z)
        Fn = (F_nu(metric.curve, nu, z), _zeros_like(z))
        Ft = (_zeros_like(z), F_tau(metric.curve, mu, z))
        T_HH += float(np.real(np.sum(pairing_density(Fn, Fn, H0) * w)))
        T_VV += float(np.real(np.sum(pairing_density(Ft, Ft, H0) * w)))
    return HH, VV, HV, T_HH, T_VV


def _pairing_row(args):
    curve_coeffs, q_nu, q_mu, eta_series, sch, t, direct, n, n_direct = args
    curve = SpectralCurve(curve_coeffs)
    metric = GluedMetric(curve, t, sch, n=n)
    dHH, dVV = delta_pairings(metric, q_nu, q_mu)
    tHH = target_on_X1(metric, q_nu)
    tVV = target_on_X1(metric, q_mu)
    eta = AuxInput(eta_series)
    tHV = aux_pairing(curve, HolDifferential(q_nu), HolDifferential(q_mu), eta) if eta_series else 0j
    if direct:
        # the brute-force area integral over X2 sees the profile's O(mesh^2)
        # error directly, so it runs on a finer profile
        fine = GluedMetric(curve, t, sch, n=n_direct)
        HH, VV, HV, _, _ = direct_pairings(fine, q_nu, q_mu)
        dHH_direct, dVV_direct = HH - tHH, VV - tVV
    else:
        # (H',V') vanishes pointwise: (1,0) parts are off-diagonal against diagonal,
        # (0,1) parts diagonal against off-diagonal; still evaluated on the annulus
        HV = _hv_glue(metric, q_nu, q_mu)
        dHH_direct = dVV_direct = None
    return PairingRow(t, tHH + dHH, tHH, tVV + dVV, tVV, complex(HV), complex(tHV), dHH, dVV,
                      dHH_direct, dVV_direct)


def _hv_glue(metric, q_nu, q_mu):
    total = 0j
    for P in metric.patches:
        z, _, w = _glue_data(metric, P, q_nu, q_mu, 16, 128)
        Hf, Vf = H_prime(metric, q_nu, z), V_prime(metric, q_mu, z)
        total += np.sum(pairing_density(Hf.pair, Vf.pair, metric.matrix(z)) * w)
    return total


def glue_decay(curve: SpectralCurve, schedule: CutoffSchedule, t_values, nu=None, *, n_r: int = 8,
               n_theta: int = 64) -> dict:
    """Fitted t-exponents of sup |s° - id|, sup |s⊥| and sup |rho| on the glue annuli."""
    so, sp, rho = [], [], []
    q = _q_of(nu) if nu is not None else np.array([1.0 + 0j])
    for t in t_values:
        metric = GluedMetric(curve, t, schedule)
        a, b, c = 0.0, 0.0, 0.0
        for P in metric.patches:
            z, _, _ = _glue_data(metric, P, q, q, n_r, n_theta)
            dev_c, dev_p = metric.deviation(z)
            a, b = max(a, float(np.max(dev_c))), max(b, float(np.max(dev_p)))
            c = max(c, float(np.max(np.abs(rho_P_t(metric, q, z)))))
        so.append(a)
        sp.append(b)
        rho.append(c)
    t_values = np.asarray(t_values, float)
    kap, dl = schedule.kappa, schedule.delta
    return {"t": t_values.tolist(), "sup_s_circ": so, "sup_s_perp": sp, "sup_rho": rho,
            "exponent_s_circ": fit_decay_rate(t_values, so).rate,
            "exponent_s_perp": fit_decay_rate(t_values, sp).rate,
            "exponent_rho": fit_decay_rate(t_values, rho).rate,
            "required_s_circ": 8 * (kap + 6 * dl) * 0.9,
            "required_s_perp": 4 * (kap + 6 * dl) * 0.9,
            "required_rho": 4 * (kap + 6 * dl) * 0.9}


def pairing_report(curve: SpectralCurve, nu, mu, eta: AuxInput | None, schedule: CutoffSchedule,
                   t_values, *, direct_t=(2.0,), jobs: int = 1, n: int = 4001,
                   n_direct: int = 16001) -> PairingReport:
    """Approximation-level pairings of H' and V' against the spectral targets.

    The region outside the union of X1 contributes identical densities to
    both sides, so every pair and target is reported over that union.
    ``direct_t`` lists the t for which a brute-force area quadrature of the
    full densities cross-checks the cancellation-free deltas.
    """
    eta_series = {} if eta is None else dict(eta.series)
    args = [(curve.phi.coefficients, _q_of(nu), _q_of(mu), eta_series, schedule, float(t),
             any(abs(t - s) < 1e-12 for s in direct_t), n, n_direct) for t in t_values]
    if jobs > 1:
        with cf.ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_pairing_row, args))
    else:
        rows = [_pairing_row(a) for a in args]
    ts = np.array([r.t for r in rows])
    ex_hh = _fit_or_inf(ts, [abs(r.delta_HH) for r in rows])
    ex_vv = _fit_or_inf(ts, [abs(r.delta_VV) for r in rows])
    hv = [abs(r.pair_HV - r.target_HV) for r in rows]
    scale = max(max(r.target_HH, r.target_VV) for r in rows)
    hv_zero = bool(all(x <= 1e-13 * scale for x in hv))
    ex_hv = np.inf if hv_zero else _fit_or_inf(ts, hv)
    return PairingReport(rows, schedule.kappa, schedule.kappa0, ex_hh, ex_vv, ex_hv, hv_zero)


def _fit_or_inf(t, vals):
    vals = np.asarray(vals, float)
    if np.all(vals == 0):
        return np.inf
    return fit_decay_rate(t, vals).rate
