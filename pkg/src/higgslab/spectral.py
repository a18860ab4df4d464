"""Hyperelliptic spectral curves xi^2 = p(z), L2 pairings and residue pairings.

Local conventions at a branch point P: z_P is the cube-root coordinate of
:mod:`higgslab.quadiff` and xi_P the coordinate on the curve with
z_P = (4/9) xi_P^2, so that phi^{1/2} = (8/9) xi_P^2 dxi_P.  A differential
nu = q dz / xi then reads g(xi_P) dxi_P with g = (8/9) q(z(z_P)) (dz/dz_P)^2.

The auxiliary datum eta is a holomorphic 1-form given at each branch point
by the series e(xi_P) in eta = e dxi_P.  Writing eta = upsilon * pi^*(dz_P),
upsilon = e / ((8/9) xi_P) has at most a simple pole.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from .errors import InputError
from .numerics import PowerSeries, circle, contour_integrate, fit_decay_rate, gauss_legendre
from .quadiff import QuadraticDifferential, Zero

__all__ = [
    "SpectralCurve", "HolDifferential", "AuxInput", "GramBlocks", "l2_pairing_hol",
    "semiflat_gram", "res2_at_branch", "local_series", "aux_pairing", "aux_gram",
    "aux_boundary_form", "aux_closed_form", "aux_smallness_report", "rotate_local",
    "AuxSmallness",
]

LOCAL_ORDER = 24


class SpectralCurve:
    """xi^2 = p(z) with branch points the (simple) zeros of p.

    Cuts join consecutive branch points in the sorted order; with an odd
    number of branch points the last one is joined to infinity.  The sheet
    label is the sign of xi relative to the principal branch of p^{1/2}.
    """

    def __init__(self, coefficients):
        self.phi = coefficients if isinstance(coefficients, QuadraticDifferential) \
            else QuadraticDifferential(coefficients)
        self.branch_points: list[Zero] = self.phi.zeros
        n = self.phi.degree
        self.genus = max((n - 1) // 2, 0)
        bp = [q.location for q in self.branch_points]
        self.cuts = [(bp[k], bp[k + 1]) for k in range(0, len(bp) - 1, 2)]
        if len(bp) % 2:
            self.cuts.append((bp[-1], complex("inf")))

    @property
    def degree(self) -> int:
        return self.phi.degree

    def p(self, z):
        return self.phi(z)

    def __repr__(self):
        return f"SpectralCurve({self.phi.coefficients.tolist()})"


@dataclass(frozen=True)
class HolDifferential:
    """nu = q(z) dz / xi with q given by coefficients, lowest degree first."""
    q: tuple

    def __init__(self, q):
        object.__setattr__(self, "q", tuple(complex(c) for c in np.atleast_1d(q)))

    @classmethod
    def monomial(cls, k: int, coeff=1.0):
        c = np.zeros(k + 1, complex)
        c[k] = coeff
        return cls(c)

    @property
    def degree(self) -> int:
        c = np.asarray(self.q)
        nz = np.flatnonzero(c)
        return -1 if nz.size == 0 else int(nz[-1])

    def numerator(self, z):
        return np.polynomial.polynomial.polyval(np.asarray(z, dtype=complex), np.asarray(self.q))

    def holomorphic_at_infinity(self, curve: SpectralCurve) -> bool:
        return self.degree <= curve.genus - 1

    def __mul__(self, c):
        return HolDifferential(np.asarray(self.q) * c)

    __rmul__ = __mul__

    def __add__(self, other):
        a, b = np.asarray(self.q), np.asarray(other.q)
        n = max(a.size, b.size)
        return HolDifferential(np.pad(a, (0, n - a.size)) + np.pad(b, (0, n - b.size)))


@dataclass
class GramBlocks:
    hh: np.ndarray
    vv: np.ndarray
    hv: np.ndarray

    def full(self):
        return np.block([[self.hh, self.hv], [self.hv.conj().T, self.vv]])

    def to_json(self):
        enc = lambda M: [[[float(x.real), float(x.imag)] for x in row] for row in np.atleast_2d(M)]
        return {"hor_hor": enc(self.hh), "ver_ver": enc(self.vv), "hor_ver": enc(self.hv)}


# ---------------------------------------------------------------------------
# L2 pairing of holomorphic differentials
# ---------------------------------------------------------------------------

def _density(curve, nu1, nu2):
    def f(z):
        return nu1.numerator(z) * np.conj(nu2.numerator(z)) / np.abs(curve.p(z))
    return f


def _check_integrable(curve, nu1, nu2):
    d = nu1.degree + nu2.degree
    if d >= 0 and curve.degree - d <= 2:
        raise InputError("pairing diverges at infinity: need deg q1 + deg q2 < deg p - 2")


def _tail(curve, nu1, nu2, R, n_s=48, n_phi=256):
    """8 * int_{|z|>R} q1 conj(q2)/|p| by inversion u = 1/z (smooth integrand)."""
    s, ws = gauss_legendre(n_s, 0.0, 1.0 / R)
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    S, PHI = np.meshgrid(s, phi, indexing="ij")
    u = S * np.exp(1j * PHI)
    # polynomial ratios in u: q(1/u) = u^{-d} qrev(u), |p(1/u)| = |u|^{-n} |prev(u)|
    c1, c2 = np.asarray(nu1.q), np.asarray(nu2.q)
    cp = curve.phi.coefficients
    d1, d2, n = len(c1) - 1, len(c2) - 1, len(cp) - 1
    q1 = np.polynomial.polynomial.polyval(u, c1[::-1])
    q2 = np.polynomial.polynomial.polyval(u, c2[::-1])
    pr = np.polynomial.polynomial.polyval(u, cp[::-1])
    power = n - d1 - d2 - 4 + 1          # |u|^{n-d1-d2} * |u|^{-4} * s (polar Jacobian)
    phase = np.exp(-1j * d1 * PHI) * np.exp(1j * d2 * PHI)
    val = q1 * np.conj(q2) / np.abs(pr) * phase * S ** power
    return 8 * np.sum(ws[:, None] * val) * (2 * np.pi / n_phi)


def _pairing_polar(curve, nu1, nu2, R, epsrel):
    """Singularity subtraction plus nested adaptive quadrature in polar coordinates.

    At each branch point P the model c_P exp(-|z-P|^2/s^2)/|z-P| with
    c_P = q1(P) conj(q2(P)) / |p'(P)| is removed and its whole-plane
    integral pi^{3/2} s c_P added back.  The width s is a quarter of the
    distance to the nearest other branch point or to |z| = R, so the model
    mass outside the disc is below exp(-16).
    """
    f = _density(curve, nu1, nu2)
    bp = [q.location for q in curve.branch_points]
    cP = [nu1.numerator(b) * np.conj(nu2.numerator(b)) / abs(q.p1)
          for b, q in zip(bp, curve.branch_points)]
    width = []
    for b in bp:
        gaps = [abs(b - o) for o in bp if o != b] + [R - abs(b)]
        width.append(0.25 * min(gaps))

    def g(z):
        out = f(z)
        for b, c, w in zip(bp, cP, width):
            d = np.abs(z - b)
            out = out - c * np.exp(-(d / w) ** 2) / d
        return out

    radii = sorted({abs(b) for b in bp if 0 < abs(b) < R})
    ang = sorted({float(np.mod(np.angle(b), 2 * np.pi)) for b in bp if abs(b) > 0})
    ang = [a for a in ang if 0 < a < 2 * np.pi] or None
    parts = [np.real]
    if any(abs(np.imag(c)) > 0 for c in cP) or np.any(np.imag(f(np.array([0.3 + 1.1j, -1.7 + 0.4j]))) != 0):
        parts.append(np.imag)

    def integral(part):
        def inner(r):
            return quad(lambda th: part(g(r * np.exp(1j * th))) * r, 0.0, 2 * np.pi,
                        epsabs=1e-11, epsrel=epsrel, points=ang, limit=100)[0]
        return quad(inner, 0.0, R, epsabs=1e-10, epsrel=epsrel, points=radii or None, limit=100)[0]

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        vals = [integral(part) for part in parts]
    model = np.pi ** 1.5 * sum(c * w for c, w in zip(cP, width))
    return 8 * (complex(vals[0], vals[1] if len(vals) > 1 else 0.0) + model)


def _bump(s):
    """Smooth partition function: 1 for s <= 1/2, 0 for s >= 1."""
    s = np.asarray(s, dtype=float)
    x = np.clip(2 * s - 1, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1 - x, 1)), 0.0)
        b = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1)), 0.0)
    out = a / (a + b)
    return np.where(x <= 0, 1.0, np.where(x >= 1, 0.0, out))


def _pairing_partition(curve, nu1, nu2, R, n_r=64, n_phi=256):
    """Partition of unity: local polar coordinates at each branch point plus a
    smooth remainder on panels in global polar coordinates."""
    f = _density(curve, nu1, nu2)
    bp = np.array([q.location for q in curve.branch_points])
    if bp.size > 1:
        sep = min(abs(a - b) for i, a in enumerate(bp) for b in bp[i + 1:])
    else:
        sep = 2.0
    rho = min(0.45 * sep, 1.0)

    def chi_sum(z):
        return sum(_bump(np.abs(z - b) / rho) for b in bp) if bp.size else np.zeros(np.shape(z))

    total = 0j
    s, ws = gauss_legendre(n_r, 0.0, rho)
    ph = 2 * np.pi * np.arange(n_phi) / n_phi
    for b in bp:
        Z = b + s[:, None] * np.exp(1j * ph[None, :])
        total += np.sum(ws[:, None] * f(Z) * _bump(s / rho)[:, None] * s[:, None]) * (2 * np.pi / n_phi)
    # remainder: smooth, integrate on radial panels
    rb = np.abs(bp) if bp.size else np.zeros(0)
    lo_band = max(rb.min() - rho, 0.0) if bp.size else 0.0
    hi_band = rb.max() + rho if bp.size else 0.0
    edges = [0.0]
    h_fine = rho / 6
    r = 0.0
    while r < R - 1e-12:
        step = h_fine if lo_band - h_fine <= r <= hi_band else max(h_fine, 0.25 * max(r, rho))
        r = min(r + step, R)
        edges.append(r)
    g16, w16 = np.polynomial.legendre.leggauss(16)
    for a, bnd in zip(edges[:-1], edges[1:]):
        rr = 0.5 * (bnd - a) * g16 + 0.5 * (a + bnd)
        wr = 0.5 * (bnd - a) * w16
        fine = (bnd >= lo_band - h_fine) and (a <= hi_band + h_fine) and bp.size
        m = max(n_phi, int(np.ceil(2 * np.pi * bnd / (rho / 12)))) if fine else n_phi
        th = 2 * np.pi * np.arange(m) / m
        Z = rr[:, None] * np.exp(1j * th[None, :])
        val = f(Z) * (1 - chi_sum(Z)) * rr[:, None]
        total += np.sum(wr[:, None] * val) * (2 * np.pi / m)
    return 8 * total


def l2_pairing_hol(curve: SpectralCurve, nu1: HolDifferential, nu2: HolDifferential, *,
                   scheme: str = "polar", radius: float | None = None, epsrel: float = 1e-7):
    """2i int_Sigma nu1 ^ conj(nu2) = 8 int q1 conj(q2) / |p| dx dy over the plane.

    The plane is split at ``radius``; the outer part is integrated exactly
    after the inversion u = 1/z, the inner part with the chosen scheme:
    ``"polar"`` (nested adaptive quadrature in polar coordinates) or
    ``"partition"`` (partition of unity with local polar coordinates at the
    branch points).

    Raises
    ------
    InputError
        If the integral diverges at infinity.
    """
    _check_integrable(curve, nu1, nu2)
    bp = [abs(q.location) for q in curve.branch_points]
    if radius is None:
        radius = 2.0 * max(bp + [1.0])
    if scheme == "polar":
        inner = _pairing_polar(curve, nu1, nu2, radius, epsrel)
    elif scheme == "partition":
        inner = _pairing_partition(curve, nu1, nu2, radius)
    else:
        raise InputError(f"unknown scheme {scheme!r}")
    return complex(inner + _tail(curve, nu1, nu2, radius))


def semiflat_gram(curve: SpectralCurve, hor, ver, **kw) -> GramBlocks:
    """Semi-flat Gram blocks.

    ``hor`` are holomorphic differentials nu; ``ver`` are holomorphic
    differentials mu standing for the antiholomorphic forms tau = conj(mu).
    The ver-ver entry -2i int tau_i ^ conj(tau_j) equals conj of the
    holomorphic pairing of (mu_i, mu_j); the hor-ver block vanishes.
    """
    def gram(basis):
        n = len(basis)
        G = np.zeros((n, n), complex)
        for i in range(n):
            for j in range(i, n):
                G[i, j] = l2_pairing_hol(curve, basis[i], basis[j], **kw)
                G[j, i] = np.conj(G[i, j])
            G[i, i] = G[i, i].real
        return G
    hh = gram(hor)
    vv = np.conj(gram(ver))
    return GramBlocks(hh, vv, np.zeros((len(hor), len(ver)), complex))


# ---------------------------------------------------------------------------
# Local series and residues
# ---------------------------------------------------------------------------

def res2_at_branch(series: PowerSeries) -> complex:
    """Coefficient of xi^{-2} (the coefficient of (dxi/xi)^2) of g (dxi)^2."""
    v = series.valuation
    if v < -2:
        raise InputError("pole of order > 2 in quadratic differential")
    if series.order <= -2:
        raise InputError("series truncated before the xi^-2 coefficient")
    return series.coefficient(-2)


def _zeta_to_xi(s: PowerSeries, order: int) -> PowerSeries:
    """Substitute zeta = (4/9) xi^2 into a Taylor series in zeta."""
    c = np.zeros(order, complex)
    for k in range(s.start, s.order):
        if 2 * k < order:
            c[2 * k] = s.coefficient(k) * (4.0 / 9.0) ** k
    return PowerSeries(c, 0, 0.0, min(order, 2 * s.order))


def local_series(curve: SpectralCurve, nu, P: Zero, order: int = LOCAL_ORDER) -> PowerSeries:
    """g(xi_P) with nu = g dxi_P near the branch point P.

    A :class:`PowerSeries` argument is returned unchanged (already local).
    """
    if isinstance(nu, PowerSeries):
        return nu
    m = order // 2 + 2
    inv = P.chart.inverse.truncate(m + 1)
    qz = PowerSeries.from_polynomial(np.asarray(nu.q), m + 1, center=P.location)
    qz = PowerSeries(qz.coeffs, 0, 0.0, qz.order)
    q_of = qz.compose(inv) if inv.valuation >= 1 else qz
    dz = inv.derivative()
    g = (q_of * dz * dz) * (8.0 / 9.0)
    return _zeta_to_xi(g.truncate(m), order)


def rotate_local(series: PowerSeries, omega: complex) -> PowerSeries:
    """Pull back g(xi) dxi under xi -> omega*xi: g'(xi) = g(omega xi) omega."""
    k = np.arange(series.start, series.order)
    return PowerSeries(series.coeffs * omega ** k * omega, series.start, series.center, series.order)


@dataclass
class AuxInput:
    """eta = e_P(xi_P) dxi_P at each branch point (keyed by zero index)."""
    series: dict = field(default_factory=dict)

    @classmethod
    def zero(cls):
        return cls({})

    @classmethod
    def uniform(cls, curve: SpectralCurve, series: PowerSeries):
        return cls({q.index: series for q in curve.branch_points})

    def scaled(self, c):
        return AuxInput({k: v * c for k, v in self.series.items()})

    def upsilon(self, index) -> PowerSeries | None:
        e = self.series.get(index)
        if e is None:
            return None
        u = (e * (9.0 / 8.0)).shift(-1)
        if u.valuation < -1:
            raise InputError("upsilon must have at most a simple pole")
        return u


def _aux_quadratic(g1, g2, ups):
    """nu1 nu2 eta / phi^{1/2} = g1 g2 upsilon / xi (dxi)^2."""
    return (g1 * g2 * ups).shift(-1)


def aux_pairing(curve: SpectralCurve, nu1, nu2, eta: AuxInput, *, omega: complex = 1.0,
                order: int = LOCAL_ORDER) -> complex:
    """-4 pi sum_P Res2_P(nu1 nu2 eta / phi^{1/2}).

    ``nu1``, ``nu2`` are HolDifferentials, or dicts mapping zero index to a
    local PowerSeries.  ``omega`` re-expresses every local series in the
    rotated coordinate xi -> omega xi before taking residues.
    """
    total = 0j
    for P in sorted(curve.branch_points, key=lambda q: (q.location.real, q.location.imag)):
        ups_raw = eta.series.get(P.index)
        if ups_raw is None:
            continue
        g1 = nu1[P.index] if isinstance(nu1, dict) else local_series(curve, nu1, P, order)
        g2 = nu2[P.index] if isinstance(nu2, dict) else local_series(curve, nu2, P, order)
        e = ups_raw
        if omega != 1.0:
            g1, g2, e = (rotate_local(s, omega) for s in (g1, g2, e))
        ups = AuxInput({0: e}).upsilon(0)
        total += res2_at_branch(_aux_quadratic(g1, g2, ups))
    return complex(-4 * np.pi * total)


def aux_closed_form(g1: PowerSeries, g2: PowerSeries, ups: PowerSeries) -> complex:
    """-4 pi (d alpha)(xi upsilon)(d beta-bar) at xi = 0 for one branch point.

    With nu1 = d alpha and nu2 = d beta-bar this is 2i * (2 pi i) times the
    product of the constant terms of g1, xi*upsilon and g2.
    """
    X = g1.coefficient(0) * ups.shift(1).coefficient(0) * g2.coefficient(0)
    return complex(2j * 2j * np.pi * X)


def aux_boundary_form(g1: PowerSeries, g2: PowerSeries, ups: PowerSeries, radius: float = 0.1,
                      n: int = 256) -> complex:
    """2i oint alpha_1 upsilon d(beta-bar) on |xi| = radius, by quadrature.

    alpha = int g1 is split as alpha_0 + alpha_1 xi with alpha_0, alpha_1
    even in xi; only alpha_1 = (alpha(xi) - alpha(-xi)) / (2 xi) enters.
    """
    alpha = g1.integral()
    path = circle(0.0, radius, n)

    def integrand(x):
        a1 = (alpha(x) - alpha(-x)) / (2 * x)
        return a1 * ups(x) * g2(x)
    return complex(2j * contour_integrate(path, integrand).value)


def aux_gram(curve: SpectralCurve, hor, ver, eta: AuxInput) -> GramBlocks:
    """Auxiliary blocks: hor-ver filled by aux_pairing, diagonal blocks zero."""
    hv = np.array([[aux_pairing(curve, nu, mu, eta) for mu in ver] for nu in hor], complex).reshape(len(hor), len(ver))
    return GramBlocks(np.zeros((len(hor), len(hor)), complex), np.zeros((len(ver), len(ver)), complex), hv)


@dataclass
class AuxSmallness:
    t: np.ndarray
    ratio: np.ndarray
    exponent: float
    min_eigenvalue: np.ndarray
    positivity_threshold: float | None


def aux_smallness_report(curve: SpectralCurve, hor, ver, eta_family, t_values,
                         semiflat: GramBlocks | None = None) -> AuxSmallness:
    """Decay of ||aux block|| / ||semi-flat block|| along a family eta_t.

    Returns the fitted exponent and the smallest sampled t from which
    g_sf + g_aux stays positive definite.
    """
    t_values = np.asarray(t_values, dtype=float)
    sf = semiflat if semiflat is not None else semiflat_gram(curve, hor, ver)
    sf_norm = np.linalg.norm(sf.full(), 2)
    ratio, mins = [], []
    for t in t_values:
        ag = aux_gram(curve, hor, ver, eta_family(t))
        full = sf.full() + ag.full()
        mins.append(np.min(np.linalg.eigvalsh(0.5 * (full + full.conj().T))))
        ratio.append(np.linalg.norm(ag.hv, 2) / sf_norm)
    ratio, mins = np.array(ratio), np.array(mins)
    pos = ratio > 0
    exponent = fit_decay_rate(t_values[pos], ratio[pos]).rate if pos.sum() >= 3 else float("nan")
    thr = None
    ok = mins > 0
    for k in range(len(t_values)):
        if ok[k:].all():
            thr = float(t_values[k])
            break
    return AuxSmallness(t_values, ratio, float(exponent), mins, thr)
