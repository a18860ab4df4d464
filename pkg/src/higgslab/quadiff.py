"""Flat geometry of polynomial quadratic differentials phi = p(z) dz^2.

The length element is |p|^{1/2} |dz|.  At a simple zero P there is a local
coordinate z_P with phi = (3/2)^2 z_P dz_P^2; the natural (flat) coordinate is
w = z_P^{3/2} = int_P^z p^{1/2} dz and the cone angle is 3*pi.

Geodesics are integrated as the ODE dz/ds = e^{i alpha} / sigma with
sigma^2 = p carried along as a second state variable, so the square-root
branch is continued analytically and sigma^2 = p can be audited afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import minimize_scalar

from .errors import GeodesicError, InputError, NonSimpleZeroError, RegionError
from .numerics import PowerSeries, gauss_legendre

__all__ = [
    "QuadraticDifferential", "Zero", "ZeroChart", "SaddleConnection", "Threshold",
    "Trajectory", "zeros", "flat_length", "natural_coordinate", "distance_from_zero",
    "angle_towards", "shoot_geodesic", "saddle_connections", "threshold",
]

CHART_ORDER = 120


class QuadraticDifferential:
    """phi = p(z) dz^2 with p given by coefficients, lowest degree first."""

    def __init__(self, coefficients):
        c = np.atleast_1d(np.asarray(coefficients, dtype=complex))
        if c.size == 0 or not np.all(np.isfinite(c)):
            raise InputError("coefficients must be finite and non-empty")
        nz = np.flatnonzero(c)
        if nz.size == 0:
            raise InputError("p must not vanish identically")
        self.coefficients = c[: nz[-1] + 1]
        self.poly = np.polynomial.Polynomial(self.coefficients)
        self.dpoly = self.poly.deriv()

    @property
    def degree(self) -> int:
        return self.coefficients.size - 1

    def __call__(self, z):
        return self.poly(np.asarray(z, dtype=complex))

    def derivative(self, z):
        return self.dpoly(np.asarray(z, dtype=complex))

    @cached_property
    def zeros(self) -> list["Zero"]:
        return zeros(self)

    def __repr__(self):
        return f"QuadraticDifferential({self.coefficients.tolist()})"


@dataclass(frozen=True, eq=False)
class Zero:
    """A simple zero of p together with its cube-root chart."""
    phi: QuadraticDifferential
    location: complex
    index: int

    @property
    def p1(self) -> complex:
        return complex(self.phi.derivative(self.location))

    @cached_property
    def chart(self) -> "ZeroChart":
        return ZeroChart(self)

    def local_flat_distance(self, z):
        """Leading-order flat distance (2/3)|p'(P)|^{1/2}|z-P|^{3/2}."""
        return (2.0 / 3.0) * math.sqrt(abs(self.p1)) * np.abs(np.asarray(z) - self.location) ** 1.5

    def z_radius_for(self, d):
        """Euclidean radius whose leading-order flat distance is d."""
        return (1.5 * d / math.sqrt(abs(self.p1))) ** (2.0 / 3.0)

    def __repr__(self):
        return f"Zero({self.location:.12g})"


class ZeroChart:
    """Series for the cube-root coordinate at a simple zero.

    ``forward`` expands z_P as a series in eps = z - P; ``inverse`` expands
    z - P as a series in zeta = z_P.  The branch of the cube root is the
    principal one for the leading coefficient (4 p'(P)/9)^{1/3}.
    """

    def __init__(self, zero: Zero, order: int = CHART_ORDER):
        self.zero = zero
        self.order = order
        P = zero.location
        taylor = PowerSeries.from_polynomial(zero.phi.coefficients, order + 2, center=P)
        p1 = taylor.coefficient(1)
        A = PowerSeries(taylor.coeffs[1:] / p1, 0, 0.0, order + 1)   # p = p1*eps*A
        S = A.pow(0.5, leading=1.0)
        k = np.arange(S.order)
        B = PowerSeries(S.coeffs / (k + 1.5) * 1.5, 0, 0.0, S.order)   # B(0) = 1
        lead = (4.0 * p1 / 9.0) ** (1.0 / 3.0)
        self.lead = complex(lead)
        fwd = B.pow(2.0 / 3.0, leading=1.0).shift(1) * self.lead
        self.forward = fwd.truncate(order)
        self.inverse = self.forward.reversion()
        self.inverse_d = self.inverse.derivative()
        self.inverse_dd = self.inverse_d.derivative()

    def to_z(self, zeta):
        """z as a function of the chart coordinate zeta = z_P."""
        return self.zero.location + self.inverse(zeta)

    def dz_dzeta(self, zeta):
        return self.inverse_d(zeta)

    def d2z_dzeta2(self, zeta):
        return self.inverse_dd(zeta)

    def to_zeta(self, z, tol=1e-14, max_iter=60):
        """Invert ``to_z`` by Newton's method, seeded with the forward series."""
        z = np.asarray(z, dtype=complex)
        eps = z - self.zero.location
        zeta = np.where(np.abs(eps) < 0.5 * self.radius_z, self.forward(eps), self.lead * eps)
        for _ in range(max_iter):
            step = (self.to_z(zeta) - z) / self.dz_dzeta(zeta)
            zeta = zeta - step
            if np.all(np.abs(step) <= tol * (1 + np.abs(zeta))):
                break
        return zeta

    @cached_property
    def radius_z(self) -> float:
        others = [abs(q.location - self.zero.location) for q in self.zero.phi.zeros
                  if q.index != self.zero.index]
        return min(others) if others else np.inf


def zeros(phi: QuadraticDifferential, tol: float = 1e-8) -> list[Zero]:
    """Roots of p, verified simple, sorted by (real, imag).

    Raises
    ------
    NonSimpleZeroError
        When two roots coincide within ``tol`` or p' vanishes at a root.
    """
    c = phi.coefficients
    if c.size == 1:
        return []
    roots = np.polynomial.polynomial.polyroots(c)
    for _ in range(3):   # Newton polish
        d = phi.derivative(roots)
        ok = np.abs(d) > 0
        roots = np.where(ok, roots - phi(roots) / np.where(ok, d, 1), roots)
    scale = np.max(np.abs(c)) * np.maximum(1.0, np.abs(roots)) ** max(phi.degree - 1, 0)
    if np.any(np.abs(phi.derivative(roots)) <= tol * scale):
        raise NonSimpleZeroError("non-simple zero: p and p' share a root")
    for i in range(roots.size):
        for j in range(i + 1, roots.size):
            if abs(roots[i] - roots[j]) <= tol * (1 + abs(roots[i])):
                raise NonSimpleZeroError("non-simple zero: repeated root")
    # snap tiny parts so the ordering is deterministic
    rr = np.round(roots.real, 12) + 1j * np.round(roots.imag, 12)
    rr = np.where(np.abs(rr.real) < 1e-13, 1j * rr.imag, rr)
    rr = np.where(np.abs(rr.imag) < 1e-13, rr.real + 0j, rr)
    order = np.lexsort((rr.imag, rr.real))
    return [Zero(phi, complex(roots[k]), i) for i, k in enumerate(order)]


def flat_length(phi: QuadraticDifferential, path, rtol: float = 1e-10) -> float:
    """Flat length of a polyline: sum of int |p|^{1/2} |dz| over its segments."""
    z = np.asarray(path, dtype=complex).ravel()
    if z.size < 2:
        raise InputError("path needs at least two points")
    dz = np.diff(z)
    if np.any(dz == 0):
        raise InputError("degenerate path: repeated consecutive points")
    total = 0.0
    for a, d in zip(z[:-1], dz):
        val, _ = quad(lambda s: math.sqrt(abs(phi(a + s * d))), 0.0, 1.0,
                      epsabs=0.0, epsrel=rtol, limit=200)
        total += val * abs(d)
    return total


def natural_coordinate(phi: QuadraticDifferential, P: Zero, z, n: int = 96):
    """w = int_P^z p^{1/2} along the straight segment from P to z.

    With s = P + u^2 (z - P) the integral becomes
    2 eps (p1 eps)^{1/2} int_0^1 u^2 prod_Q (1 + u^2 eps/(P - Q))^{1/2} du,
    whose integrand is smooth and whose principal square roots are continuous
    along the segment.  Points near another zero fall back to adaptive
    quadrature.  The overall sign of w depends on the branch of (p1 eps)^{1/2}.
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    eps = z - P.location
    others = np.array([q.location for q in phi.zeros if q.index != P.index], dtype=complex)
    lead = phi.coefficients[-1]

    def integrand(u, e):
        val = u**2 * np.ones_like(e * u)
        for q in others:
            val = val * np.sqrt(1 + u**2 * e / (P.location - q))
        return val

    u, wts = gauss_legendre(n, 0.0, 1.0)
    u2, wts2 = gauss_legendre(n // 2, 0.0, 1.0)
    I = np.array([np.sum(wts * integrand(u, e)) for e in eps])
    I2 = np.array([np.sum(wts2 * integrand(u2, e)) for e in eps])
    bad = np.abs(I - I2) > 1e-12 * (1 + np.abs(I))
    for k in np.flatnonzero(bad):
        e = eps[k]
        re = quad(lambda s: integrand(s, e).real, 0, 1, epsabs=1e-15, epsrel=1e-13, limit=400)[0]
        im = quad(lambda s: integrand(s, e).imag, 0, 1, epsabs=1e-15, epsrel=1e-13, limit=400)[0]
        I[k] = re + 1j * im
    # p = lead * prod (z - Q) = p1 * eps * prod(1 + eps/(P-Q)), p1 = lead * prod(P - Q)
    p1 = lead * np.prod(P.location - others) if others.size else lead
    w = 2 * eps * np.sqrt(p1 * eps) * I
    return w


def distance_from_zero(phi: QuadraticDifferential, P: Zero, z, threshold: float | None = None):
    """Flat distance |w| from the zero P to z.

    Parameters
    ----------
    threshold : float, optional
        M(phi).  When given, points at distance >= M/2 are rejected as lying
        outside the region where the straight chart is certified.
    """
    d = np.abs(natural_coordinate(phi, P, z))
    if threshold is not None and np.any(d >= 0.5 * threshold):
        raise RegionError("point outside the certified region X_P(M/2)")
    return float(d[0]) if np.ndim(z) == 0 else d


def angle_towards(P: Zero, direction: float) -> float:
    """Cone angle in [0, 3 pi) of the geodesic leaving P in z-direction e^{i*direction}."""
    arg_zeta = direction + np.angle(P.chart.lead)
    return float(np.mod(1.5 * arg_zeta, 3 * np.pi))


@dataclass(eq=False)
class Trajectory:
    """Sampled geodesic.

    Attributes
    ----------
    s, z, sigma : ndarray
        Flat arclength, position and tracked branch of p^{1/2}.
    hit : Zero or None
        Zero reached within the hit radius, if any.
    hit_length : float or None
        Flat length from the start zero to the hit zero.
    approaches : dict
        zero index -> (arclength, signed miss distance) at closest approach.
    """
    start: Zero
    angle: float
    s: np.ndarray
    z: np.ndarray
    sigma: np.ndarray
    hit: Zero | None = None
    hit_length: float | None = None
    approaches: dict = field(default_factory=dict)

    @property
    def branch_defect(self) -> float:
        p = self.start.phi(self.z)
        return float(np.max(np.abs(self.sigma**2 - p) / np.maximum(1.0, np.abs(p))))


def _initial_point(P: Zero, angle: float, s0: float):
    zeta = s0 ** (2.0 / 3.0) * np.exp(2j * angle / 3.0)
    chart = P.chart
    z0 = complex(chart.to_z(zeta))
    half = s0 ** (1.0 / 3.0) * np.exp(1j * angle / 3.0)      # zeta^{1/2}
    sigma0 = 1.5 * half / complex(chart.dz_dzeta(zeta))      # dw/dz
    sq = np.sqrt(complex(P.phi(z0)))
    sigma = sq if abs(sq - sigma0) < abs(sq + sigma0) else -sq
    return z0, sigma


def shoot_geodesic(phi: QuadraticDifferential, start: Zero, angle: float, L_max: float, *,
                   hit_radius: float | None = None, rtol: float = 1e-11,
                   samples: int = 400) -> Trajectory:
    """Develop the geodesic leaving ``start`` at cone angle ``angle``.

    Integrates dz/ds = e^{i angle}/sigma, dsigma/ds = p'(z)/(2 sigma) dz/ds
    until flat length ``L_max`` or until the leading-order flat distance to a
    zero drops below ``hit_radius`` (default 1e-4 * L_max).
    """
    if not 0 <= angle < 3 * np.pi:
        raise InputError("angle must lie in [0, 3 pi)")
    if L_max <= 0:
        raise InputError("L_max must be positive")
    hit_radius = 1e-4 * L_max if hit_radius is None else hit_radius
    zs = phi.zeros
    chart_flat = (0.25 * start.chart.radius_z * abs(start.chart.lead)) ** 1.5 if np.isfinite(start.chart.radius_z) else 1.0
    s0 = min(max(10 * hit_radius, 1e-6), 0.05 * L_max, 0.5 * chart_flat)
    z0, sig0 = _initial_point(start, angle, s0)
    e = np.exp(1j * angle)

    dcoef = [complex(c) for c in phi.dpoly.coef[::-1]]

    def rhs(s, y):
        z, sig = y[0], y[1]
        dp = 0j
        for c in dcoef:      # Horner; much cheaper than Polynomial.__call__ here
            dp = dp * z + c
        dz = e / sig
        return np.array([dz, dp / (2 * sig) * dz])

    events = []
    for q in zs:
        rq = q.z_radius_for(hit_radius)

        def ev(s, y, q=q, rq=rq):
            return abs(y[0] - q.location) - rq
        ev.terminal = True
        ev.direction = -1
        events.append(ev)

    sol = solve_ivp(rhs, (s0, L_max), np.array([z0, sig0], dtype=complex), method="DOP853",
                    rtol=rtol, atol=1e-14, events=events, dense_output=True)
    if sol.status == -1:
        raise GeodesicError(f"integration failed: {sol.message}", complex(sol.y[0, -1]))
    s_end = sol.t[-1]
    hit, hit_len = None, None
    for q, te in zip(zs, sol.t_events):
        if te.size:
            hit = q
            z_end = complex(sol.y[0, -1])
            hit_len = float(te[0] + q.local_flat_distance(z_end))
            break
    ss = np.unique(np.concatenate([np.linspace(s0, s_end, samples), sol.t]))
    Y = sol.sol(ss)
    z, sig = Y[0], Y[1]
    s = np.concatenate([[0.0], ss])
    z = np.concatenate([[start.location], z])
    sig = np.concatenate([[0.0], sig])
    traj = Trajectory(start, angle, s, z, sig, hit, hit_len)
    traj.approaches = _closest_approaches(phi, traj, sol)
    return traj


def _closest_approaches(phi, traj, sol):
    out = {}
    s, z = traj.s[1:], traj.z[1:]
    for q in phi.zeros:
        dist = np.abs(z - q.location)
        valid = np.ones(s.size, bool)
        if q.index == traj.start.index:
            # ignore the outbound leg: only consider after the first local maximum
            inc = np.flatnonzero(np.diff(dist) < 0)
            if inc.size == 0:
                continue
            valid[: inc[0]] = False
        if not valid.any():
            continue
        k = np.flatnonzero(valid)[np.argmin(dist[valid])]
        lo, hi = s[max(k - 1, 0)], s[min(k + 1, s.size - 1)]
        if hi > lo:
            res = minimize_scalar(lambda t: abs(sol.sol(t)[0] - q.location), bounds=(lo, hi),
                                  method="bounded", options={"xatol": 1e-14})
            sk = float(res.x)
        else:
            sk = float(s[k])
        zk, sgk = sol.sol(sk)
        tangent = np.exp(1j * traj.angle) / sgk
        side = np.sign(np.imag(np.conj(tangent) * (q.location - zk)))
        out[q.index] = (sk, float(side * q.local_flat_distance(zk)))
    return out


@dataclass(eq=False)
class SaddleConnection:
    start: Zero
    end: Zero
    angle: float
    length: float
    path: np.ndarray

    def as_row(self):
        return {"start": self.start.location, "end": self.end.location,
                "angle": self.angle, "length": self.length}


@dataclass(eq=False)
class Threshold:
    """Minimum saddle-connection length found below the cutoff, if any."""
    value: float | None
    witness: SaddleConnection | None
    L_max: float
    resolution: int

    @property
    def label(self) -> str:
        if self.value is None:
            return "none below cutoff"
        return f"certified up to resolution {self.resolution}"


def saddle_connections(phi: QuadraticDifferential, L_max: float, angular_resolution: int = 64, *,
                       hit_tol: float = 1e-9, dedupe: bool = True) -> list[SaddleConnection]:
    """Saddle connections of flat length below ``L_max`` found by an angle sweep.

    At every zero, ``angular_resolution`` geodesics are shot at angles evenly
    spaced in [0, 3 pi).  A sign change of the signed miss distance to some
    zero between neighbouring angles (or a direct hit) is refined by bisection
    until the geodesic hits the zero within ``hit_tol``.  Connections found in
    both directions are merged when ``dedupe`` is set.
    """
    if angular_resolution < 64:
        raise InputError("angular resolution must be >= 64")
    zs = phi.zeros
    found = []
    for P in zs:
        angles = 3 * np.pi * np.arange(angular_resolution) / angular_resolution
        shots = [shoot_geodesic(phi, P, a, L_max) for a in angles]
        seen = set()
        for k in range(angular_resolution):
            k2 = (k + 1) % angular_resolution
            a1 = angles[k]
            a2 = angles[k2] if k2 else 3 * np.pi
            t1, t2 = shots[k], shots[k2]
            for q in zs:
                cand = None
                if t1.hit is not None and t1.hit.index == q.index:
                    cand = ("hit", a1)
                m1 = t1.approaches.get(q.index)
                m2 = t2.approaches.get(q.index)
                if cand is None and m1 is not None and m2 is not None and np.sign(m1[1]) != np.sign(m2[1]):
                    if t1.hit is None or t1.hit.index == q.index:
                        if t2.hit is None or t2.hit.index == q.index:
                            cand = ("bracket", a1)
                if cand is None:
                    continue
                if cand[0] == "hit":
                    # bracket the hit between neighbours on either side
                    k0 = (k - 1) % angular_resolution
                    lo = angles[k0] if k else angles[k0] - 3 * np.pi
                    ml = shots[k0].approaches.get(q.index)
                    mh = t2.approaches.get(q.index)
                    if ml is None or mh is None or np.sign(ml[1]) == np.sign(mh[1]):
                        tr = shoot_geodesic(phi, P, a1, L_max, hit_radius=hit_tol)
                        if tr.hit is not None and tr.hit.index == q.index:
                            key = (q.index, round(a1, 9))
                            if key not in seen:
                                seen.add(key)
                                found.append(_make_connection(phi, tr))
                        continue
                    tr = _refine_wrapped(phi, P, q, lo, ml[1], a2, L_max, hit_tol)
                else:
                    tr = _refine_wrapped(phi, P, q, a1, m1[1], a2, L_max, hit_tol)
                if tr is None:
                    continue
                key = (q.index, round(tr.angle, 7))
                if key in seen:
                    continue
                seen.add(key)
                found.append(_make_connection(phi, tr))
    found.sort(key=lambda c: (c.length, c.start.index, c.end.index))
    if dedupe:
        kept = []
        for c in found:
            dup = any(k.start.index == c.end.index and k.end.index == c.start.index
                      and abs(k.length - c.length) < 1e-6 for k in kept)
            if not dup:
                kept.append(c)
        found = kept
    return found


def _refine_wrapped(phi, P, q, a_lo, m_lo, a_hi, L_max, hit_tol):
    """Bisection in a possibly wrapped angle interval (angles taken mod 3 pi)."""
    def shot(a):
        return shoot_geodesic(phi, P, float(np.mod(a, 3 * np.pi)), L_max, hit_radius=hit_tol)

    best = None
    for _ in range(60):
        mid = 0.5 * (a_lo + a_hi)
        tr = shot(mid)
        if tr.hit is not None and tr.hit.index != q.index:
            return None
        ap = tr.approaches.get(q.index)
        if tr.hit is not None and tr.hit.index == q.index:
            best = tr
            if ap is None or abs(ap[1]) <= hit_tol or abs(a_hi - a_lo) < 1e-14:
                return tr
        if ap is None:
            return best
        if np.sign(ap[1]) == np.sign(m_lo):
            a_lo, m_lo = mid, ap[1]
        else:
            a_hi = mid
        if abs(a_hi - a_lo) < 1e-15:
            break
    return best


def _make_connection(phi, tr: Trajectory) -> SaddleConnection:
    return SaddleConnection(tr.start, tr.hit, tr.angle, float(tr.hit_length),
                            np.concatenate([tr.z, [tr.hit.location]]))


def threshold(phi: QuadraticDifferential, L_max: float, angular_resolution: int = 64) -> Threshold:
    """M(phi): minimum length over the saddle connections found below ``L_max``."""
    conns = saddle_connections(phi, L_max, angular_resolution)
    if not conns:
        return Threshold(None, None, L_max, angular_resolution)
    best = min(conns, key=lambda c: c.length)
    return Threshold(best.length, best, L_max, angular_resolution)
