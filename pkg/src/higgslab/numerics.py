"""Numerical kernels shared by the other modules.

Contents
--------
bessel_I0, bessel_I0e, log_bessel_I0, bessel_ratio_bound
    Modified Bessel function of order zero and the ratio bound used by the
    comparison arguments.
Nonlinearity, RadialProfile, solve_radial_bvp
    Second-order finite differences for u'' + u'/r = f(r, u).
Grid2D, solve_elliptic_newton
    Cartesian grids on discs, annuli and rectangles; damped Newton for
    Delta u = f(z, u) with Dirichlet data.
fit_decay_rate, contour_integrate, PowerSeries
    Exponent fits, periodic contour quadrature and truncated Laurent series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from .errors import ConvergenceError, DomainError, InputError

__all__ = [
    "bessel_I0", "bessel_I0e", "log_bessel_I0", "bessel_ratio_bound",
    "Nonlinearity", "RadialProfile", "solve_radial_bvp",
    "Grid2D", "EllipticSolution", "solve_elliptic_newton",
    "DecayFit", "fit_decay_rate",
    "ContourIntegral", "circle", "contour_integrate",
    "PowerSeries", "gauss_legendre",
]


# ---------------------------------------------------------------------------
# Modified Bessel function of order zero
# ---------------------------------------------------------------------------

# Below this argument the power series is summed directly.  All its terms are
# positive, so there is no cancellation and the relative error stays at a few
# ulps times the number of terms.
_SERIES_MAX = 60.0


def _check_bessel_arg(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("bessel_I0 requires finite arguments")
    if np.any(x < 0):
        raise DomainError("bessel_I0 is defined here for x >= 0 only")
    return x


def _i0_series(x):
    """Sum (x/2)^{2k}/(k!)^2 until the terms stop contributing."""
    q = 0.25 * x * x
    total = np.ones_like(x)
    term = np.ones_like(x)
    k = 0
    while True:
        k += 1
        term = term * q / (k * k)
        total = total + term
        if np.all(term <= 1e-17 * total) or k > 400:
            return total


def _i0e_asymptotic(x):
    """Hankel expansion of e^{-x} I0(x), valid for large x."""
    total = np.ones_like(x)
    term = np.ones_like(x)
    for k in range(1, 60):
        term = term * (2 * k - 1) ** 2 / (8.0 * k * x)
        total = total + term
        if np.all(np.abs(term) <= 1e-17 * total):
            break
    return total / np.sqrt(2.0 * np.pi * x)


def bessel_I0e(x):
    """Exponentially scaled I0: e^{-x} I0(x), for x >= 0."""
    x = _check_bessel_arg(x)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    small = x <= _SERIES_MAX
    if np.any(small):
        out[small] = _i0_series(x[small]) * np.exp(-x[small])
    if np.any(~small):
        out[~small] = _i0e_asymptotic(x[~small])
    return float(out[0]) if scalar else out


def bessel_I0(x):
    """Modified Bessel function of the first kind of order zero.

    The positive, even, radially symmetric solution of
    u'' + u'/r = u with u(0) = 1.

    Parameters
    ----------
    x : float or array_like
        Non-negative finite argument(s).

    Returns
    -------
    float or ndarray
        I0(x); relative error below 1e-12 for x <= 50.

    Raises
    ------
    DomainError
        For negative or non-finite input.
    """
    x = _check_bessel_arg(x)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    small = x <= _SERIES_MAX
    if np.any(small):
        out[small] = _i0_series(x[small])
    if np.any(~small):
        with np.errstate(over="ignore"):
            out[~small] = _i0e_asymptotic(x[~small]) * np.exp(x[~small])
    return float(out[0]) if scalar else out


def log_bessel_I0(x):
    """log I0(x) without overflow."""
    x = _check_bessel_arg(x)
    return np.log(bessel_I0e(x)) + x


def bessel_ratio_bound(gamma1: float, gamma2: float, samples) -> float:
    """Supremum of e^{-g2 (a-b)} I0(g1 a) / I0(g1 b) over sample pairs.

    Parameters
    ----------
    gamma1, gamma2 : float
        Rates with 0 < gamma1 < gamma2.
    samples : sequence of (b, a)
        Pairs with 0 < b <= a.  Equal pairs contribute exactly 1.
    """
    if not (0 < gamma1 < gamma2):
        raise InputError("need 0 < gamma1 < gamma2")
    pairs = np.asarray(samples, dtype=float).reshape(-1, 2)
    b, a = pairs[:, 0], pairs[:, 1]
    if np.any(b <= 0) or np.any(b > a):
        raise InputError("each sample must satisfy 0 < b <= a")
    logs = -gamma2 * (a - b) + log_bessel_I0(gamma1 * a) - log_bessel_I0(gamma1 * b)
    return float(np.exp(np.max(logs)))


# ---------------------------------------------------------------------------
# Radial boundary value problems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Nonlinearity:
    """Right-hand side f(x, u) of a semilinear equation and its u-derivative.

    ``x`` is a radius for radial problems and a complex node position for
    planar ones.
    """
    f: Callable
    dfdu: Callable
    name: str = ""

    @classmethod
    def linear(cls, coefficient=0.0, source=None):
        """f = coefficient * u + source(x)."""
        def f(x, u):
            s = 0.0 if source is None else source(x)
            return coefficient * u + s

        def dfdu(x, u):
            return coefficient * np.ones_like(np.asarray(u, dtype=float))

        return cls(f, dfdu, f"linear({coefficient})")


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """Mesh solution of a radial ODE.

    Attributes
    ----------
    radii, values, derivatives : ndarray
        Mesh, solution and its first derivative.

    The interpolant is the C2 cubic spline of the values with the end slopes
    clamped to ``derivatives``; its second derivative is O(h^2) accurate,
    unlike a Hermite interpolant built on difference-quotient slopes.
    residual : float
        Relative sup-norm residual of the discrete equations.
    """
    radii: np.ndarray
    values: np.ndarray
    derivatives: np.ndarray
    residual: float = 0.0
    iterations: int = 0
    _spline: CubicSpline = field(init=False, repr=False)

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        if r.ndim != 1 or r.size < 3 or np.any(np.diff(r) <= 0):
            raise InputError("radii must be strictly increasing with >= 3 nodes")
        if not np.all(np.isfinite(self.values)):
            raise InputError("profile values must be finite")
        d = np.asarray(self.derivatives, dtype=float)
        spline = CubicSpline(r, self.values, bc_type=((1, d[0]), (1, d[-1])))
        object.__setattr__(self, "_spline", spline)

    def __call__(self, r, nu: int = 0):
        r = np.asarray(r, dtype=float)
        if np.any(r < self.radii[0] - 1e-12) or np.any(r > self.radii[-1] + 1e-12):
            raise DomainError("radius outside the profile mesh")
        return self._spline(r, nu)


def solve_radial_bvp(rhs: Nonlinearity, r_max: float, outer_value: float, *,
                     n: int = 2001, r_min: float = 0.0, inner_value: float | None = None,
                     initial=None, tol: float = 1e-10, max_iter: int = 50) -> RadialProfile:
    """Solve u'' + u'/r = rhs(r, u) on [r_min, r_max].

    With ``r_min == 0`` the origin is a regular point (u'(0) = 0 is imposed
    through the symmetric stencil 2u''(0) = f); otherwise ``inner_value`` is
    a Dirichlet condition at ``r_min``.  Damped Newton on the tridiagonal
    finite-difference system.

    Parameters
    ----------
    rhs : Nonlinearity
    r_max, outer_value : float
        Outer radius and Dirichlet value there.
    n : int
        Number of mesh nodes (uniform mesh).
    initial : callable or array, optional
        Starting guess; defaults to the constant ``outer_value``.
    tol : float
        Bound on the relative residual max_j |R_j| / (4|u_j|/h^2 + |f_j| + 1).

    Raises
    ------
    ConvergenceError
        If Newton stalls above ``tol`` or exceeds ``max_iter`` iterations.
    """
    if not r_max > r_min >= 0:
        raise InputError("need 0 <= r_min < r_max")
    regular = r_min == 0.0
    if not regular and inner_value is None:
        raise InputError("inner_value required when r_min > 0")
    r = np.linspace(r_min, r_max, n)
    h = r[1] - r[0]
    if initial is None:
        u = np.full(n, float(outer_value))
    elif callable(initial):
        u = np.asarray(initial(r), dtype=float).copy()
    else:
        u = np.asarray(initial, dtype=float).copy()
    u[-1] = outer_value
    if not regular:
        u[0] = inner_value

    rin = r[1:-1]
    a_lo = 1.0 / h**2 - 1.0 / (2.0 * rin * h)
    a_up = 1.0 / h**2 + 1.0 / (2.0 * rin * h)

    def residual(u):
        f = rhs.f(r, u)
        R = np.empty(n)
        R[1:-1] = a_lo * u[:-2] - 2.0 / h**2 * u[1:-1] + a_up * u[2:] - f[1:-1]
        if regular:
            R[0] = 4.0 * (u[1] - u[0]) / h**2 - f[0]
        else:
            R[0] = u[0] - inner_value
        R[-1] = u[-1] - outer_value
        scale = 4.0 * np.abs(u) / h**2 + np.abs(f) + 1.0
        scale[-1] = 1.0
        if not regular:
            scale[0] = 1.0
        return R, np.max(np.abs(R) / scale)

    def newton_step(u, R):
        df = rhs.dfdu(r, u)
        ab = np.zeros((3, n))
        # ab[0, j+1] = dR_j/du_{j+1}; ab[1, j] = diagonal; ab[2, j-1] = dR_j/du_{j-1}
        ab[1, 1:-1] = -2.0 / h**2 - df[1:-1]
        ab[0, 2:] = a_up
        ab[2, :-2] = a_lo
        if regular:
            ab[1, 0] = -4.0 / h**2 - df[0]
            ab[0, 1] = 4.0 / h**2
        else:
            ab[1, 0] = 1.0
            ab[0, 1] = 0.0
        ab[1, -1] = 1.0
        ab[2, -2] = 0.0
        return solve_banded((1, 1), ab, -R)

    R, rel = residual(u)
    it = 0
    while rel > tol:
        if it >= max_iter:
            raise ConvergenceError("radial Newton did not converge", rel, it)
        it += 1
        du = newton_step(u, R)
        norm0 = np.max(np.abs(R))
        lam = 1.0
        for _ in range(40):
            trial = u + lam * du
            with np.errstate(over="ignore", invalid="ignore"):
                Rt, relt = residual(trial)
            if np.all(np.isfinite(Rt)) and (np.max(np.abs(Rt)) < norm0 or relt <= tol):
                break
            lam *= 0.5
        else:
            raise ConvergenceError("radial line search failed", rel, it)
        step = np.max(np.abs(lam * du))
        u, R, rel = trial, Rt, relt
        if step <= 1e-15 * (1.0 + np.max(np.abs(u))) and rel > tol:
            raise ConvergenceError("radial Newton stagnated", rel, it)
    # the relative test scales with 1/h^2; polish with full Newton steps down
    # to roundoff so the discrete equation holds in absolute terms as well
    for _ in range(4):
        du = newton_step(u, R)
        if np.max(np.abs(du)) <= 1e-14 * (1.0 + np.max(np.abs(u))):
            break
        Rt, relt = residual(u + du)
        if not np.max(np.abs(Rt)) < np.max(np.abs(R)):
            break
        u, R, rel = u + du, Rt, relt
        it += 1

    du_dr = np.gradient(u, h, edge_order=2)
    if regular:
        du_dr[0] = 0.0
    return RadialProfile(r, u, du_dr, residual=float(rel), iterations=it)


# ---------------------------------------------------------------------------
# Planar grids and Newton's method for Delta u = f(z, u)
# ---------------------------------------------------------------------------

class Grid2D:
    """Uniform Cartesian lattice restricted to a closed planar region.

    A node is a boundary node when one of its four lattice neighbours lies
    outside the region; all other nodes are interior and carry the full
    five-point stencil.

    Parameters
    ----------
    kind : {"disc", "annulus", "rectangle"}
    params : tuple
        (center, R) for a disc, (center, r_in, r_out) for an annulus and
        (x0, x1, y0, y1) for a rectangle.
    h : float
        Lattice spacing.
    """

    def __init__(self, kind: str, params: tuple, h: float):
        if h <= 0:
            raise InputError("grid spacing must be positive")
        self.kind, self.params, self.h = kind, tuple(params), float(h)
        if kind == "disc":
            c, R = params
            c = complex(c)
            x0, y0, ext = c.real, c.imag, R
            self.inside = lambda z: np.abs(z - c) <= R * (1 + 1e-12)
        elif kind == "annulus":
            c, r_in, r_out = params
            c = complex(c)
            if not 0 <= r_in < r_out:
                raise InputError("annulus needs 0 <= r_in < r_out")
            x0, y0, ext = c.real, c.imag, r_out
            self.inside = lambda z: (np.abs(z - c) <= r_out * (1 + 1e-12)) & (np.abs(z - c) >= r_in * (1 - 1e-12))
        elif kind == "rectangle":
            xa, xb, ya, yb = params
            x0, y0 = 0.5 * (xa + xb), 0.5 * (ya + yb)
            ext = max(xb - xa, yb - ya) / 2
            eps = 1e-12 * max(1.0, ext)
            self.inside = lambda z: ((z.real >= xa - eps) & (z.real <= xb + eps)
                                     & (z.imag >= ya - eps) & (z.imag <= yb + eps))
        else:
            raise InputError(f"unknown region kind {kind!r}")
        m = int(math.floor(ext / h + 1e-9))
        k = np.arange(-m, m + 1)
        I, J = np.meshgrid(k, k, indexing="ij")
        Z = (x0 + I * h) + 1j * (y0 + J * h)
        keep = self.inside(Z)
        self.ij = np.stack([I[keep], J[keep]], axis=1)
        self.nodes = Z[keep]
        lookup = -np.ones(Z.shape, dtype=np.int64)
        lookup[keep] = np.arange(keep.sum())
        nb = -np.ones((self.nodes.size, 4), dtype=np.int64)
        ii, jj = self.ij[:, 0] + m, self.ij[:, 1] + m
        for col, (di, dj) in enumerate(((1, 0), (-1, 0), (0, 1), (0, -1))):
            a, b = ii + di, jj + dj
            ok = (a >= 0) & (a <= 2 * m) & (b >= 0) & (b <= 2 * m)
            nb[ok, col] = lookup[a[ok], b[ok]]
        self.neighbors = nb  # order: +x, -x, +y, -y
        self.boundary = np.any(nb < 0, axis=1)
        self.interior = ~self.boundary

    @classmethod
    def disc(cls, R: float, h: float, center: complex = 0.0):
        return cls("disc", (center, R), h)

    @classmethod
    def annulus(cls, r_in: float, r_out: float, h: float, center: complex = 0.0):
        return cls("annulus", (center, r_in, r_out), h)

    @classmethod
    def rectangle(cls, x0, x1, y0, y1, h):
        return cls("rectangle", (x0, x1, y0, y1), h)

    @property
    def size(self) -> int:
        return self.nodes.size

    def laplacian(self) -> sp.csr_matrix:
        """Five-point Laplacian; rows of boundary nodes are zero."""
        idx = np.flatnonzero(self.interior)
        nb = self.neighbors[idx]
        rows = np.concatenate([idx, np.repeat(idx, 4)])
        cols = np.concatenate([idx, nb.ravel()])
        vals = np.concatenate([np.full(idx.size, -4.0), np.ones(4 * idx.size)]) / self.h**2
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.size, self.size))

    def _check(self, u):
        u = np.asarray(u)
        if u.shape[0] != self.size:
            raise InputError("field does not match grid size")
        return u

    def dx(self, u):
        """Central x-difference at interior nodes (NaN on the boundary)."""
        u = self._check(u)
        out = np.full(u.shape, np.nan, dtype=np.result_type(u, float))
        i = self.interior
        out[i] = (u[self.neighbors[i, 0]] - u[self.neighbors[i, 1]]) / (2 * self.h)
        return out

    def dy(self, u):
        u = self._check(u)
        out = np.full(u.shape, np.nan, dtype=np.result_type(u, float))
        i = self.interior
        out[i] = (u[self.neighbors[i, 2]] - u[self.neighbors[i, 3]]) / (2 * self.h)
        return out

    def dz(self, u):
        """d/dz = (d/dx - i d/dy)/2 by central differences."""
        return 0.5 * (self.dx(u) - 1j * self.dy(u))

    def dzbar(self, u):
        return 0.5 * (self.dx(u) + 1j * self.dy(u))

    def lap(self, u):
        """Five-point Laplacian at interior nodes (NaN on the boundary)."""
        u = self._check(u)
        out = np.full(u.shape, np.nan, dtype=np.result_type(u, float))
        i = self.interior
        nb = self.neighbors[i]
        s = u[nb[:, 0]] + u[nb[:, 1]] + u[nb[:, 2]] + u[nb[:, 3]]
        out[i] = (s - 4 * u[i]) / self.h**2
        return out

    def deep_interior(self, layers: int = 1) -> np.ndarray:
        """Nodes at lattice distance > ``layers`` from every boundary node."""
        mask = self.interior.copy()
        for _ in range(layers):
            nb = self.neighbors
            ok = mask.copy()
            for col in range(4):
                good = nb[:, col] >= 0
                ok[good] &= mask[nb[good, col]]
                ok[~good] = False
            mask = ok
        return mask


@dataclass(frozen=True, eq=False)
class EllipticSolution:
    grid: Grid2D
    values: np.ndarray
    residual: float
    iterations: int


def solve_elliptic_newton(grid: Grid2D, residual: Nonlinearity, boundary, *,
                          initial=None, tol: float = 1e-9, max_iter: int = 50) -> EllipticSolution:
    """Solve Delta u = f(z, u) at interior nodes with u = g on boundary nodes.

    Newton's method with a sparse direct solve per step and backtracking
    (step halving) until the residual decreases.

    Parameters
    ----------
    grid : Grid2D
    residual : Nonlinearity
        Pointwise right-hand side f(z, u) and df/du.
    boundary : callable or ndarray
        g(z) evaluated at boundary nodes, or an array over all nodes (only
        boundary entries are used).
    """
    z = grid.nodes
    bmask = grid.boundary
    g = np.asarray(boundary(z[bmask]) if callable(boundary) else np.asarray(boundary)[bmask], dtype=float)
    if not np.all(np.isfinite(g)):
        raise InputError("boundary data must be finite")
    u = np.zeros(grid.size) if initial is None else np.array(initial, dtype=float)
    u[bmask] = g
    L = grid.laplacian()
    inner = grid.interior

    def res(u):
        R = L @ u - np.where(inner, residual.f(z, u), 0.0)
        R[bmask] = u[bmask] - g
        return R

    R = res(u)
    rn = np.max(np.abs(R))
    it = 0
    while rn > tol:
        if it >= max_iter:
            raise ConvergenceError("elliptic Newton did not converge", rn, it)
        it += 1
        d = np.where(inner, residual.dfdu(z, u), 0.0)
        J = (L - sp.diags(d) + sp.diags(bmask.astype(float))).tocsc()
        du = spla.spsolve(J, -R)
        lam = 1.0
        for _ in range(40):
            trial = u + lam * du
            with np.errstate(over="ignore", invalid="ignore"):
                Rt = res(trial)
            rt = np.max(np.abs(Rt))
            if np.isfinite(rt) and rt < rn:
                break
            lam *= 0.5
        else:
            raise ConvergenceError("elliptic line search failed", rn, it)
        u, R, rn = trial, Rt, rt
    return EllipticSolution(grid, u, float(rn), it)


# ---------------------------------------------------------------------------
# Decay fits and contour integrals
# ---------------------------------------------------------------------------

class DecayFit(NamedTuple):
    """Least-squares fit of -log v = rate * d + intercept."""
    rate: float
    intercept: float
    residual: float
    n: int

    def __float__(self):
        return self.rate


def fit_decay_rate(samples, values=None) -> DecayFit:
    """Slope of -log v against d by least squares.

    Parameters
    ----------
    samples : sequence of (d, v) pairs, or array of d when ``values`` given
    values : array_like, optional

    Returns
    -------
    DecayFit
        ``rate`` is the fitted exponent; ``residual`` the rms misfit of
        -log v.
    """
    if values is None:
        arr = np.asarray(samples, dtype=float).reshape(-1, 2)
        d, v = arr[:, 0], arr[:, 1]
    else:
        d, v = np.asarray(samples, dtype=float), np.asarray(values, dtype=float)
    if d.size < 3 or d.size != v.size:
        raise InputError("need at least 3 (distance, value) samples")
    if np.any(~(v > 0)) or not np.all(np.isfinite(v)):
        raise InputError("decay samples must be positive and finite")
    y = -np.log(v)
    A = np.stack([d, np.ones_like(d)], axis=1)
    (rate, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    rms = float(np.sqrt(np.mean((A @ np.array([rate, icpt]) - y) ** 2)))
    return DecayFit(float(rate), float(icpt), rms, int(d.size))


class ContourIntegral(NamedTuple):
    value: complex
    error: float


def circle(center: complex, radius: float, n: int = 256) -> np.ndarray:
    """Counter-clockwise samples of a circle, uniform in angle."""
    return center + radius * np.exp(2j * np.pi * np.arange(n) / n)


def contour_integrate(path, integrand: Callable) -> ContourIntegral:
    """Integral of f(z) dz over a smooth closed curve.

    ``path`` holds samples uniform in a periodic parameter (no repeated end
    point).  The tangent is obtained spectrally and the periodic trapezoidal
    rule is applied, which converges geometrically for analytic data.  The
    error estimate compares against the rule on every other sample.
    """
    z = np.asarray(path, dtype=complex)
    n = z.size
    if n < 8 or n % 2:
        raise InputError("contour needs an even number (>= 8) of samples")
    f = np.asarray(integrand(z), dtype=complex)
    if not np.all(np.isfinite(f)):
        raise InputError("integrand not finite on the contour")
    k = np.fft.fftfreq(n, 1.0 / n)
    k[n // 2] = 0.0
    dz = np.fft.ifft(1j * k * np.fft.fft(z))
    full = np.sum(f * dz) * 2 * np.pi / n
    kh = np.fft.fftfreq(n // 2, 2.0 / n)
    kh[n // 4] = 0.0
    dzh = np.fft.ifft(1j * kh * np.fft.fft(z[::2]))
    half = np.sum(f[::2] * dzh) * 4 * np.pi / n
    return ContourIntegral(complex(full), float(abs(full - half)))


def gauss_legendre(n: int, a: float, b: float):
    """Gauss-Legendre nodes and weights on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


# ---------------------------------------------------------------------------
# Truncated Laurent series
# ---------------------------------------------------------------------------

class PowerSeries:
    """Truncated Laurent series sum_{k=start}^{order-1} c_k (x - center)^k + O(x^order).

    The truncation order is tracked through every operation and never
    extended beyond what the inputs determine.
    """

    __slots__ = ("center", "start", "coeffs", "order")

    def __init__(self, coeffs, start: int = 0, center: complex = 0.0, order: int | None = None):
        c = np.array(coeffs, dtype=complex).ravel()
        self.center = complex(center)
        self.start = int(start)
        self.order = self.start + c.size if order is None else int(order)
        if self.order < self.start:
            raise InputError("order below start index")
        n = self.order - self.start
        if c.size < n:
            c = np.concatenate([c, np.zeros(n - c.size, complex)])
        self.coeffs = c[:n]

    # construction helpers
    @classmethod
    def monomial(cls, k: int, order: int, coeff=1.0, center=0.0):
        return cls([coeff], start=k, center=center, order=order)

    @classmethod
    def from_polynomial(cls, coeffs_low_first, order: int, center=0.0):
        """Taylor expansion of a polynomial about ``center``."""
        p = np.polynomial.Polynomial(np.asarray(coeffs_low_first, dtype=complex))
        out, q, fact = [], p, 1.0
        for k in range(order):
            out.append(q(center) / fact)
            q = q.deriv()
            fact *= k + 1
        return cls(out, 0, center, order)

    def copy(self):
        return PowerSeries(self.coeffs.copy(), self.start, self.center, self.order)

    def coefficient(self, k: int) -> complex:
        if k < self.start:
            return 0j
        if k >= self.order:
            raise InputError(f"coefficient {k} beyond truncation order {self.order}")
        return complex(self.coeffs[k - self.start])

    @property
    def valuation(self) -> int:
        nz = np.flatnonzero(self.coeffs != 0)
        return self.order if nz.size == 0 else self.start + int(nz[0])

    def residue(self) -> complex:
        return self.coefficient(-1)

    def truncate(self, order: int):
        order = min(order, self.order)
        return PowerSeries(self.coeffs[: max(order - self.start, 0)], self.start, self.center, max(order, self.start))

    def _same_center(self, other):
        if abs(self.center - other.center) > 0:
            raise InputError("series expanded about different centers")

    def __add__(self, other):
        if not isinstance(other, PowerSeries):
            other = PowerSeries([other], 0, self.center, max(self.order, 1))
        self._same_center(other)
        lo, hi = min(self.start, other.start), min(self.order, other.order)
        c = np.zeros(max(hi - lo, 0), complex)
        for s in (self, other):
            k = min(s.order, hi) - s.start
            if k > 0:
                c[s.start - lo: s.start - lo + k] += s.coeffs[:k]
        return PowerSeries(c, lo, self.center, max(hi, lo))

    __radd__ = __add__

    def __neg__(self):
        return PowerSeries(-self.coeffs, self.start, self.center, self.order)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, PowerSeries):
            return PowerSeries(self.coeffs * complex(other), self.start, self.center, self.order)
        self._same_center(other)
        start = self.start + other.start
        order = min(self.order + other.start, other.order + self.start)
        n = max(order - start, 0)
        c = np.convolve(self.coeffs, other.coeffs)[:n] if n else np.zeros(0, complex)
        return PowerSeries(c, start, self.center, order)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, PowerSeries):
            return self * other.pow(-1)
        return self * (1.0 / complex(other))

    def shift(self, k: int):
        """Multiply by (x - center)^k."""
        return PowerSeries(self.coeffs, self.start + k, self.center, self.order + k)

    def derivative(self):
        ks = np.arange(self.start, self.order)
        c = self.coeffs * ks
        if self.start == 0:
            return PowerSeries(c[1:], 0, self.center, max(self.order - 1, 0))
        return PowerSeries(c, self.start - 1, self.center, self.order - 1)

    def integral(self):
        """Antiderivative with zero constant term."""
        if self.start <= -1 < self.order and self.coefficient(-1) != 0:
            raise InputError("cannot integrate a series with a residue")
        ks = np.arange(self.start, self.order)
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(ks == -1, 0, self.coeffs / (ks + 1))
        return PowerSeries(c, self.start + 1, self.center, self.order + 1)

    def pow(self, a, leading=None):
        """self**a for a series with leading term c x^v and integer v*a.

        ``leading`` optionally fixes the branch of c**a.
        """
        v = self.valuation
        if v >= self.order:
            raise InputError("power of a series with no known nonzero term")
        va = v * a
        if abs(va - round(va)) > 1e-12:
            raise InputError("fractional power of a series with nonzero valuation")
        c0 = self.coefficient(v)
        n = self.order - v
        f = self.coeffs[v - self.start:] / c0
        g = np.zeros(n, complex)
        g[0] = 1.0
        for m in range(1, n):
            k = np.arange(1, m + 1)
            g[m] = np.sum(((a + 1) * k - m) * f[k] * g[m - k]) / m
        lead = c0**a if leading is None else leading
        return PowerSeries(g * lead, int(round(va)), self.center, int(round(va)) + n)

    def __call__(self, x):
        x = np.asarray(x, dtype=complex) - self.center
        acc = np.zeros_like(x)
        for c in self.coeffs[::-1]:
            acc = acc * x + c
        return acc * x**self.start if self.start else acc

    def compose(self, inner: "PowerSeries"):
        """self(inner(y)); requires start >= 0 and inner without constant term."""
        if self.start < 0:
            raise InputError("compose needs a Taylor series on the outside")
        m = inner.valuation
        if m < 1:
            raise InputError("inner series must vanish at its center")
        order = min(self.order * m if self.order else inner.order, inner.order)
        out = PowerSeries([0], 0, inner.center, order)
        for c in self.coeffs[::-1]:
            out = (out * inner).truncate(order) + PowerSeries([c], 0, inner.center, order)
        return out.truncate(order)

    def reversion(self):
        """Compositional inverse of x -> self(x) about 0 (start >= 0, c0 = 0, c1 != 0).

        Solves sum_k b_k [f^k]_m = delta_{m1}, a triangular system in the
        coefficients of the powers of f.
        """
        if self.start > 1 or self.coefficient(0) != 0 or self.coefficient(1) == 0:
            raise InputError("reversion needs c0 = 0 and c1 != 0")
        n = self.order
        f = np.array([self.coefficient(k) for k in range(n)])
        powers = np.zeros((n, n), complex)        # powers[k, m] = [f^k]_m
        powers[0, 0] = 1.0
        for k in range(1, n):
            powers[k] = np.convolve(powers[k - 1], f)[:n]
        b = np.zeros(n, complex)
        for m in range(1, n):
            target = 1.0 if m == 1 else 0.0
            b[m] = (target - powers[1:m, m] @ b[1:m]) / powers[m, m]
        return PowerSeries(b, 0, 0.0, n)

    def __repr__(self):
        return f"PowerSeries(start={self.start}, order={self.order}, center={self.center}, coeffs={self.coeffs!r})"
