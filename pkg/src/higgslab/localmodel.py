"""Model harmonic metrics at a simple zero and Hitchin-equation solves on discs.

Conventions
-----------
A metric h on a rank-2 bundle with frame (v_1, v_2) is the Hermitian matrix
H_ij = h(v_i, v_j) with det H = 1.  Writing K = conj(H) = H^T, the adjoint of
an endomorphism with matrix G is G^dagger = K^{-1} G^* K, the Chern
connection acts by d_z + [K^{-1} d_z K, .] and the Hitchin equation for
theta = F dz reads

    d_zbar (K^{-1} d_z K) = t^2 [F, F^dagger].

Throughout, d_z d_zbar = Laplacian / 4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import ConvergenceError, DomainError, InputError
from .numerics import (DecayFit, Grid2D, Nonlinearity, RadialProfile, bessel_I0,
                       fit_decay_rate, solve_elliptic_newton, solve_radial_bvp)
from .quadiff import QuadraticDifferential

__all__ = [
    "ModelHiggs", "ModelMetricProfile", "HermitianField", "SymmetricField",
    "painleve_profile", "shoot_profile_origin", "model_metric_at", "commutator_norm_sq",
    "commutator_norm_sq_matrix", "commutator_norm_sq_reference", "pi1_derivative_norm_sq", "pi1_derivative_norm_sq_matrix",
    "hitchin_residual", "solve_disc_symmetric", "solve_disc_general", "subsolution_check",
    "energy_identity_residual", "barrier_check", "decay_exponent", "SubsolutionReport",
]

SIGMA3 = np.diag([1.0, -1.0]).astype(complex)
C0 = np.array([[0, 1], [1, 0]], dtype=complex)


# ---------------------------------------------------------------------------
# Model Higgs bundle and its radial harmonic metric
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelHiggs:
    """theta_0 = F dz with F = [[0, 3z/2], [3/2, 0]] in the frame (u1, u2).

    The symmetric pairing C0 = [[0, 1], [1, 0]] pairs u1 with u2.
    """
    t: float = 1.0

    def __post_init__(self):
        if not self.t >= 1:
            raise InputError("scale t must be >= 1")

    @staticmethod
    def higgs(z):
        z = np.asarray(z, dtype=complex)
        F = np.zeros(z.shape + (2, 2), complex)
        F[..., 0, 1] = 1.5 * z
        F[..., 1, 0] = 1.5
        return F

    pairing = C0

    @staticmethod
    def quadratic_differential() -> QuadraticDifferential:
        return QuadraticDifferential([0.0, 2.25])


@dataclass(frozen=True, eq=False)
class ModelMetricProfile:
    """Radial harmonic metric diag(e^psi, e^-psi) of the model at scale t.

    ``psi`` is solved on [0, r_max] with psi'(0) = 0 and
    psi(r_max) = -log(r_max)/2.  The deviation v = psi + log(r)/2 from the
    limiting metric is solved again on [r_inner, r_max] from its own
    equation v'' + v'/r = 18 t^2 r sinh(2v), which keeps full relative
    accuracy where v is exponentially small.  v is negative, increasing and
    tends to -infinity like log(r)/2 at the origin.
    """
    t: float
    r_max: float
    psi_profile: RadialProfile
    v_profile: RadialProfile

    @property
    def r_inner(self) -> float:
        return float(self.v_profile.radii[0])

    @property
    def residual(self) -> float:
        return max(self.psi_profile.residual, self.v_profile.residual)

    def psi(self, r, nu: int = 0):
        r = np.asarray(r, dtype=float)
        out = np.asarray(self.psi_profile(r, nu), dtype=float)
        far = r >= self.r_inner
        if np.any(far):
            lim = -0.5 * np.log(r[far]) if nu == 0 else -0.5 * (-1) ** (nu - 1) * math.factorial(nu - 1) / r[far] ** nu
            out = np.where(far, 0.0, out)
            out[far] = lim + self.v_profile(r[far], nu)
        return out

    def v(self, r, nu: int = 0):
        """v = psi + log(r)/2 and its derivatives (r > 0)."""
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise DomainError("v is singular at r = 0")
        out = np.empty(r.shape)
        far = r >= self.r_inner
        out[far] = self.v_profile(r[far], nu)
        near = ~far
        if np.any(near):
            rn = r[near]
            lim = 0.5 * np.log(rn) if nu == 0 else 0.5 * (-1) ** (nu - 1) * math.factorial(nu - 1) / rn ** nu
            out[near] = self.psi_profile(rn, nu) + lim
        return out

    def flat_radius(self) -> float:
        return self.r_max ** 1.5


def _psi_rhs(t):
    k = 9.0 * t * t

    def f(r, u):
        return k * (r * r * np.exp(2 * u) - np.exp(-2 * u))

    def df(r, u):
        return 2 * k * (r * r * np.exp(2 * u) + np.exp(-2 * u))
    return Nonlinearity(f, df, "model-psi")


def _v_rhs(t):
    k = 18.0 * t * t

    def f(r, u):
        return k * r * np.sinh(2 * u)

    def df(r, u):
        return 2 * k * r * np.cosh(2 * u)
    return Nonlinearity(f, df, "model-v")


def painleve_profile(t: float, r_max: float | None = None, *, n: int = 4001,
                     tol: float = 1e-10) -> ModelMetricProfile:
    """Radial harmonic metric of the model Higgs bundle at scale t.

    Parameters
    ----------
    t : float
        Scale, t >= 1.
    r_max : float, optional
        Outer radius; must satisfy 4 t r_max^{3/2} >= 30.  Defaults to the
        radius where 4 t r^{3/2} = 40.
    n : int
        Mesh nodes per stage.
    """
    if not t >= 1:
        raise InputError("t must be >= 1")
    if r_max is None:
        r_max = (10.0 / t) ** (2.0 / 3.0)
    if 4 * t * r_max ** 1.5 < 30 - 1e-9:
        raise InputError("r_max too small: need 4 t r_max^{3/2} >= 30")
    scale = t ** (-2.0 / 3.0)
    psi = solve_radial_bvp(_psi_rhs(t), r_max, -0.5 * math.log(r_max), n=n, tol=tol,
                           initial=lambda r: -0.25 * np.log(r * r + scale * scale))
    # hand over to the v-equation once v is below ~5e-2
    r1 = min((0.75 / t) ** (2.0 / 3.0), 0.25 * r_max)
    v1 = float(psi(r1)) + 0.5 * math.log(r1)
    vprof = solve_radial_bvp(_v_rhs(t), r_max, 0.0, n=n, r_min=r1, inner_value=v1, tol=tol,
                             initial=lambda r: v1 * np.exp(-4 * t * (r ** 1.5 - r1 ** 1.5)))
    return ModelMetricProfile(float(t), float(r_max), psi, vprof)


def shoot_profile_origin(t: float, r_match: float | None = None, rtol: float = 1e-12) -> float:
    """psi(0) of the model profile by shooting from the origin.

    Independent of the relaxation solver: the IVP psi(0) = psi0, psi'(0) = 0
    is integrated outwards and psi0 is bracketed so that
    psi(r_match) = -log(r_match)/2.  The far-field error of that matching
    condition is O(exp(-8 t r_match^{3/2})).
    """
    if r_match is None:
        r_match = (3.0 / t) ** (2.0 / 3.0)
    k = 9.0 * t * t
    r0 = 1e-4 * t ** (-2.0 / 3.0)

    def rhs(r, y):
        psi, dpsi = y
        return [dpsi, k * (r * r * math.exp(2 * psi) - math.exp(-2 * psi)) - dpsi / r]

    def blow(r, y):
        # the true v = psi + log(r)/2 stays in (-20, 0]; leaving (-20, 3) means divergence
        v = y[0] + 0.5 * math.log(r)
        return min(3.0 - v, v + 20.0)
    blow.terminal = True

    def miss(psi0):
        c2 = -0.5 * k * math.exp(-2 * psi0)      # psi''(0)
        y0 = [psi0 + 0.5 * c2 * r0 * r0, c2 * r0]
        sol = solve_ivp(rhs, (r0, r_match), y0, method="DOP853", rtol=rtol, atol=1e-14,
                        events=blow)
        return sol.y[0, -1] + 0.5 * math.log(sol.t[-1])

    centre = math.log(t) / 3.0
    lo, hi = centre - 3.0, centre + 3.0
    if np.sign(miss(lo)) == np.sign(miss(hi)):
        raise ConvergenceError("shooting bracket failed", float("nan"), 0)
    return brentq(miss, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def model_metric_at(profile: ModelMetricProfile, z):
    """h_{0,t} in the frame (u1, u2): diag(e^psi, e^-psi) with psi = psi(|z|)."""
    z = np.asarray(z, dtype=complex)
    r = np.abs(z)
    if np.any(r > profile.r_max * (1 + 1e-12)):
        raise DomainError("point outside the profile mesh")
    psi = profile.psi(r)
    H = np.zeros(z.shape + (2, 2), complex)
    H[..., 0, 0] = np.exp(psi)
    H[..., 1, 1] = np.exp(-psi)
    return H


# ---------------------------------------------------------------------------
# Pointwise identities for det-1 metrics with f = diag(1, -1)
# ---------------------------------------------------------------------------

def _check_det1(H, tol=1e-10):
    H = np.asarray(H, dtype=complex)
    if H.shape[-2:] != (2, 2):
        raise InputError("expected 2x2 matrices")
    if np.max(np.abs(H - np.conj(np.swapaxes(H, -1, -2)))) > tol * max(1.0, np.max(np.abs(H))):
        raise InputError("matrix is not Hermitian")
    det = np.linalg.det(H)
    if np.max(np.abs(det - 1)) > tol * max(1.0, np.max(np.abs(H)) ** 2):
        raise InputError("det H != 1")
    return H


def adjoint(G, H):
    """Matrix of the h-adjoint: conj(H)^{-1} G^* conj(H)."""
    K = np.conj(H)
    return np.linalg.solve(K, np.conj(np.swapaxes(G, -1, -2)) @ K)


def endo_norm_sq(G, H):
    """|g|_h^2 = Tr(G G^dagger_H)."""
    return np.real(np.trace(G @ adjoint(G, H), axis1=-2, axis2=-1))


def commutator_norm_sq(H):
    """|[f^dagger_h, pi_1]|_h^2 = 8 (1 + |b|^2) |b|^2 with b = H_12."""
    H = _check_det1(H)
    b2 = np.abs(H[..., 0, 1]) ** 2
    return 8 * (1 + b2) * b2


def commutator_norm_sq_matrix(H):
    """Same quantity by explicit matrix algebra (independent check)."""
    H = _check_det1(H)
    F = np.broadcast_to(SIGMA3, H.shape)
    P1 = np.broadcast_to(np.diag([1.0, 0.0]).astype(complex), H.shape)
    Fd = adjoint(F, H)
    C = Fd @ P1 - P1 @ Fd
    return endo_norm_sq(C, H)


def commutator_norm_sq_reference(H, dps: int = 40) -> float:
    """Matrix computation of |[f^dagger_h, pi_1]|_h^2 in extended precision.

    Rounding-free oracle for a single (2, 2) matrix; the double-precision
    matrix form loses about log10(cond) digits for large |b|.  The entry
    H_22 is recomputed as (1 + |b|^2) / H_11 so det H = 1 holds exactly.
    """
    H = _check_det1(np.asarray(H, complex))
    with mpmath.workdps(dps):
        a, b = mpmath.mpf(float(H[0, 0].real)), mpmath.mpc(complex(H[0, 1]))
        c = (1 + abs(b) ** 2) / a
        K = mpmath.matrix([[a, b], [mpmath.conj(b), c]]).conjugate()
        Ki = K ** -1
        F = mpmath.diag([1, -1])
        P1 = mpmath.diag([1, 0])
        Fd = Ki * F.transpose_conj() * K
        C = Fd * P1 - P1 * Fd
        G = C * (Ki * C.transpose_conj() * K)
        return float(mpmath.re(G[0, 0] + G[1, 1]))


def pi1_derivative_norm_sq(a, b, c, da, dab, db, dbb, dc, dcb):
    """|d_{E,h,z} pi_1|_h^2 from entries of H and their d_z / d_zbar derivatives.

    ``dab`` is d_zbar a, ``db`` is d_z b and so on.  a, c are real, b complex.
    """
    db_conj = np.conj(dbb)          # d_z conj(b)
    s = 1 + np.abs(b) ** 2
    out = s * s * (np.abs(dbb) ** 2 + np.abs(db) ** 2)
    out = out + np.abs(b) ** 2 * (a * a * np.abs(dc) ** 2 + c * c * np.abs(da) ** 2)
    beta = -c * db_conj + np.conj(b) * dc
    gam_bar_part = -np.conj(b) * dab + a * np.conj(db)    # conj(gamma) via d_zbar of real a
    cross = (b * a * a * c * db_conj * dcb + np.conj(b) * a * c * c * db * dab
             + b * b * beta * gam_bar_part)
    return np.real(out - 2 * np.real(cross))


def pi1_derivative_norm_sq_matrix(a, b, c, da, db, dbc, dc):
    """Matrix form a^2|beta|^2 + c^2|gamma|^2 - 2 Re(b^2 beta conj(gamma)).

    beta = -c d_z conj(b) + conj(b) d_z c and gamma = -b d_z a + a d_z b;
    ``dbc`` is d_z conj(b).
    """
    beta = -c * dbc + np.conj(b) * dc
    gamma = -b * da + a * db
    return np.real(a * a * np.abs(beta) ** 2 + c * c * np.abs(gamma) ** 2
                   - 2 * np.real(b * b * beta * np.conj(gamma)))


# ---------------------------------------------------------------------------
# Fields on grids
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class HermitianField:
    """H = [[a, b], [conj b, c]] per node with ac - |b|^2 = 1."""
    grid: Grid2D
    a: np.ndarray
    b: np.ndarray
    residual: float = 0.0
    iterations: int = 0

    @property
    def c(self):
        return (1 + np.abs(self.b) ** 2) / self.a

    def matrices(self):
        H = np.empty((self.grid.size, 2, 2), complex)
        H[:, 0, 0] = self.a
        H[:, 0, 1] = self.b
        H[:, 1, 0] = np.conj(self.b)
        H[:, 1, 1] = self.c
        return H

    def det_defect(self) -> float:
        return float(np.max(np.abs(self.a * self.c - np.abs(self.b) ** 2 - 1)))


@dataclass(eq=False)
class SymmetricField:
    """H = [[a, i bt], [-i bt, a]] with a = (1 + bt^2)^{1/2}; stored via w = asinh(bt)."""
    grid: Grid2D
    w: np.ndarray
    residual: float = 0.0
    iterations: int = 0

    @property
    def bt(self):
        return np.sinh(self.w)

    @property
    def a(self):
        return np.cosh(self.w)

    def as_hermitian(self) -> HermitianField:
        return HermitianField(self.grid, self.a, 1j * self.bt, self.residual, self.iterations)

    def btilde_residual(self):
        """Discrete d d-bar bt - bt |d bt|^2/(1+bt^2) - 4 (1+bt^2) bt at interior nodes."""
        g = self.grid
        bt = self.bt
        dbt = g.dz(bt)
        lhs = g.lap(bt) / 4
        rhs = bt * np.abs(dbt) ** 2 / (1 + bt * bt) + 4 * (1 + bt * bt) * bt
        return lhs - rhs


def _boundary_values(fun, z):
    if callable(fun):
        return np.asarray(fun(z))
    return np.broadcast_to(np.asarray(fun), z.shape + np.shape(fun)).copy()


def solve_disc_symmetric(R: float, boundary_b, h: float, *, tol: float = 1e-9,
                         max_iter: int = 50) -> SymmetricField:
    """Symmetric reduction of the disc problem.

    With bt = sinh w the equation for bt becomes Delta w = 8 sinh 2w, which
    is solved by Newton's method; a = cosh w.

    Parameters
    ----------
    boundary_b : float or callable
        bt on the boundary, as a constant or a function of the node position.
    h : float
        Grid spacing.
    """
    grid = Grid2D.disc(R, h)
    zb = grid.nodes
    g = np.arcsinh(np.asarray(_boundary_values(boundary_b, zb), dtype=float))
    nl = Nonlinearity(lambda z, w: 8 * np.sinh(2 * w), lambda z, w: 16 * np.cosh(2 * w), "8 sinh 2w")
    r = np.abs(zb)
    init = g * bessel_I0(4 * r) / bessel_I0(4 * R)
    sol = solve_elliptic_newton(grid, nl, g, initial=init, tol=tol, max_iter=max_iter)
    return SymmetricField(grid, sol.values, sol.residual, sol.iterations)


def hitchin_residual(grid: Grid2D, H, F, t: float = 1.0):
    """N = K [d_zbar(K^{-1} d_z K) - t^2 [F, F^dagger]] at interior nodes, K = conj(H).

    Written as d d-bar K - (d-bar K) K^{-1} (d K) - t^2 (K F K^{-1} F^* K - F^* K F)
    which is Hermitian; NaN at boundary nodes.
    """
    K = np.conj(np.asarray(H, dtype=complex))
    F = np.broadcast_to(np.asarray(F, dtype=complex), K.shape)
    Fs = np.conj(np.swapaxes(F, -1, -2))
    Kinv = np.linalg.inv(K)
    dK = grid.dz(K)
    dbK = grid.dzbar(K)
    LK = grid.lap(K) / 4
    comm = K @ F @ Kinv @ Fs @ K - Fs @ K @ F
    # K [F, K^-1 F* K] = K F K^-1 F* K - F* K F  (K F^dagger = F* K)
    return LK - dbK @ Kinv @ dK - t * t * comm


def solve_disc_general(R: float, boundary_H, h: float, *, tol: float = 1e-8,
                       max_iter: int = 30, verbose: bool = False) -> HermitianField:
    """Full Hitchin equation on the disc |z| <= R for theta = diag(1, -1) dz.

    Unknowns per node are (log a, Re b, Im b) with c = (1 + |b|^2)/a, so
    det H = 1 holds exactly.  The three real equations are N_11, Re N_12 and
    Im N_12 of :func:`hitchin_residual`.  The Jacobian is assembled from
    finite differences with a 5-coloring of the compact stencil.

    Parameters
    ----------
    boundary_H : callable or (2, 2) array
        Boundary metric; a callable receives boundary node positions and
        returns (n, 2, 2) Hermitian det-1 matrices.
    """
    grid = Grid2D.disc(R, h)
    z = grid.nodes
    bmask, inner = grid.boundary, grid.interior
    Hb = _boundary_values(boundary_H, z[bmask])
    if Hb.ndim == 2:
        Hb = np.broadcast_to(Hb, (bmask.sum(), 2, 2))
    _check_det1(Hb, tol=1e-9)
    F = SIGMA3

    # initial guess: harmonic log a, linearised decay for b
    lap = grid.laplacian()
    la_b = np.log(np.real(Hb[:, 0, 0]))
    b_b = Hb[:, 0, 1]
    full = np.zeros(grid.size)
    full[bmask] = la_b
    la = solve_elliptic_newton(grid, Nonlinearity.linear(0.0), full).values
    vals = []
    for part in (b_b.real, b_b.imag):
        full = np.zeros(grid.size)
        full[bmask] = part
        vals.append(solve_elliptic_newton(grid, Nonlinearity.linear(16.0), full).values)
    U = np.stack([la, vals[0], vals[1]], axis=1)     # (N, 3)

    idx = np.flatnonzero(inner)
    pos = -np.ones(grid.size, dtype=np.int64)
    pos[idx] = np.arange(idx.size)
    nint = idx.size
    color = np.mod(grid.ij[:, 0] + 2 * grid.ij[:, 1], 5)

    def fields(U):
        a = np.exp(U[:, 0])
        b = U[:, 1] + 1j * U[:, 2]
        H = np.empty((grid.size, 2, 2), complex)
        H[:, 0, 0] = a
        H[:, 0, 1] = b
        H[:, 1, 0] = np.conj(b)
        H[:, 1, 1] = (1 + np.abs(b) ** 2) / a
        return a, b, H

    def G(U):
        _, _, H = fields(U)
        N = hitchin_residual_interior(grid, H, F, idx)
        return np.stack([N[:, 0, 0].real, N[:, 0, 1].real, N[:, 0, 1].imag], axis=1)

    stencil = np.concatenate([idx[:, None], grid.neighbors[idx]], axis=1)   # (nint, 5)

    def jacobian(U, G0):
        rows, cols, data = [], [], []
        for f in range(3):
            for col in range(5):
                sel = inner & (color == col)
                eps = 1e-7 * (1 + np.abs(U[sel, f]))
                Up = U.copy()
                Up[sel, f] += eps
                step = np.zeros(grid.size)
                step[sel] = eps
                D = (G(Up) - G0)               # (nint, 3)
                for s in range(5):
                    j = stencil[:, s]
                    ok = (color[j] == col) & inner[j]
                    ii = np.flatnonzero(ok)
                    jj = pos[j[ok]]
                    for k in range(3):
                        rows.append(3 * ii + k)
                        cols.append(3 * jj + f)
                        data.append(D[ii, k] / step[j[ok]])
        return sp.csc_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(3 * nint, 3 * nint))

    G0 = G(U)
    rn = float(np.max(np.abs(G0)))
    it = 0
    while rn > tol:
        if it >= max_iter:
            raise ConvergenceError("disc Newton did not converge", rn, it)
        it += 1
        J = jacobian(U, G0)
        dU = spla.spsolve(J, -G0.ravel()).reshape(nint, 3)
        lam = 1.0
        for _ in range(30):
            Ut = U.copy()
            Ut[idx] += lam * dU
            with np.errstate(over="ignore", invalid="ignore"):
                Gt = G(Ut)
            rt = float(np.max(np.abs(Gt)))
            if np.isfinite(rt) and rt < rn:
                break
            lam *= 0.5
        else:
            raise ConvergenceError("disc line search failed", rn, it)
        U, G0, rn = Ut, Gt, rt
        if verbose:
            print(f"newton {it}: residual {rn:.3e} (step {lam})")
    a, b, _ = fields(U)
    return HermitianField(grid, a, b, rn, it)


def hitchin_residual_interior(grid: Grid2D, H, F, idx, t: float = 1.0):
    """:func:`hitchin_residual` restricted to the interior node indices ``idx``."""
    K = np.conj(H)
    nb = grid.neighbors[idx]
    h = grid.h
    Kc = K[idx]
    Kx = (K[nb[:, 0]] - K[nb[:, 1]]) / (2 * h)
    Ky = (K[nb[:, 2]] - K[nb[:, 3]]) / (2 * h)
    dK = 0.5 * (Kx - 1j * Ky)
    dbK = 0.5 * (Kx + 1j * Ky)
    LK = (K[nb[:, 0]] + K[nb[:, 1]] + K[nb[:, 2]] + K[nb[:, 3]] - 4 * Kc) / (4 * h * h)
    # explicit inverse of a det-1 2x2 matrix
    Kinv = np.empty_like(Kc)
    Kinv[:, 0, 0] = Kc[:, 1, 1]
    Kinv[:, 1, 1] = Kc[:, 0, 0]
    Kinv[:, 0, 1] = -Kc[:, 0, 1]
    Kinv[:, 1, 0] = -Kc[:, 1, 0]
    F = np.asarray(F, dtype=complex)
    Fs = np.conj(np.swapaxes(F, -1, -2))
    comm = Kc @ F @ Kinv @ Fs @ Kc - Fs @ Kc @ F
    return LK - dbK @ Kinv @ dK - t * t * comm


# ---------------------------------------------------------------------------
# Checks on solved fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SubsolutionReport:
    """Max violation of a differential inequality over checked nodes."""
    max_violation: float
    nodes_checked: int
    slack: float

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.slack


def subsolution_check(field, slack_factor: float = 10.0) -> SubsolutionReport:
    """Check d d-bar |bt| >= 4 |bt| (symmetric) or d d-bar |b|^2 >= 8 |b|^2 (general).

    The violation is measured at interior nodes with b != 0; the allowed
    slack is ``slack_factor * h^2`` times max |b| (symmetric) or max |b|^2.
    """
    g = field.grid
    inner = g.interior
    if isinstance(field, SymmetricField):
        q = np.abs(field.bt)
        lhs = g.lap(q) / 4
        rhs = 4 * q
        amp = np.max(q)
    else:
        q = np.abs(field.b) ** 2
        lhs = g.lap(q) / 4
        rhs = 8 * q
        amp = np.max(q)
    mask = inner & (q > 0)
    viol = np.max(rhs[mask] - lhs[mask], initial=0.0)
    return SubsolutionReport(float(max(viol, 0.0)), int(mask.sum()), float(slack_factor * g.h**2 * amp))


def field_derivatives(field: HermitianField):
    g = field.grid
    a, b, c = field.a, field.b, field.c
    return dict(a=a, b=b, c=c, da=g.dz(a), dab=g.dzbar(a), db=g.dz(b), dbb=g.dzbar(b),
                dc=g.dz(c), dcb=g.dzbar(c))


def energy_identity_residual(field, layers: int = 2, within: float | None = None):
    """-d d-bar |b|^2 + |d pi_1|^2 + |[f^dagger, pi_1]|^2 at deep-interior nodes.

    Returns
    -------
    residual : ndarray
        Identity defect per checked node.
    oracle_gap : float
        Max difference between the closed formula and the matrix form of
        |d pi_1|^2 on the same nodes.
    mask : ndarray of bool
        Nodes that were checked.
    """
    if isinstance(field, SymmetricField):
        field = field.as_hermitian()
    g = field.grid
    mask = g.deep_interior(layers)
    if within is not None:
        mask &= np.abs(g.nodes) <= within
    d = field_derivatives(field)
    e1 = pi1_derivative_norm_sq(**d)
    e2 = pi1_derivative_norm_sq_matrix(d["a"], d["b"], d["c"], d["da"], d["db"], np.conj(d["dbb"]), d["dc"])
    b2 = np.abs(field.b) ** 2
    res = -g.lap(b2) / 4 + e1 + 8 * (1 + b2) * b2
    return res[mask], float(np.max(np.abs(e1[mask] - e2[mask]))), mask


def barrier_check(field: SymmetricField, R: float | None = None):
    """max over interior nodes of |bt| - 2 max_bdry|bt| I0(4|z|)/I0(4R)."""
    g = field.grid
    R = g.params[1] if R is None else R
    bt = np.abs(field.bt)
    m = np.max(bt[g.boundary])
    J = 2 * m * bessel_I0(4 * np.abs(g.nodes)) / bessel_I0(4 * R)
    return float(np.max((bt - J)[g.interior]))


def decay_exponent(field, R: float | None = None, annulus=None) -> DecayFit:
    """Fitted exponent of |b| against R - |z| on R/4 < |z| < 3R/4."""
    g = field.grid
    R = g.params[1] if R is None else R
    lo, hi = (0.25 * R, 0.75 * R) if annulus is None else annulus
    b = np.abs(field.bt) if isinstance(field, SymmetricField) else np.abs(field.b)
    r = np.abs(g.nodes)
    sel = (r > lo) & (r < hi) & (b > 0)
    return fit_decay_rate(R - r[sel], b[sel])
