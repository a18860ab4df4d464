import math

import mpmath
import numpy as np
import pytest

from higgslab.errors import ConvergenceError, DomainError, InputError
from higgslab.numerics import (Grid2D, Nonlinearity, PowerSeries, bessel_I0, bessel_ratio_bound,
                               circle, contour_integrate, fit_decay_rate, solve_elliptic_newton,
                               solve_radial_bvp)


def i0_series_oracle(x, terms=200):
    """sum (x/2)^{2k} / (k!)^2 in extended precision."""
    with mpmath.workdps(50):
        x = mpmath.mpf(x)
        return float(mpmath.nsum(lambda k: (x / 2) ** (2 * k) / mpmath.factorial(k) ** 2, [0, mpmath.inf]))


# --- Bessel I0 -------------------------------------------------------------

def test_bessel_at_zero_is_exactly_one():
    assert bessel_I0(0.0) == 1.0


def test_bessel_even_extension():
    assert bessel_I0(2.0) == bessel_I0(abs(-2.0))


@pytest.mark.parametrize("x", [1e-6, 0.3, 1.0, 2.5, 7.0, 15.0, 29.9, 30.1, 44.0, 50.0])
def test_bessel_relative_error_against_series(x):
    ref = i0_series_oracle(x)
    assert abs(bessel_I0(x) / ref - 1) <= 1e-12


def test_bessel_large_argument_limit():
    val = bessel_I0(20.0) * math.sqrt(2 * math.pi * 20.0) * math.exp(-20.0)
    assert 0.99 <= val <= 1.01


def test_bessel_discrete_ode():
    h = 1e-3
    r = np.linspace(0.5, 30, 400)
    I = bessel_I0
    lhs = (I(r + h) - 2 * I(r) + I(r - h)) / h**2 + (I(r + h) - I(r - h)) / (2 * h * r) - I(r)
    assert np.max(np.abs(lhs / I(r))) <= 1e-6
    # absolute form on the lower range, where I0 is O(1)
    rs = r[r <= 3]
    lhs_s = (I(rs + h) - 2 * I(rs) + I(rs - h)) / h**2 + (I(rs + h) - I(rs - h)) / (2 * h * rs) - I(rs)
    assert np.max(np.abs(lhs_s)) <= 1e-6


@pytest.mark.parametrize("bad", [-1.0, float("nan"), float("inf")])
def test_bessel_domain_errors(bad):
    with pytest.raises(DomainError):
        bessel_I0(bad)


# --- Bessel ratio bound -----------------------------------------------------

def test_ratio_bound_equal_pairs():
    pairs = [(b, b) for b in np.linspace(0.1, 50, 20)]
    assert bessel_ratio_bound(4, 4.1, pairs) == pytest.approx(1.0, abs=1e-14)


def test_ratio_bound_finite_on_grid():
    g = np.linspace(0.5, 50, 60)
    pairs = [(b, a) for a in g for b in g if b <= a]
    sup = bessel_ratio_bound(4, 4.1, pairs)
    assert np.isfinite(sup) and sup >= 1
    # terms with large a - b decrease: direct-evaluation oracle
    vals = [math.exp(-4.1 * (a - 1) + float(mpmath.log(mpmath.besseli(0, 4 * a)) - mpmath.log(mpmath.besseli(0, 4))))
            for a in (10, 20, 30, 40)]
    assert all(x > y for x, y in zip(vals, vals[1:]))
    assert bessel_ratio_bound(4, 4.1, [(1, 40)]) == pytest.approx(vals[-1], rel=1e-10)


def test_ratio_bound_monotone_comparison():
    far = bessel_ratio_bound(1, 2, [(1, 10)])
    near = bessel_ratio_bound(1, 2, [(9, 10)])
    assert far < near


def test_ratio_bound_preconditions():
    with pytest.raises(InputError):
        bessel_ratio_bound(1, 2, [(3, 2)])
    with pytest.raises(InputError):
        bessel_ratio_bound(2, 1, [(1, 2)])


# --- radial BVP -------------------------------------------------------------

def test_radial_bvp_bessel_solution():
    # O(h^2) discretization error: 1.6e-8 at h = 5e-4, 4e-9 at h = 2.5e-4
    prof = solve_radial_bvp(Nonlinearity.linear(1.0), 2.0, bessel_I0(2.0), n=8001)
    assert np.max(np.abs(prof.values - bessel_I0(prof.radii))) <= 1e-8
    assert prof.residual <= 1e-10


def test_radial_bvp_bessel_second_order():
    errs = []
    for n in (201, 401, 801):
        prof = solve_radial_bvp(Nonlinearity.linear(1.0), 3.0, bessel_I0(3.0), n=n)
        errs.append(np.max(np.abs(prof.values - bessel_I0(prof.radii))))
    assert errs[0] / errs[1] >= 3.5 and errs[1] / errs[2] >= 3.5


def test_radial_bvp_constant():
    prof = solve_radial_bvp(Nonlinearity.linear(0.0), 2.0, 0.7, n=101)
    assert np.allclose(prof.values, 0.7, atol=1e-14)


def test_radial_bvp_sinh_positive_decreasing_matches_shooting():
    from scipy.integrate import solve_ivp
    f = Nonlinearity(lambda r, u: 18 * r * np.sinh(2 * u), lambda r, u: 36 * r * np.cosh(2 * u))
    prof = solve_radial_bvp(f, 1.5, 0.0, n=4001, r_min=0.2, inner_value=0.5)
    u = prof.values
    assert np.all(u[:-1] > 0) and np.all(np.diff(u) < 0)
    # shooting oracle: integrate from the inner end and solve for the slope
    # that hits the outer Dirichlet value
    from scipy.optimize import brentq

    def shoot(s0, dense=False):
        return solve_ivp(lambda r, y: [y[1], 18 * r * np.sinh(2 * y[0]) - y[1] / r], (0.2, 1.5),
                         [0.5, s0], rtol=1e-12, atol=1e-14, dense_output=dense)
    s_prof = prof.derivatives[0]
    s_star = brentq(lambda s0: shoot(s0).y[0, -1], 1.02 * s_prof, 0.98 * s_prof, xtol=1e-14)
    sol = shoot(s_star, dense=True)
    r = np.linspace(0.2, 1.5, 80)
    assert np.max(np.abs(sol.sol(r)[0] - prof(r))) <= 1e-6


def test_radial_profile_domain():
    prof = solve_radial_bvp(Nonlinearity.linear(0.0), 1.0, 1.0, n=11)
    with pytest.raises(DomainError):
        prof(2.0)


# --- elliptic Newton --------------------------------------------------------

def test_elliptic_harmonic_maximum_principle():
    g = Grid2D.disc(1.0, 0.05)
    sol = solve_elliptic_newton(g, Nonlinearity.linear(0.0), lambda z: z.real)
    u = sol.values
    assert np.max(u[g.interior]) <= np.max(u[g.boundary]) + 1e-12
    assert sol.residual <= 1e-9


def test_elliptic_bessel_second_order():
    errs = []
    for h in (0.2, 0.1, 0.05):
        g = Grid2D.disc(2.0, h)
        sol = solve_elliptic_newton(g, Nonlinearity.linear(1.0), lambda z: bessel_I0(np.abs(z)))
        errs.append(np.max(np.abs(sol.values - bessel_I0(np.abs(g.nodes)))))
    assert errs[0] / errs[1] >= 3.5 and errs[1] / errs[2] >= 3.5
    assert errs[-1] <= 5 * 0.05**2


def test_elliptic_zero_data_zero_solution():
    g = Grid2D.disc(3.0, 0.2)
    nl = Nonlinearity(lambda z, w: 8 * np.sinh(2 * w), lambda z, w: 16 * np.cosh(2 * w))
    sol = solve_elliptic_newton(g, nl, np.zeros(g.size))
    assert np.all(sol.values == 0)


def test_elliptic_nonconvergence_reports():
    g = Grid2D.disc(1.0, 0.1)
    nl = Nonlinearity(lambda z, w: np.exp(w), lambda z, w: np.exp(w))
    with pytest.raises(ConvergenceError) as exc:
        solve_elliptic_newton(g, nl, lambda z: 30 + 0 * z.real, max_iter=1, tol=1e-30)
    assert exc.value.iterations >= 1


def test_grid_partition_exact():
    for g in (Grid2D.disc(1.0, 0.1), Grid2D.annulus(0.3, 1.0, 0.1), Grid2D.rectangle(0, 1, 0, 2, 0.1)):
        assert np.all(g.boundary ^ g.interior)
        assert np.all(g.inside(g.nodes))


# --- decay fits -------------------------------------------------------------

def test_fit_exact_exponential():
    d = np.linspace(0, 5, 20)
    assert fit_decay_rate(d, np.exp(-3 * d)).rate == pytest.approx(3.0, abs=1e-10)


def test_fit_constant():
    assert fit_decay_rate([(0, 2.0), (1, 2.0), (2, 2.0)]).rate == pytest.approx(0.0, abs=1e-12)


def test_fit_perturbed_exponential():
    d = np.linspace(0, 10, 200)
    assert fit_decay_rate(d, np.exp(-2 * d) * (1 + 0.01 * np.sin(d))).rate == pytest.approx(2.0, abs=0.05)


def test_fit_scale_invariance():
    rng = np.random.default_rng(1)
    d = np.sort(rng.uniform(0, 4, 30))
    v = np.exp(-1.7 * d + 0.1 * rng.normal(size=30))
    assert abs(fit_decay_rate(d, v).rate - fit_decay_rate(d, 123.4 * v).rate) <= 1e-12


def test_fit_input_errors():
    with pytest.raises(InputError):
        fit_decay_rate([(0, 1.0), (1, 0.5)])
    with pytest.raises(InputError):
        fit_decay_rate([(0, 1.0), (1, 0.0), (2, 0.5)])


# --- contour integrals ------------------------------------------------------

def test_contour_residue_base_case():
    res = contour_integrate(circle(0, 1, 64), lambda z: 1 / z)
    assert abs(res.value - 2j * math.pi) <= 1e-10


def test_contour_regular():
    assert abs(contour_integrate(circle(0, 1, 64), lambda z: z).value) <= 1e-12


def test_contour_series_oracle():
    res = contour_integrate(circle(0, 1, 64), lambda z: 9 / 8 * z**-2 * z)
    assert abs(res.value - 2j * math.pi * 9 / 8) <= 1e-10
    assert res.error <= 1e-10


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_contour_nonfinite():
    with pytest.raises(InputError):
        contour_integrate(circle(0, 1, 64), lambda z: 1 / (z - 1))


# --- power series -----------------------------------------------------------

def test_power_series_order_never_extends():
    a = PowerSeries([1, 2, 3], order=3)
    b = PowerSeries([1, 1, 1, 1, 1], order=5)
    assert (a * b).order == 3
    assert (a + b).order == 3


def test_power_series_exp_log_roundtrip_via_compose():
    # 1/(1-x) composed with x/(1+x) is 1 + x
    geo = PowerSeries(np.ones(12), order=12)
    inner = PowerSeries([0] + [(-1) ** k for k in range(11)], order=12)
    out = geo.compose(inner)
    assert np.allclose(out.coeffs[:2], [1, 1]) and np.allclose(out.coeffs[2:], 0, atol=1e-12)


def test_power_series_reversion():
    s = PowerSeries([0, 1, 0.5, 0.25], order=8)
    r = s.reversion()
    back = s.compose(r)
    assert back.coefficient(1) == pytest.approx(1)
    assert np.allclose([back.coefficient(k) for k in range(2, back.order)], 0, atol=1e-12)


def test_laurent_residue():
    s = PowerSeries([2.0, 0.0, 5.0], start=-2, order=3)
    assert s.valuation == -2
    assert s.residue() == 0.0
    assert s.coefficient(-2) == 2.0
