"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS`` or ``FAIL`` line with the measured
quantities, then asserts.  Run with ``pytest -v tests/test_acceptance.py``.
"""
import math
import os
import time

import mpmath
import numpy as np
import pytest
from scipy.integrate import quad

from higgslab.approxforms import (CutoffSchedule, GluedMetric, H_P_t, error_lemma_checks,
                                  pairing_report, stokes_check, theta_matrix)
from higgslab.localmodel import (barrier_check, commutator_norm_sq, commutator_norm_sq_reference,
                                 decay_exponent, energy_identity_residual, painleve_profile,
                                 solve_disc_general, solve_disc_symmetric)
from higgslab.numerics import PowerSeries, bessel_I0, circle, contour_integrate, fit_decay_rate
from higgslab.quadiff import QuadraticDifferential, threshold
from higgslab.spectral import (AuxInput, HolDifferential, SpectralCurve, aux_boundary_form,
                               aux_closed_form, aux_pairing, l2_pairing_hol, semiflat_gram)


@pytest.fixture
def verdict(capsys):
    def report(number, name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number:>2} {name}: {detail}")
        assert ok, detail
    return report


def winding_boundary(amp, phase=0.7):
    def H(z):
        b = amp * np.exp(1j * (phase + np.angle(z)))
        a = np.sqrt(1 + np.abs(b) ** 2)
        out = np.empty(np.shape(z) + (2, 2), complex)
        out[..., 0, 0] = out[..., 1, 1] = a
        out[..., 0, 1], out[..., 1, 0] = b, np.conj(b)
        return out
    return H


@pytest.fixture(scope="module")
def symmetric_fine():
    R = 6.0
    h = R / 256
    t0 = time.perf_counter()
    field = solve_disc_symmetric(R, 0.1, h)
    return field, h, time.perf_counter() - t0


# 1 -----------------------------------------------------------------------------------

def test_criterion_01_threshold(verdict):
    oracle = quad(lambda x: math.sqrt(1 - x * x), -1, 1, epsabs=1e-14)[0]
    t0 = time.perf_counter()
    th = threshold(QuadraticDifferential([-1, 0, 1]), 4.0, 64)
    dt = time.perf_counter() - t0
    err = abs(th.value - oracle)
    verdict(1, "threshold", err <= 1e-3 and dt < 30,
            f"M = {th.value:.12f}, oracle {oracle:.12f}, error {err:.2e}, runtime {dt:.1f} s")


# 2 -----------------------------------------------------------------------------------

def test_criterion_02_bessel(verdict):
    at0 = bessel_I0(0.0)
    lim = bessel_I0(20.0) * math.sqrt(40 * math.pi) * math.exp(-20.0)
    # fourth-order central differences: truncation ~ h^4 I^(6)/90, rounding ~ eps I / h^2
    h = 1e-2
    r = np.linspace(0.5, 30.0, 300)
    I = bessel_I0
    d1 = (-I(r + 2 * h) + 8 * I(r + h) - 8 * I(r - h) + I(r - 2 * h)) / (12 * h)
    d2 = (-I(r + 2 * h) + 16 * I(r + h) - 30 * I(r) + 16 * I(r - h) - I(r - 2 * h)) / (12 * h * h)
    ode = np.max(np.abs(d2 + d1 / r - I(r)) / I(r))
    verdict(2, "bessel", at0 == 1.0 and 0.99 <= lim <= 1.01 and ode <= 1e-8,
            f"I0(0) = {at0!r}, I0(20) sqrt(40 pi) e^-20 = {lim:.6f}, max relative ODE defect {ode:.2e}")


# 3 -----------------------------------------------------------------------------------

def test_criterion_03_commutator_identity(verdict):
    rng = np.random.default_rng(2024)
    err = 0.0
    for _ in range(1000):
        # |b| <= 2 keeps |[f^dagger, pi_1]|^2 <= 320, where an absolute 1e-12 is above
        # the rounding of the double-precision closed form
        b = 2 * math.sqrt(rng.uniform()) * np.exp(2j * math.pi * rng.uniform())
        a = math.exp(rng.normal())
        H = np.array([[a, b], [np.conj(b), (1 + abs(b) ** 2) / a]])
        err = max(err, abs(commutator_norm_sq(H) - commutator_norm_sq_reference(H)))
    verdict(3, "commutator identity", err <= 1e-12, f"1000 matrices, max |closed - oracle| = {err:.2e}")


# 4 -----------------------------------------------------------------------------------

def test_criterion_04_energy_identity(verdict):
    R = 2.0
    lines, ok = [], True
    for kind in ("symmetric", "general"):
        res = []
        for N in (16, 32, 64):
            h = R / N
            f = solve_disc_symmetric(R, 0.5, h) if kind == "symmetric" else \
                solve_disc_general(R, winding_boundary(0.5), h)
            r, gap, _ = energy_identity_residual(f, within=0.75 * R)
            m = float(np.max(np.abs(r)))
            ok &= m <= 20 * h**2 and gap <= 1e-12
            res.append(m)
        ratios = [res[k] / res[k + 1] for k in range(2)]
        ok &= min(ratios) >= 3.5
        lines.append(f"{kind}: residual/h^2 = " + ", ".join(f"{m / (R / N) ** 2:.3f}" for m, N in zip(res, (16, 32, 64)))
                     + ", halving ratios " + ", ".join(f"{x:.2f}" for x in ratios))
    verdict(4, "energy identity", ok, "; ".join(lines))


# 5 -----------------------------------------------------------------------------------

def test_criterion_05_decay_exponents(verdict, symmetric_fine):
    field, h, t_sym = symmetric_fine
    g_sym = decay_exponent(field).rate
    t0 = time.perf_counter()
    gen = solve_disc_general(6.0, winding_boundary(0.1), h)
    t_gen = time.perf_counter() - t0
    g_gen = decay_exponent(gen).rate
    verdict(5, "disc decay", 3.6 <= g_sym <= 4.0 and g_gen >= 2.69 and t_sym < 300 and t_gen < 300,
            f"h = R/256: symmetric exponent {g_sym:.4f} ({t_sym:.1f} s), general exponent {g_gen:.4f} ({t_gen:.1f} s)")


# 6 -----------------------------------------------------------------------------------

def test_criterion_06_barrier(verdict, symmetric_fine):
    field, h, _ = symmetric_fine
    excess = barrier_check(field)
    verdict(6, "barrier bound", excess <= 10 * h**2,
            f"max(|b| - 2 max_bdry|b| I0(4|z|)/I0(4R)) = {excess:.3e}, allowance 10 h^2 = {10 * h**2:.3e}")


# 7 -----------------------------------------------------------------------------------

def test_criterion_07_model_profile(verdict):
    profs = {t: painleve_profile(t) for t in (1.0, 2.0, 4.0)}
    slopes = []
    for t, prof in profs.items():
        r = prof.v_profile.radii
        v = np.abs(prof.v(r))
        outer = r >= 0.5 * (r[0] + r[-1])
        slopes.append(fit_decay_rate(4 * t * r[outer] ** 1.5, v[outer]).rate)
    scaling = 0.0
    for t in (2.0, 4.0):
        r = np.linspace(profs[t].r_inner, profs[t].r_max, 400)
        scaling = max(scaling, float(np.max(np.abs(profs[t].v(r) - profs[1.0].v(t ** (2 / 3) * r)))))
    ok = all(abs(s - 1) <= 0.05 for s in slopes) and scaling <= 1e-6
    verdict(7, "model profile", ok,
            "far-field slopes " + ", ".join(f"{s:.4f}" for s in slopes) + f", scaling-law error {scaling:.2e}")


# 8 -----------------------------------------------------------------------------------

def test_criterion_08_residues(verdict):
    curve = SpectralCurve([0.0, 2.25])
    one = PowerSeries(np.array([1.0 + 0j]), 0, 0.0, 24)
    eta = AuxInput.uniform(curve, one)
    val = aux_pairing(curve, {0: one}, {0: one}, eta)
    # contour oracle for -4 pi Res2 of g = g1 g2 upsilon / xi, upsilon = (9/8) eta / xi
    oracle = -4 * np.pi * contour_integrate(circle(0.0, 0.1, 256), lambda x: (9 / 8) / x**2 * x).value / (2j * np.pi)
    rot = max(abs(aux_pairing(curve, {0: one}, {0: one}, eta, omega=np.exp(2j * np.pi * k / 3)) - val)
              for k in (1, 2))
    rng = np.random.default_rng(8)
    closed = 0.0
    for _ in range(5):
        g1, g2, e = (PowerSeries(rng.normal(size=6) + 1j * rng.normal(size=6), 0, 0.0, 24) for _ in range(3))
        ups = AuxInput({0: e}).upsilon(0)
        v = aux_pairing(curve, {0: g1}, {0: g2}, AuxInput({0: e}))
        closed = max(closed, abs(v - aux_closed_form(g1, g2, ups)), abs(v - aux_boundary_form(g1, g2, ups)))
    ok = abs(val - oracle) <= 1e-8 and abs(val + 4.5 * np.pi) <= 1e-8 and rot <= 1e-10 and closed <= 1e-6
    verdict(8, "residue machinery", ok,
            f"value {val.real:.12f}{val.imag:+.1e}i vs -9 pi/2 = {-4.5 * np.pi:.12f} (contour gap {abs(val - oracle):.1e}), "
            f"rotation gap {rot:.1e}, closed-form gap {closed:.1e}")


# 9 -----------------------------------------------------------------------------------

def test_criterion_09_semiflat(verdict):
    curve = SpectralCurve([-1, 0, 0, 0, 1])
    nu = HolDifferential([1])
    polar = l2_pairing_hol(curve, nu, nu, scheme="polar")
    part = l2_pairing_hol(curve, nu, nu, scheme="partition")
    rel = abs(polar - part) / abs(polar)
    g = semiflat_gram(curve, [nu], [nu]).full()
    herm = float(np.max(np.abs(g - g.conj().T)))
    lam = float(np.min(np.linalg.eigvalsh(g)))
    verdict(9, "semi-flat blocks", rel <= 1e-3 and herm == 0 and lam > 0,
            f"polar {polar.real:.9f}, partition {part.real:.9f}, relative gap {rel:.1e}, min eigenvalue {lam:.4f}")


# 10 ----------------------------------------------------------------------------------

def test_criterion_10_stokes(verdict):
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(3):
        M = rng.normal(size=(6, 2, 2)) + 1j * rng.normal(size=(6, 2, 2))
        a = lambda Z, M=M: M[0] + M[1] * Z[..., None, None] + M[2] * np.conj(Z[..., None, None]) ** 2
        b = lambda Z, M=M: (M[3] * np.cos(Z[..., None, None]), M[4] * Z[..., None, None] ** 2)
        th = lambda Z, M=M: M[5] * Z[..., None, None]

        def H(Z):
            s = 0.3 * np.sin(Z.real + Z.imag)
            bb = 0.2 * (Z.real + 1j * Z.imag ** 2)
            out = np.empty(Z.shape + (2, 2), complex)
            out[..., 0, 0], out[..., 0, 1], out[..., 1, 0] = np.exp(s), bb, np.conj(bb)
            out[..., 1, 1] = (1 + np.abs(bb) ** 2) * np.exp(-s)
            return out
        h = 0.01
        r = stokes_check(a, b, H, (-0.5, 0.5, -0.4, 0.6), h, theta=th, t=1.5)
        worst = max(worst, r.defect / (h**2 * r.scale))
    curve = SpectralCurve([-1, 0, 1])
    metric = GluedMetric(curve, 1.0, CutoffSchedule.from_threshold(math.pi / 2, 0.5), n=8001)
    P = metric.patches[1]
    nu = np.array([1.0 + 0j])

    def fa(Z):
        zz = Z.ravel()
        a1, _ = P.a1(nu, metric.locate(zz).zeta)
        return (a1[:, None, None] * theta_matrix(curve, zz)).reshape(Z.shape + (2, 2))

    def fb(Z):
        f = H_P_t(metric, nu, Z.ravel(), zero=1)
        return f.a10.reshape(Z.shape + (2, 2)), f.a01.reshape(Z.shape + (2, 2))
    h = 0.01
    inst = stokes_check(fa, fb, lambda Z: metric.matrix(Z.ravel()).reshape(Z.shape + (2, 2)),
                        (0.7, 1.3, -0.3, 0.3), h, theta=lambda Z: theta_matrix(curve, Z), t=1.0)
    ratio_inst = inst.defect / (h**2 * inst.scale)
    verdict(10, "Stokes identities", worst <= 20 and ratio_inst <= 20,
            f"defect / (h^2 field norms): random fields max {worst:.3f}, (F_alpha, H_P_t) instance {ratio_inst:.3f} "
            f"(defect {inst.defect:.2e} at h = {h})")


# 11 ----------------------------------------------------------------------------------

def test_criterion_11_error_lemmas(verdict):
    parts, ok = [], True
    for gamma in (0.5, 1.0, 2.0):
        rep = error_lemma_checks(100, gamma, np.linspace(1, 10, 10), seed=11)
        for name, fit in rep.items():
            ok &= fit.family_exponent >= 1.9 * gamma
            parts.append(f"gamma {gamma} {name} {fit.family_exponent:.3f} (per-trial min {fit.min_exponent:.3f})")
    verdict(11, "error-term lemmas", ok, "fitted exponents vs 1.9 gamma: " + "; ".join(parts))


# 12 ----------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_12_pipeline(verdict):
    curve = SpectralCurve([-1, 0, 1])
    t0 = time.perf_counter()
    M = threshold(curve.phi, 4.0, 64).value
    sch = CutoffSchedule.from_threshold(M, 0.5)
    rep = pairing_report(curve, [1.0, 0.3], [0.5, -0.2j], None, sch, np.arange(2.0, 13.0),
                         direct_t=(2.0,), jobs=max(1, min(4, os.cpu_count() or 1)))
    dt = time.perf_counter() - t0
    need, target = rep.required_exponent, rep.target_exponent
    ok = min(rep.exponent_HH, rep.exponent_VV, rep.exponent_HV) >= need and dt < 1800
    hv = "identically zero" if rep.hv_identically_zero else f"{rep.exponent_HV:.3f}"
    verdict(12, "pipeline decay", ok,
            f"kappa = {sch.kappa:.4f}; exponents HH {rep.exponent_HH:.3f}, VV {rep.exponent_VV:.3f}, HV {hv}; "
            f"required 4 kappa = {need:.3f}, exact-form rate 8 kappa = {target:.3f}; runtime {dt:.0f} s")
