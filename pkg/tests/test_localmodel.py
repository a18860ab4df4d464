import math

import numpy as np
import pytest

from higgslab.errors import DomainError, InputError
from higgslab.localmodel import (C0, ModelHiggs, barrier_check, commutator_norm_sq,
                                 commutator_norm_sq_matrix, commutator_norm_sq_reference,
                                 decay_exponent, energy_identity_residual, model_metric_at,
                                 painleve_profile, shoot_profile_origin, solve_disc_general,
                                 solve_disc_symmetric, subsolution_check)
from higgslab.numerics import bessel_I0, fit_decay_rate


def random_det1_hermitian(rng, n, bmax=None):
    b = rng.normal(size=n) + 1j * rng.normal(size=n)
    if bmax is not None:
        b *= bmax / np.maximum(bmax, np.abs(b))
    a = np.exp(rng.normal(size=n))
    H = np.empty((n, 2, 2), complex)
    H[:, 0, 0], H[:, 0, 1], H[:, 1, 0] = a, b, np.conj(b)
    H[:, 1, 1] = (1 + np.abs(b) ** 2) / a
    return H


def boundary_with_winding(amp, phase=0.7):
    def H(z):
        b = amp * np.exp(1j * (phase + np.angle(z)))
        a = np.sqrt(1 + np.abs(b) ** 2)
        out = np.empty(np.shape(z) + (2, 2), complex)
        out[..., 0, 0] = out[..., 1, 1] = a
        out[..., 0, 1], out[..., 1, 0] = b, np.conj(b)
        return out
    return H


@pytest.fixture(scope="module")
def profiles():
    return {t: painleve_profile(t) for t in (1.0, 2.0, 4.0)}


# --- model Higgs bundle -------------------------------------------------------

def test_model_higgs_determinant():
    z = np.array([0.3 + 0.1j, -1.2j])
    F = ModelHiggs.higgs(z)
    assert np.allclose(-np.linalg.det(F), 2.25 * z)
    assert np.allclose(ModelHiggs.quadratic_differential()(z), 2.25 * z)


def test_model_higgs_symmetric_pairing():
    F = ModelHiggs.higgs(0.4 - 0.2j)
    assert np.allclose(F.T @ C0, C0 @ F)


def test_model_scale_validation():
    with pytest.raises(InputError):
        ModelHiggs(0.5)
    with pytest.raises(InputError):
        painleve_profile(0.5)
    with pytest.raises(InputError):
        painleve_profile(1.0, r_max=1.0)


# --- radial profile -----------------------------------------------------------

def test_profile_far_field_slope(profiles):
    for t, prof in profiles.items():
        r = prof.v_profile.radii
        v = np.abs(prof.v(r))
        outer = r >= 0.5 * (r[0] + r[-1])
        slope = fit_decay_rate(4 * t * r[outer] ** 1.5, v[outer]).rate
        assert abs(slope - 1) <= 0.05


def test_profile_v_negative_increasing(profiles):
    prof = profiles[1.0]
    r = np.linspace(0.05, prof.r_max * 0.99, 200)
    v = prof.v(r)
    assert np.all(v < 0) and np.all(np.diff(v) > 0)


def test_profile_scaling_law(profiles):
    base = profiles[1.0]
    for t in (2.0, 4.0):
        pt = profiles[t]
        r = np.linspace(pt.r_inner, pt.r_max, 200)
        assert np.max(np.abs(pt.v(r) - base.v(t ** (2 / 3) * r))) <= 1e-6


def test_profile_origin_value_against_shooting(profiles):
    for t in (1.0, 2.0):
        assert abs(profiles[t].psi(0.0) - shoot_profile_origin(t)) <= 1e-6


def test_profile_psi_and_v_consistent(profiles):
    prof = profiles[1.0]
    r = np.linspace(0.1, 2.0, 50)
    assert np.allclose(prof.v(r), prof.psi(r) + 0.5 * np.log(r), atol=1e-12)
    with pytest.raises(DomainError):
        prof.v(0.0)


def test_model_metric_properties(profiles):
    prof = profiles[1.0]
    z = np.array([0.0, 0.3 + 0.4j, -1.0, 2.0j, 4.0])
    H = model_metric_at(prof, z)
    assert np.allclose(np.linalg.det(H), 1, atol=1e-12)
    assert np.allclose(H, np.conj(np.swapaxes(H, -1, -2)))
    # far field: the limiting metric diag(|z|^{-1/2}, |z|^{1/2})
    far = model_metric_at(prof, 4.0)
    assert far[0, 0] == pytest.approx(0.5, rel=1e-6)
    with pytest.raises(DomainError):
        model_metric_at(prof, 2 * prof.r_max)


def test_model_metric_compatible_with_pairing(profiles):
    # diagonal entries e^psi, e^-psi: C0 is an isometry to the dual metric
    H = model_metric_at(profiles[1.0], 0.7j)
    assert np.allclose(C0.T @ H @ C0, np.linalg.inv(H).T)


# --- commutator identity ------------------------------------------------------

def test_commutator_diagonal_metric_vanishes():
    H = np.diag([2.0, 0.5]).astype(complex)
    assert commutator_norm_sq(H) == 0.0
    assert abs(commutator_norm_sq_matrix(H)) <= 1e-14


def test_commutator_unit_b():
    H = np.array([[math.sqrt(2), 1], [1, math.sqrt(2)]], complex)
    assert commutator_norm_sq(H) == pytest.approx(16.0, abs=1e-14)
    assert commutator_norm_sq_reference(H) == pytest.approx(16.0, abs=1e-12)


def test_commutator_random_against_reference():
    rng = np.random.default_rng(11)
    H = random_det1_hermitian(rng, 1000, bmax=2.0)
    closed = commutator_norm_sq(H)
    ref = np.array([commutator_norm_sq_reference(h) for h in H])
    assert np.max(np.abs(closed - ref)) <= 1e-12


def test_commutator_matrix_form_relative():
    rng = np.random.default_rng(12)
    H = random_det1_hermitian(rng, 500)
    closed = commutator_norm_sq(H)
    assert np.max(np.abs(closed - commutator_norm_sq_matrix(H)) / np.maximum(1, closed)) <= 1e-9


def test_commutator_gauge_invariance():
    # diagonal unitary gauge preserves f = diag(1, -1) and changes b by a phase
    rng = np.random.default_rng(13)
    H = random_det1_hermitian(rng, 20)
    U = np.diag(np.exp(1j * np.array([0.3, -1.1])))
    G = np.conj(U.T) @ H @ U
    assert np.allclose(commutator_norm_sq(G), commutator_norm_sq(H), rtol=1e-13)


def test_commutator_rejects_bad_input():
    with pytest.raises(InputError):
        commutator_norm_sq(np.diag([2.0, 2.0]))
    with pytest.raises(InputError):
        commutator_norm_sq(np.array([[1, 1j], [1j, 2]]))


# --- disc solves ----------------------------------------------------------------

def test_symmetric_zero_boundary_gives_zero():
    f = solve_disc_symmetric(2.0, 0.0, 0.1)
    assert np.all(f.bt == 0)


def test_symmetric_decay_exponent_in_range():
    f = solve_disc_symmetric(6.0, 0.1, 6.0 / 64)
    assert 3.6 <= decay_exponent(f).rate <= 4.0


def test_symmetric_maximum_principle():
    f = solve_disc_symmetric(3.0, 0.2, 0.1)
    g = f.grid
    assert np.max(np.abs(f.bt[g.interior])) <= np.max(np.abs(f.bt[g.boundary])) + 1e-12
    assert np.all(f.bt >= 0)


def test_symmetric_det1():
    f = solve_disc_symmetric(2.0, 0.5, 0.1)
    assert f.as_hermitian().det_defect() <= 1e-12


def test_general_decoupled_boundary():
    f = solve_disc_general(2.0, np.eye(2, dtype=complex), 0.2)
    assert np.max(np.abs(f.b)) <= 1e-12
    assert np.allclose(f.a, 1, atol=1e-12)


def test_general_matches_symmetric_with_real_boundary():
    # constant real b on the boundary reduces to the symmetric problem; the
    # two discretizations agree to O(h^2)
    amp = 0.3
    a = math.sqrt(1 + amp * amp)
    Hb = np.array([[a, amp], [amp, a]], complex)
    gaps = []
    for h in (0.1, 0.05):
        fg = solve_disc_general(2.0, Hb, h)
        fs = solve_disc_symmetric(2.0, amp, h)
        assert np.max(np.abs(fg.b.imag)) <= h**2
        assert np.max(np.abs(fg.b - fs.bt)) <= 0.05 * h**2
        gaps.append(np.max(np.abs(fg.a - fs.a)))
    assert gaps[0] / gaps[1] >= 3.5


def test_general_decay_exponent():
    f = solve_disc_general(4.0, boundary_with_winding(0.1), 4.0 / 32)
    assert decay_exponent(f).rate >= 2.69
    assert f.det_defect() <= 1e-10


# --- comparison checks on solved fields -------------------------------------------

def test_subsolution_symmetric_and_general():
    assert subsolution_check(solve_disc_symmetric(3.0, 0.3, 0.1)).passed
    assert subsolution_check(solve_disc_general(2.0, boundary_with_winding(0.3), 0.1)).passed


def test_barrier_bound():
    for R, amp, h in ((3.0, 0.3, 0.1), (6.0, 0.1, 6.0 / 64)):
        f = solve_disc_symmetric(R, amp, h)
        assert barrier_check(f) <= 10 * h**2


@pytest.mark.parametrize("kind", ["symmetric", "general"])
def test_energy_identity_second_order(kind):
    R, res = 2.0, []
    for N in (16, 32):
        h = R / N
        if kind == "symmetric":
            f = solve_disc_symmetric(R, 0.5, h)
        else:
            f = solve_disc_general(R, boundary_with_winding(0.5), h)
        r, gap, mask = energy_identity_residual(f, within=0.75 * R)
        assert gap <= 1e-12
        assert np.max(np.abs(r)) <= 20 * h**2
        res.append(np.max(np.abs(r)))
    assert res[0] / res[1] >= 3.5
