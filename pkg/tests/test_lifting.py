# tests/test_lifting.py
import math

import numpy as np
import pytest

from app.core.errors import (
    BranchLoss,
    Degenerate,
    DegeneratePoint,
    DomainError,
    InjectivityViolation,
    NoUnitEigenvalue,
)
from app.services import lifting, orbits, transfer

TOL = 1e-10


def _orbit(spec, c):
    orbit = orbits.critical_orbit(spec, c)
    return orbit, orbits.detect_relations(orbit)


@pytest.fixture()
def power_orbit(power8):
    return _orbit(power8, orbits.solve_superstable(power8, 3, [-1.1, -1.09]))


def _real_ray_motion(base, velocity, radius, n_radii=12):
    """Motion sampled on the single ray lambda in [0, radius]."""
    base = np.asarray(base, dtype=complex)
    v = np.asarray(velocity, dtype=complex)
    lambdas = np.linspace(0.0, radius, n_radii + 1)[None, :].astype(complex)
    samples = base[None, None, :] + lambdas[:, :, None] * v[None, None, :]
    return lifting.Motion(base=base, radius=radius, lambdas=lambdas, samples=samples, jet1=v)


# =========================
# Geometry
# =========================
def test_corner_angle_and_sector():
    assert lifting.corner_angle(0.5) == pytest.approx(math.pi)
    assert lifting.corner_angle(2.0) == pytest.approx(0.0)
    assert lifting.angle_at(0.0, 1.0, 1j) == pytest.approx(math.pi / 2)
    geo = lifting.geometry(0.5 + 0.01j, 0.3)
    assert geo.in_Dtheta and geo.in_sector
    assert not lifting.in_sector(-1.0, 0.3)
    assert not lifting.in_sector(0.0, 0.3)
    with pytest.raises(DegeneratePoint):
        lifting.corner_angle(1.0)


# =========================
# Motions
# =========================
def test_make_motion_samples_a_polar_grid():
    motion = lifting.make_motion([-1.0, 0.0], [1.0, 0.0], 0.2, grid=(8, 4))
    assert motion.lambdas.shape == (8, 5)
    assert motion.samples.shape == (8, 5, 2)
    np.testing.assert_allclose(motion.samples[:, 0, :], [[-1.0, 0.0]] * 8)
    assert motion.sup_norm() == pytest.approx(1.2)
    assert motion.deviation() == pytest.approx(0.2)


def test_make_motion_detects_collisions():
    with pytest.raises(InjectivityViolation):
        lifting.make_motion([0.0, 0.1], [1.0, -1.0], 0.2)
    with pytest.raises(DomainError):
        lifting.make_motion([0.0, 0.1], [1.0], 0.2)


def test_affine_velocity_keeps_marked_points_for_additive_families(basilica):
    orbit, _ = basilica
    np.testing.assert_allclose(lifting.affine_velocity(orbit), [1.0, 0.0])


def test_restrict_keeps_inner_radii():
    motion = lifting.make_motion([1.0], [1.0], 0.4, grid=(4, 4))
    inner = lifting.restrict(motion, 0.2)
    assert inner.radius == 0.2
    assert inner.lambdas.shape == (4, 3)


# =========================
# Lifts
# =========================
def test_single_lift_at_basilica(quad, basilica):
    orbit, relations = basilica
    motion = lifting.make_motion(orbit.gP, lifting.affine_velocity(orbit), 0.2)
    lifted = lifting.lift_motion(quad, orbit, relations, motion)
    lam = motion.lambdas
    # h_hat(-1) = -sqrt(1 - lambda), h_hat(0) = 0
    np.testing.assert_allclose(lifted.samples[:, :, 0], -np.sqrt(1.0 - lam), atol=TOL)
    np.testing.assert_allclose(lifted.samples[:, :, 1], 0.0, atol=TOL)
    np.testing.assert_allclose(lifted.jet1, [0.5, 0.0], atol=TOL)


def test_iterated_lifts_converge_at_basilica(quad, basilica):
    orbit, relations = basilica
    motion = lifting.make_motion(orbit.gP, lifting.affine_velocity(orbit), 0.2)
    diag = lifting.iterate_lifts(quad, orbit, relations, motion, 12)
    assert diag.M[0] == pytest.approx(1.2)
    assert diag.bounded
    assert diag.rate == pytest.approx(0.5, abs=0.05)
    assert all(r < 0.75 for r in diag.ratios)
    assert diag.radius == [0.2] * 13


def test_iterate_lifts_bounds(quad, basilica):
    orbit, relations = basilica
    motion = lifting.make_motion(orbit.gP, lifting.affine_velocity(orbit), 0.2)
    with pytest.raises(DomainError):
        lifting.iterate_lifts(quad, orbit, relations, motion, 201)
    diag = lifting.iterate_lifts(quad, orbit, relations, motion, 0)
    assert diag.d == [pytest.approx(0.2)]
    assert diag.rate is None


def test_lifts_grow_at_parabolic_flat_parameter(flat_boundary):
    orbit, relations = _orbit(flat_boundary, -1.0)
    np.testing.assert_allclose(orbit.gP, [-1.0, 1.0], atol=1e-12)
    # c moves to -1 - lambda and beta to 1 + lambda; the motion stays symmetric
    motion = _real_ray_motion(orbit.gP, [-1.0, 1.0], 0.05)
    try:
        d = lifting.iterate_lifts(flat_boundary, orbit, relations, motion, 100).d
    except BranchLoss as exc:
        assert exc.diagnostics is not None and exc.k >= 1
        d = exc.diagnostics.d
    assert d[0] == pytest.approx(0.05)
    assert max(d) > 10.0 * d[0]


def test_roots_lift_matches_continuation(power8, power_orbit):
    orbit, relations = power_orbit
    motion = lifting.make_motion(orbit.gP, lifting.affine_velocity(orbit), 0.2)
    lifted = lifting.lift_motion(power8, orbit, relations, motion)
    assert lifted.radius == 0.2
    np.testing.assert_allclose(lifting.roots_lift(power8, orbit, relations, motion), lifted.samples, atol=1e-9)


def test_roots_lift_needs_power_family(quad, basilica):
    orbit, relations = basilica
    motion = lifting.make_motion(orbit.gP, lifting.affine_velocity(orbit), 0.2)
    with pytest.raises(DomainError):
        lifting.roots_lift(quad, orbit, relations, motion)


def test_lifting_ratio_tracks_spectral_radius(quad, airplane):
    orbit, relations = airplane
    motion = lifting.make_motion(orbit.gP, lifting.affine_velocity(orbit), 0.05)
    diag = lifting.iterate_lifts(quad, orbit, relations, motion, 30)
    radius = transfer.spectral_radius(transfer.spectrum(transfer.assemble_A(orbit, relations)))
    assert diag.bounded
    assert diag.d[-1] < diag.d[0]
    assert diag.rate == pytest.approx(radius, abs=0.1)


# =========================
# Phi
# =========================
def test_phi_fixes_the_base_set_and_has_derivative_A(quad, airplane):
    orbit, relations = airplane
    result = lifting.phi_and_derivative(quad, orbit, relations)
    np.testing.assert_allclose(result.value, orbit.gP, atol=1e-9)
    A = transfer.assemble_A(orbit, relations).entries
    np.testing.assert_allclose(result.jacobian_fd, A, atol=1e-6)


def test_phi_derivative_for_flat_family(flat_robust):
    from app.services.families import chebyshev_parameter

    orbit, relations = _orbit(flat_robust, chebyshev_parameter(1.0, 8.0))
    result = lifting.phi_and_derivative(flat_robust, orbit, relations)
    A = transfer.assemble_A(orbit, relations).entries
    np.testing.assert_allclose(result.jacobian_fd, A, atol=1e-6)


# =========================
# theta-regularity
# =========================
def test_theta_regularity_of_a_constant_motion():
    motion = lifting.make_motion([0.5, 1.0, 2.0], [0.0, 0.0, 0.0], 0.1)
    report = lifting.theta_regularity(motion, 2.0, 0.3)
    assert report.regular
    assert report.worst_angle == pytest.approx(0.0, abs=1e-12)
    assert set(report.A2_ok) == {(1, 0), (2, 0), (2, 1)}


def test_theta_regularity_detects_points_leaving_the_sector():
    motion = lifting.make_motion([1.0], [1j], 2.0)
    report = lifting.theta_regularity(motion, 2.0, 0.1)
    assert report.A1_ok == [False]
    assert not report.regular


def test_theta_regularity_needs_real_base():
    motion = lifting.make_motion([1.0 + 1.0j], [0.0], 0.1)
    with pytest.raises(DomainError):
        lifting.theta_regularity(motion, 2.0, 0.3)


def test_lifts_stay_theta_regular_for_power_family(power8, power_orbit):
    orbit, relations = power_orbit
    motion = lifting.make_motion(orbit.gP, lifting.affine_velocity(orbit), 0.2)
    reports = lifting.lift_sequence_sectors(power8, orbit, relations, motion, 20, 8.0, 0.5)
    assert len(reports) == 21
    assert all(r.regular for r in reports)
    worst = [r.worst_angle for r in reports]
    assert worst[-1] < 0.5 * worst[0]
    assert all(w <= worst[0] + 1e-12 for w in worst)
    assert all(b <= a + 1e-12 for a, b in zip(worst[3:-1], worst[4:]))


# =========================
# Order of invariance
# =========================
def test_unit_eigenvector_is_invariant_to_second_order(flat_boundary):
    orbit, relations = _orbit(flat_boundary, -1.0)
    report = lifting.order_invariance_check(flat_boundary, orbit, relations)
    assert report.unit
    assert report.slope == pytest.approx(2.0, abs=0.15)


def test_contracting_direction_is_first_order(quad, basilica):
    orbit, relations = basilica
    with pytest.raises(NoUnitEigenvalue):
        lifting.order_invariance_check(quad, orbit, relations)
    report = lifting.order_invariance_check(quad, orbit, relations, require_unit=False)
    assert not report.unit
    assert report.eigenvalue == pytest.approx(0.5)
    assert report.slope == pytest.approx(1.0, abs=0.1)


def test_zero_direction_is_degenerate(quad, basilica):
    orbit, relations = basilica
    with pytest.raises(Degenerate):
        lifting.order_invariance_check(quad, orbit, relations, v=[0.0, 0.0])


# =========================
# Schwarz sampling
# =========================
@pytest.mark.parametrize("theta", [0.3, 1.0, 2.0])
def test_schwarz_sampling_has_no_violations(theta):
    report = lifting.schwarz_sampling(theta, 5000, seed=3)
    assert report.samples == 5000
    assert report.violations == 0
    assert report.refined_violations == 0


@pytest.mark.slow
@pytest.mark.parametrize("theta", [math.pi / 10, math.pi / 4, math.pi / 2])
def test_schwarz_sampling_at_acceptance_size(theta):
    report = lifting.schwarz_sampling(theta, 10_000, seed=0)
    assert report.samples == 10_000
    assert report.violations == 0
    assert report.refined_violations == 0


def test_schwarz_sampling_is_seeded():
    assert lifting.schwarz_sampling(0.7, 500, seed=1) == lifting.schwarz_sampling(0.7, 500, seed=1)
    with pytest.raises(DomainError):
        lifting.schwarz_sampling(math.pi, 10)
