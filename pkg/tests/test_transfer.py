# tests/test_transfer.py
import math

import numpy as np
import pytest

from app.core.errors import DegenerateChart, DomainError
from app.schemas.family import FlatAdditiveSpec, parse_family
from app.services import families, orbits, transfer
from app.services.polynomial import eval_ascending
from tests.conftest import C_AIRPLANE

TOL = 1e-10
ID_TOL = 1e-8


def test_transfer_operator_at_basilica(basilica):
    orbit, relations = basilica
    A = transfer.assemble_A(orbit, relations)
    assert A.index_kind == "set" and A.dimension == 2
    np.testing.assert_allclose(A.entries, [[0.5, -0.5], [0.0, 0.0]], atol=TOL)
    np.testing.assert_allclose(transfer.det_poly(A), [1.0, -0.5], atol=TOL)
    eig = transfer.spectrum(A)
    np.testing.assert_allclose(eig, [0.5, 0.0], atol=TOL)
    assert transfer.spectral_radius(eig) == pytest.approx(0.5)


def test_labelled_operator_at_basilica(basilica):
    orbit, relations = basilica
    AJ = transfer.assemble_AJ(orbit, relations)
    assert AJ.index == ((0, 0), (1, 0))
    np.testing.assert_allclose(AJ.entries, [[0.0, 0.0], [-0.5, 0.5]], atol=TOL)
    np.testing.assert_allclose(transfer.identify(AJ, orbit), transfer.assemble_A(orbit, relations).entries, atol=TOL)


def test_transfer_operator_at_chebyshev(chebyshev):
    orbit, relations = chebyshev
    A = transfer.assemble_A(orbit, relations)
    np.testing.assert_allclose(A.entries, [[0.25, -0.25], [-0.25, 0.25]], atol=TOL)
    np.testing.assert_allclose(transfer.det_poly(A), [1.0, -0.5], atol=TOL)
    assert transfer.label_set(orbit, relations) == [(1, 0), (2, 0)]


@pytest.mark.parametrize("c", [-1.0, -2.0, C_AIRPLANE])
def test_labelled_determinant_equals_det_D(quad, c):
    orbit = orbits.critical_orbit(quad, c)
    relations = orbits.detect_relations(orbit)
    coeffs = transfer.det_poly(transfer.assemble_AJ(orbit, relations))
    for m in range(40):
        rho = 1.3 * np.exp(2j * np.pi * (m + 0.25) / 40)
        lhs = eval_ascending(coeffs, rho)
        rhs = complex(np.linalg.det(transfer.assemble_D(orbit, relations, rho)))
        assert abs(lhs - rhs) <= ID_TOL * (1.0 + abs(rhs))


def test_jacobian_of_relations(basilica, chebyshev, quad):
    for (orbit, relations), expected in ((basilica, -1.0), (chebyshev, -8.0)):
        J = transfer.jacobian_R(quad, orbit.critical_values(), relations)
        assert J.shape == (1, 1)
        assert J[0, 0] == pytest.approx(expected, rel=1e-9)


def test_jacobian_requires_one_relation_per_value(cubic):
    orbit = orbits.critical_orbit(cubic, (1.0, 0.0))
    relations = orbits.detect_relations(orbit)
    with pytest.raises(DomainError):
        transfer.jacobian_R(cubic, orbit.critical_values(), relations[:1])


def test_exceptional_values_of_chebyshev(chebyshev, basilica):
    orbit, relations = chebyshev
    constraints = transfer.exceptional_values(orbit, relations)
    assert len(constraints) == 1
    assert constraints[0].exponent == 1
    assert constraints[0].multiplier == pytest.approx(4.0)
    assert transfer.is_exceptional(constraints, 4.0)
    assert not transfer.is_exceptional(constraints, 1.0)
    assert transfer.exceptional_values(*basilica) == []


@pytest.mark.parametrize("c, q", [(-1.0, 2), (-2.0, 3)])
def test_certificate_of_quadratic_parameters(quad, c, q):
    cert = transfer.certify(quad, c)
    assert cert.relations[0].q == q
    assert cert.Q.real == pytest.approx(0.5, abs=ID_TOL)
    assert cert.det_D1.real == pytest.approx(0.5, abs=ID_TOL)
    assert cert.positive
    assert cert.spectral_radius == pytest.approx(0.5, abs=ID_TOL)
    assert cert.half_in_spectrum
    assert cert.rank_DR == 1
    assert not cert.unit_eigenvalue
    assert cert.unit_rank_consistent
    assert cert.identity_residuals["drho_identity"] <= ID_TOL
    assert cert.identity_residuals["labelled_identity"] <= ID_TOL
    assert cert.identity_residuals["prop43_rootsets"] <= 1e-6


def test_certificate_values_at_chebyshev(quad):
    cert = transfer.certify(quad, -2.0)
    assert cert.det_DR.real == pytest.approx(-8.0, rel=1e-9)
    assert cert.derivative_product.real == pytest.approx(-16.0, rel=1e-12)
    assert cert.exceptional_rhos == [pytest.approx(4.0)]
    assert not cert.rho1_exceptional
    assert cert.identity_residuals["closed_form_detpoly"] is None


def test_closed_form_of_det_poly(quad):
    cert = transfer.certify(quad, C_AIRPLANE)
    assert cert.identity_residuals["closed_form_detpoly"] <= TOL
    assert cert.half_in_spectrum
    assert cert.critical_sum.real > 0.0


def test_degenerate_certificate_at_parabolic_flat_parameter(flat_boundary):
    cert = transfer.certify(flat_boundary, -1.0)
    assert abs(cert.Q) < 1e-6
    assert abs(cert.det_D1) < 1e-6
    assert not cert.positive
    assert cert.unit_eigenvalue
    assert cert.spectral_radius == pytest.approx(1.0, abs=1e-6)


def test_robust_flat_parameter_is_positively_transversal(flat_robust):
    cert = transfer.certify(flat_robust, families.chebyshev_parameter(1.0, 8.0))
    assert cert.positive
    assert cert.spectral_radius < 1.0


# superstable parameters of each minimal period in a full unimodal family
FULL_FAMILY_COUNTS = {1: 1, 2: 1, 3: 1, 4: 2, 5: 3, 6: 5, 7: 9, 8: 16}


def _check_flat_enumeration(q_max):
    spec = FlatAdditiveSpec(ell=1.0, b=6.0)
    assert families.check_separation(spec).robust
    beta = families.flat_beta(1.0, 6.0)
    found = orbits.enumerate_superstable(spec, (-beta, 0.0), q_max)
    assert [q for q, c in found if c == pytest.approx(0.0, abs=TOL)] == [1]
    assert (1, 0.0) in found
    assert [c for q, c in found if q == 2] == [pytest.approx(-0.355, abs=1e-3)]
    counts = {q: sum(qq == q for qq, _ in found) for q in range(1, q_max + 1)}
    assert counts == {q: FULL_FAMILY_COUNTS[q] for q in range(1, q_max + 1)}
    for q, c in found:
        cert = transfer.certify(spec, c)
        assert cert.positive, (q, c)
        assert cert.spectral_radius < 1.0, (q, c)


def test_flat_family_above_threshold():
    _check_flat_enumeration(5)


@pytest.mark.slow
def test_flat_family_enumeration_up_to_period_eight():
    _check_flat_enumeration(8)


def test_power_family_certificate(power8):
    c = orbits.solve_superstable(power8, 3, [-1.1, -1.09])
    cert = transfer.certify(power8, c)
    assert cert.positive
    assert cert.spectral_radius < 1.0
    assert cert.critical_sum.real > 0.0


def test_reparametrization_identity():
    affine = transfer.reparametrize_check(-1.0, "affine")
    assert affine.residual <= ID_TOL
    assert affine.det_D1.real == pytest.approx(0.5, abs=ID_TOL)
    assert affine.equivalence_holds

    critical = transfer.reparametrize_check(-1.0, "quadratic-critical")
    assert critical.residual <= ID_TOL
    assert abs(critical.dnu_v1) == 0.0
    assert abs(critical.det_D1) <= ID_TOL
    assert critical.equivalence_holds


def test_reparametrization_at_period_three():
    report = transfer.reparametrize_check(C_AIRPLANE, "affine")
    assert report.residual <= ID_TOL
    assert report.spectral_radius < 1.0 and report.det_D1.real > 0.0


def test_reparametrization_errors():
    with pytest.raises(DegenerateChart):
        transfer.reparametrize_check(0.0)
    with pytest.raises(DomainError):
        transfer.reparametrize_check(-1.0, "cubic")


def test_superstable_quadratic_parameters_are_positively_transversal(quad):
    found = orbits.enumerate_superstable(quad, (-2.0, 0.25), 8)
    assert len(found) >= 20
    for q, c in found:
        cert = transfer.certify(quad, c)
        assert cert.spectral_radius < 1.0, (q, c)
        assert cert.positive, (q, c)
        assert cert.identity_residuals["drho_identity"] <= ID_TOL, (q, c)
        assert cert.identity_residuals["closed_form_detpoly"] <= TOL * max(1.0, math.fabs(c)), (q, c)
        if q >= 2:
            assert cert.half_in_spectrum, (q, c)


@pytest.mark.slow
def test_superstable_quadratic_parameters_up_to_period_twelve(quad):
    for q, c in orbits.enumerate_superstable(quad, (-2.0, 0.25), 12):
        cert = transfer.certify(quad, c)
        assert cert.spectral_radius < 1.0, (q, c)
        assert cert.positive, (q, c)


@pytest.mark.slow
@pytest.mark.parametrize(
    "raw, q, bracket",
    [
        ({"family": "monic_additive", "d": 2}, 3, (-1.8, -1.7)),
        ({"family": "power_additive", "ell_minus": 8.0, "ell_plus": 8.0}, 3, (-1.1, -1.09)),
        ({"family": "flat_additive", "ell": 1.0, "b": 6.0}, 2, (-0.4, -0.3)),
        ({"family": "multiplicative", "base": "quad4x1mx"}, 2, (0.8, 0.82)),
    ],
)
def test_labelled_determinant_matches_det_D_on_the_disk(raw, q, bracket):
    spec = parse_family(raw)
    c = orbits.solve_superstable(spec, q, list(bracket))
    orbit = orbits.critical_orbit(spec, c)
    relations = orbits.detect_relations(orbit)
    coeffs = transfer.det_poly(transfer.assemble_AJ(orbit, relations))
    rng = np.random.default_rng(7)
    rhos = 2.0 * np.sqrt(rng.random(1000)) * np.exp(2j * np.pi * rng.random(1000))
    for rho in rhos:
        rhs = complex(np.linalg.det(transfer.assemble_D(orbit, relations, rho)))
        assert abs(eval_ascending(coeffs, rho) - rhs) <= ID_TOL * (1.0 + abs(rhs)), rho
