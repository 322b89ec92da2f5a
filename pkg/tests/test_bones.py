# tests/test_bones.py
import numpy as np
import pytest

from app.core.errors import DomainError, NearParabolic, RankDeficient, SeedNotOnCurve
from app.services import bones

CURVE_TOL = 1e-8
BOX = ((0.05, 2.0), (-3.0, 3.0))
# f(a) = -a and f^2(-a) = a on the period-3 bone: b = 2a^3 - a with
# y^3 - 3a^2 y + 2a^3 - 2a = 0 for y = 4a^3 - a
CROSSING_3 = (0.84455, 0.36025)


@pytest.fixture(scope="module")
def fixed_point_bone():
    return bones.trace_component(1, (1.0, 3.0), step=0.05, n_steps=600, bounds=((0.1, 2.0), (-1.0, 20.0)))


@pytest.fixture(scope="module")
def period_three_bone():
    seeds = bones.find_bone_seeds(3, (0.8446, 0.8446), (0.30, 0.42), (1, 121))
    seed = min(seeds, key=lambda s: np.hypot(s[0] - CROSSING_3[0], s[1] - CROSSING_3[1]))
    assert np.hypot(seed[0] - CROSSING_3[0], seed[1] - CROSSING_3[1]) < 0.01
    return bones.trace_component(3, seed, step=0.005, n_steps=100, bounds=BOX)


def test_residual_of_fixed_point_relation():
    # f(a) = a  <=>  b = a + 2a^3
    assert bones.residual(1, 1.0, 3.0) == 0.0
    assert bones.residual(1, 1.0, 2.0) == pytest.approx(-1.0)


def test_tangent_orientation_on_fixed_point_bone():
    orient = bones.tangent_orientation(None, 1, (1.0, 3.0))
    assert np.linalg.norm(orient.E_w) == pytest.approx(1.0)
    assert np.linalg.norm(orient.E_ab) == pytest.approx(1.0)
    # det[column, E] > 0 and E is tangent to the curve
    assert orient.column[0] * orient.E_w[1] - orient.column[1] * orient.E_w[0] > 0.0
    h = 1e-6
    a, b = 1.0 + h * orient.E_ab[0], 3.0 + h * orient.E_ab[1]
    a2, b2 = 1.0 - h * orient.E_ab[0], 3.0 - h * orient.E_ab[1]
    assert abs(bones.residual(1, a, b) - bones.residual(1, a2, b2)) / (2 * h) < 1e-6
    # a grows along E on the fixed-point bone
    assert orient.E_ab[0] > 0.0


def test_tangent_orientation_is_singular_at_a_zero():
    with pytest.raises(RankDeficient):
        bones.tangent_orientation(None, 2, (0.0, 0.5))


def test_trace_rejects_bad_seeds():
    with pytest.raises(SeedNotOnCurve):
        bones.trace_bone(1, (-1.0, 0.0))
    with pytest.raises(DomainError):
        bones.trace_bone(0, (1.0, 3.0))


def test_fixed_point_bone_stays_on_the_curve(fixed_point_bone):
    pts = fixed_point_bone.points
    assert np.all(np.abs(pts[:, 1] - pts[:, 0] - 2 * pts[:, 0] ** 3) <= 1e-6)
    assert pts[:, 0].min() < 0.2 and pts[:, 0].max() > 1.9
    assert fixed_point_bone.stop_reason == "bounds/bounds"
    assert fixed_point_bone.crossings() == []
    assert fixed_point_bone.orientation_continuous()


def test_fixed_point_bone_is_ordered_by_a(fixed_point_bone):
    a = fixed_point_bone.points[:, 0]
    assert np.all(np.diff(a) > 0.0)
    # tangents continue the seed orientation through the joined polyline
    assert np.all(fixed_point_bone.tangents[:, 0] > 0.0)


def test_trace_bone_directions_are_opposite():
    fwd = bones.trace_bone(1, (1.0, 3.0), step=0.02, n_steps=5)
    back = bones.trace_bone(1, (1.0, 3.0), step=0.02, n_steps=5, direction=-1)
    assert fwd.points[-1][0] > 1.0 > back.points[-1][0]
    assert fwd.stop_reason == back.stop_reason == "n_steps"
    assert len(fwd.points) == 6


def test_period_three_bone_has_one_crossing(period_three_bone):
    curve = period_three_bone
    assert np.all(curve.residuals() <= CURVE_TOL * (1.0 + np.abs(curve.points[:, 1])))
    crossings = curve.crossings()
    assert len(crossings) == 1
    event = crossings[0]
    assert event.i == 1
    assert event.point == (pytest.approx(CROSSING_3[0], abs=2e-3), pytest.approx(CROSSING_3[1], abs=2e-3))
    a, b = event.point
    # f(a) = -a at the refined crossing
    assert abs(a**3 - 3 * a**3 + b + a) < 1e-7


def test_directional_transversality_is_positive(period_three_bone):
    event = period_three_bone.crossings()[0]
    value = bones.directional_transversality(None, period_three_bone, event)
    assert value > 0.0
    assert bones.directional_transversality(None, period_three_bone, event, reverse=True) == pytest.approx(-value)


def test_directional_transversality_needs_a_crossing(period_three_bone):
    with pytest.raises(DomainError):
        bones.directional_transversality(None, period_three_bone, bones.BoneEvent(index=0, type="near_parabolic"))


def test_period_three_orientation_and_ordering(period_three_bone):
    assert period_three_bone.orientation_continuous()
    assert bones.ordering_changes(None, period_three_bone) == []


def test_find_bone_seeds_are_on_the_curve():
    seeds = bones.find_bone_seeds(2, (0.5, 1.0), (-1.0, 1.0), (6, 41))
    assert seeds
    for a, b in seeds:
        assert abs(bones.residual(2, a, b)) < 1e-9


def test_entropy_vanishes_along_attracting_fixed_point_segment():
    curve = bones.trace_bone(1, (0.3, 0.3 + 2 * 0.3**3), step=0.02, n_steps=10)
    report = bones.entropy_along(None, curve, 8)
    assert report.escaped == 0
    assert all(v == pytest.approx(0.0, abs=1e-9) for v in report.values)
    assert report.segments == [(0, len(curve.points) - 1, "flat")]
    assert report.monotone and report.opposite
    with_values = bones.with_entropy(curve, report)
    assert with_values.lap_entropy == report.values


def test_entropy_along_period_three_bone(period_three_bone):
    report = bones.entropy_along(None, period_three_bone, 8, stride=10)
    assert len(report.values) == len(period_three_bone.points)
    assert len(report.segments) == 2
    assert report.segments[0][0] == 0
    assert report.segments[-1][1] == len(period_three_bone.points) - 1
    measured = [v for v in report.values if v is not None]
    assert all(v >= 0.0 for v in measured)


def test_detect_crossings_recomputes_trace_events(period_three_bone, fixed_point_bone):
    found = bones.detect_crossings(None, period_three_bone)
    assert [(ev.index, ev.i) for ev in found] == [(ev.index, ev.i) for ev in period_three_bone.crossings()]
    assert bones.detect_crossings(None, fixed_point_bone) == []


def test_trace_bone_starts_from_an_exact_seed():
    curve = bones.trace_bone(1, (1.0, 3.0), step=0.02, n_steps=3)
    assert curve.points[0] == pytest.approx([1.0, 3.0], abs=1e-12)
    assert len(curve.points) == 4


def test_trace_bone_projects_a_nearby_seed_along_the_gradient():
    curve = bones.trace_bone(1, (1.0, 3.001), step=0.02, n_steps=3)
    a, b = curve.points[0]
    assert abs(bones.residual(1, a, b)) <= CURVE_TOL * (1.0 + abs(b))
    # one Newton step along grad R = (-7, 1) from R = 1e-3
    assert (a, b) == (pytest.approx(1.00014, abs=1e-5), pytest.approx(3.00098, abs=1e-5))


def test_directional_transversality_closed_form_at_period_two_crossing():
    # a = 1/sqrt(2), b = 0: f(a) = -a and f(-a) = a, with the relations of a
    # and -a having w-gradients (5/6, 1/6) and (1/6, 5/6)
    point = (np.sqrt(0.5), 0.0)
    unit = np.array([[1.0, 0.0]])
    curve = bones.BoneCurve(q=2, points=np.array([point]), tangents=unit, E_w=unit, E_ab=unit, events=[], stop_reason="n_steps")
    event = bones.BoneEvent(index=0, type="crossing", i=1, point=point)
    value = bones.directional_transversality(None, curve, event)
    assert value == pytest.approx(4.0 / np.sqrt(26.0), rel=1e-5)


def test_period_three_crossing_value(period_three_bone):
    event = period_three_bone.crossings()[0]
    assert bones.directional_transversality(None, period_three_bone, event) == pytest.approx(0.8018, abs=2e-3)


@pytest.mark.slow
def test_directional_transversality_is_positive_at_every_period_three_crossing():
    values = []
    for seed in bones.find_bone_seeds(3, (0.2, 1.2), (-1.0, 1.0), (6, 41)):
        curve = bones.trace_component(3, seed, step=0.01, n_steps=300, bounds=BOX)
        for event in curve.crossings():
            try:
                values.append(bones.directional_transversality(None, curve, event))
            except NearParabolic:
                continue
    assert values
    assert all(v > 0.0 for v in values)
