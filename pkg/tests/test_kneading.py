# tests/test_kneading.py
import math

import pytest

from app.core.errors import DomainError, Escape, Incomparable
from app.schemas.family import CubicSpec
from app.services import families, kneading
from app.services.kneading import KneadingSequence, Ordering

TOL = 1e-9


def test_kneading_of_chebyshev_quadratic(quad):
    k = kneading.kneading(quad, -2.0, 6)
    assert k.symbols == (-1, 1, 1, 1, 1, 1)
    assert not k.terminated
    assert k.as_text() == "-1,+1,+1,+1,+1,+1"


def test_kneading_terminates_at_superstable_parameter(quad):
    k = kneading.kneading(quad, -1.0, 10)
    assert k.symbols == (-1, 0)
    assert k.terminated


def test_kneading_escape(quad):
    with pytest.raises(Escape):
        kneading.kneading(quad, 1.0, 10)


def test_kneading_rejects_bimodal_families():
    with pytest.raises(DomainError):
        kneading.kneading(CubicSpec(), (0.5, 0.1), 5)


def test_compare_uses_the_twisted_order(quad):
    k_low = kneading.kneading(quad, -1.9, 40)
    k_high = kneading.kneading(quad, -1.5, 40)
    assert kneading.compare(k_low, k_high) is Ordering.LESS
    assert kneading.compare(k_high, k_low) is Ordering.GREATER
    assert kneading.compare(k_low, k_low) is Ordering.EQUAL


def test_compare_terminated_prefix_is_incomparable():
    short = KneadingSequence((-1, 0), True)
    longer = KneadingSequence((-1, 0, 1), False)
    with pytest.raises(Incomparable):
        kneading.compare(short, longer)
    with pytest.raises(DomainError):
        kneading.compare(KneadingSequence((), False), longer)


def test_lap_numbers_full_quadratic(quad):
    table = kneading.lap_numbers(quad, -2.0, 10)
    assert list(table.laps) == [2**n for n in range(1, 11)]
    assert table.entropy_estimate == pytest.approx(math.log(2), abs=TOL)
    assert table.interval == (pytest.approx(-2.0), pytest.approx(2.0))
    assert table.submultiplicative()


def test_lap_numbers_zero_entropy(quad):
    table = kneading.lap_numbers(quad, -1.0, 8)
    assert set(table.laps) == {1}
    assert table.entropy_estimate == pytest.approx(0.0, abs=TOL)


def test_lap_numbers_bimodal_chebyshev_cubic():
    table = kneading.lap_numbers(CubicSpec(), (1.0, 0.0), 8)
    assert list(table.laps) == [3**n for n in range(1, 9)]
    assert table.entropy_estimate == pytest.approx(math.log(3), abs=TOL)


def test_lap_numbers_bounds(quad):
    with pytest.raises(DomainError):
        kneading.lap_numbers(quad, -2.0, 25)
    with pytest.raises(DomainError):
        kneading.lap_numbers(quad, -2.0, 0)


def test_is_submultiplicative():
    assert kneading.is_submultiplicative([2, 4, 8])
    assert not kneading.is_submultiplicative([2, 5])


def test_monotonicity_scan_quadratic(quad):
    report = kneading.monotonicity_scan(quad, -2.0, 0.25, 400, 40, n_laps=6)
    assert report.violations == []
    assert report.direction == "increasing"
    assert report.meta["escaped"] == 0
    laps = [row.lambda_n for row in report.rows]
    # lap numbers do not grow with c for x^2 + c
    assert all(b <= a for a, b in zip(laps[:-1], laps[1:]))
    assert laps[0] == 64 and laps[-1] == 1


def test_monotonicity_scan_logistic_is_decreasing(logistic):
    report = kneading.monotonicity_scan(logistic, 0.75, 1.0, 300, 40)
    assert report.direction == "decreasing"
    assert report.violations == []


def test_monotonicity_scan_counts_escapes(quad):
    report = kneading.monotonicity_scan(quad, 0.0, 1.0, 11, 30)
    assert report.meta["escaped"] > 0
    assert all(row.kneading is None for row in report.rows if row.escaped)


def test_monotonicity_scan_rejects_empty_range(quad):
    with pytest.raises(DomainError):
        kneading.monotonicity_scan(quad, 0.0, 0.0, 10, 10)


@pytest.mark.slow
def test_monotonicity_scan_parallel_matches_serial(quad):
    serial = kneading.monotonicity_scan(quad, -2.0, 0.25, 2000, 60)
    parallel = kneading.monotonicity_scan(quad, -2.0, 0.25, 2000, 60, jobs=2)
    assert serial.violations == parallel.violations == []
    assert [r.kneading for r in serial.rows] == [r.kneading for r in parallel.rows]


def test_itinerary_signs_are_exact(quad):
    fam = families.family_for(quad)
    assert kneading.itinerary(fam, fam.theta(0.0), 3) == (0, 0, 0)
    # a band of ZERO_TOL * bound would read these as zeros
    assert kneading.itinerary(fam, fam.theta(-1e-12), 2) == (-1, -1)
    assert kneading.itinerary(fam, fam.theta(-1e-12), 2, zero_tol=1e-11) == (0, 0)
