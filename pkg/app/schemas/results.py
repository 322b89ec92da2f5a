# app/schemas/results.py
"""
JSON shapes of everything the command line prints. Complex numbers are [re, im]
pairs and critical indices are 1-based.
"""
from __future__ import annotations

import math
from typing import Any, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

ComplexPair = tuple[float, float]


def pair(z) -> ComplexPair:
    z = complex(z)
    return (float(z.real), float(z.imag))


def pairs(values: Sequence) -> list[ComplexPair]:
    return [pair(z) for z in np.asarray(values, dtype=complex).ravel()]


def _finite(x: Optional[float]) -> Optional[float]:
    if x is None or not math.isfinite(x):
        return None
    return float(x)


class _Out(BaseModel):
    model_config = ConfigDict(frozen=True)


class RelationOut(_Out):
    j: int
    kind: str
    q: int
    mu: Optional[int] = None
    l: Optional[int] = None  # noqa: E741


class SolveOut(_Out):
    q: int
    c: float
    residual: float
    relation: Optional[RelationOut] = None


class EnumerateOut(_Out):
    parameters: list[SolveOut]


class OrbitOut(_Out):
    family: str
    theta: list[float]
    critical_values: list[ComplexPair]
    points: list[list[ComplexPair]]
    relations: list[RelationOut]
    gP: list[ComplexPair]
    near_parabolic: bool


class CertificateChecks(_Out):
    drho_identity: Optional[float]
    prop43_rootsets: Optional[float]
    closed_form_detpoly: Optional[float]


class CertificateOut(_Out):
    family: str
    theta: list[float]
    relations: list[RelationOut]
    det_DR: ComplexPair
    derivative_product: ComplexPair
    Q: float
    Q_complex: ComplexPair
    det_D1: ComplexPair
    positive: bool
    spectral_radius: float
    eigenvalues: list[ComplexPair]
    exceptional_rhos: list[ComplexPair]
    det_poly: list[ComplexPair]
    rank_DR: int
    unit_eigenvalue: bool
    unit_rank_consistent: Optional[bool]
    rho1_exceptional: bool
    half_in_spectrum: Optional[bool]
    critical_sum: Optional[ComplexPair]
    near_parabolic: bool
    checks: CertificateChecks
    labelled_identity: Optional[float] = None


class SpectrumOut(_Out):
    index_kind: str
    dimension: int
    eigenvalues: list[ComplexPair]
    spectral_radius: float
    det_poly: list[ComplexPair]


class ViolationOut(_Out):
    c: float
    c_next: float
    reason: str


class ScanOut(_Out):
    grid_points: int
    escaped: int
    direction: str
    violations: list[ViolationOut]


class LapOut(_Out):
    c: Any
    laps: list[int]
    entropy_estimate: float
    fit_error: float
    submultiplicative: bool
    interval: tuple[float, float]


class SectorOut(_Out):
    theta: float
    regular: bool
    worst_angle: float
    A1_ok: list[bool]


class LiftOut(_Out):
    M: list[float]
    d: list[float]
    ratios: list[Optional[float]]
    radius: list[float]
    bounded: bool
    rate: Optional[float]
    spectral_radius: Optional[float] = None
    failed_at: Optional[int] = None
    sectors: Optional[list[SectorOut]] = None


class SchwarzOut(_Out):
    theta: float
    samples: int
    violations: int
    refined_checked: int
    refined_violations: int


class CrossingOut(_Out):
    index: int
    i: int
    a: float
    b: float
    transversality: Optional[float]


class BoneOut(_Out):
    q: int
    n_points: int
    stop_reason: str
    max_residual: float
    crossings: list[CrossingOut]
    at_most_one_crossing: bool
    orientation_continuous: bool
    ordering_changes: list[int]
    near_parabolic: list[int]


class EntropyAlongOut(_Out):
    q: int
    monotone: bool
    opposite: bool
    escaped: int
    segments: list[tuple[int, int, str]]


# =========================
# builders
# =========================
def relation_out(rel) -> RelationOut:
    return RelationOut(**rel.to_dict())


def orbit_out(orbit, relations) -> OrbitOut:
    return OrbitOut(
        family=orbit.family.kind,
        theta=[float(complex(t).real) for t in orbit.theta],
        critical_values=pairs(orbit.critical_values()),
        points=[pairs(p) for p in orbit.points],
        relations=[relation_out(r) for r in relations],
        gP=pairs(orbit.gP),
        near_parabolic=orbit.near_parabolic,
    )


def solve_out(q: int, c: float, residual: float, relations) -> SolveOut:
    """`relations` are those detected on the critical orbit at c; the first one is reported."""
    return SolveOut(q=q, c=c, residual=float(residual), relation=relation_out(relations[0]) if relations else None)


def certificate_out(cert) -> CertificateOut:
    res = cert.identity_residuals
    return CertificateOut(
        family=cert.family,
        theta=[float(complex(t).real) for t in cert.theta],
        relations=[relation_out(r) for r in cert.relations],
        det_DR=pair(cert.det_DR),
        derivative_product=pair(cert.derivative_product),
        Q=float(cert.Q.real),
        Q_complex=pair(cert.Q),
        det_D1=pair(cert.det_D1),
        positive=cert.positive,
        spectral_radius=float(cert.spectral_radius),
        eigenvalues=pairs(cert.eigenvalues),
        exceptional_rhos=pairs(cert.exceptional_rhos),
        det_poly=pairs(cert.det_poly),
        rank_DR=cert.rank_DR,
        unit_eigenvalue=cert.unit_eigenvalue,
        unit_rank_consistent=cert.unit_rank_consistent,
        rho1_exceptional=cert.rho1_exceptional,
        half_in_spectrum=cert.half_in_spectrum,
        critical_sum=None if cert.critical_sum is None else pair(cert.critical_sum),
        near_parabolic=cert.near_parabolic,
        checks=CertificateChecks(
            drho_identity=_finite(res.get("drho_identity")),
            prop43_rootsets=_finite(res.get("prop43_rootsets")),
            closed_form_detpoly=_finite(res.get("closed_form_detpoly")),
        ),
        labelled_identity=_finite(res.get("labelled_identity")),
    )


def spectrum_out(matrix, eigenvalues, radius, coeffs) -> SpectrumOut:
    return SpectrumOut(
        index_kind=matrix.index_kind,
        dimension=matrix.dimension,
        eigenvalues=pairs(eigenvalues),
        spectral_radius=float(radius),
        det_poly=pairs(coeffs),
    )


def scan_out(report) -> ScanOut:
    return ScanOut(
        grid_points=len(report.rows),
        escaped=int(report.meta.get("escaped", 0)),
        direction=report.direction,
        violations=[ViolationOut(c=v.c, c_next=v.c_next, reason=v.reason) for v in report.violations],
    )


def laps_out(c, table) -> LapOut:
    return LapOut(
        c=c,
        laps=list(table.laps),
        entropy_estimate=table.entropy_estimate,
        fit_error=table.fit_error,
        submultiplicative=table.submultiplicative(),
        interval=(float(table.interval[0]), float(table.interval[1])),
    )


def lift_out(diag, spectral_radius: Optional[float] = None, failed_at: Optional[int] = None, sectors=None) -> LiftOut:
    return LiftOut(
        M=[float(x) for x in diag.M],
        d=[float(x) for x in diag.d],
        ratios=[_finite(r) for r in diag.ratios],
        radius=[float(r) for r in diag.radius],
        bounded=diag.bounded,
        rate=_finite(diag.rate),
        spectral_radius=_finite(spectral_radius),
        failed_at=failed_at,
        sectors=None if sectors is None else [sector_out(s) for s in sectors],
    )


def sector_out(report) -> SectorOut:
    return SectorOut(theta=report.theta, regular=report.regular, worst_angle=report.worst_angle, A1_ok=list(report.A1_ok))


def schwarz_out(theta: float, report) -> SchwarzOut:
    return SchwarzOut(
        theta=theta,
        samples=report.samples,
        violations=report.violations,
        refined_checked=report.refined_checked,
        refined_violations=report.refined_violations,
    )


def bone_out(curve, transversality: dict[int, Optional[float]], ordering: list[int]) -> BoneOut:
    crossings = curve.crossings()
    return BoneOut(
        q=curve.q,
        n_points=len(curve.points),
        stop_reason=curve.stop_reason,
        max_residual=float(np.max(curve.residuals())) if len(curve.points) else 0.0,
        crossings=[
            CrossingOut(index=ev.index, i=ev.i, a=ev.point[0], b=ev.point[1], transversality=_finite(transversality.get(ev.index)))
            for ev in crossings
        ],
        at_most_one_crossing=len(crossings) <= 1,
        orientation_continuous=curve.orientation_continuous(),
        ordering_changes=list(ordering),
        near_parabolic=[ev.index for ev in curve.events if ev.type == "near_parabolic"],
    )


def entropy_along_out(q: int, report) -> EntropyAlongOut:
    return EntropyAlongOut(
        q=q,
        monotone=report.monotone,
        opposite=report.opposite,
        escaped=report.escaped,
        segments=list(report.segments),
    )
