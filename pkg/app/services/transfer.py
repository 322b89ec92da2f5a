"""
Transfer operator A on g(P), its labelled variant A_J, the matrix D(rho), and
the transversality certificate built from them.

Row conventions (v is the motion of g(P), v(c_{1,k}) the motion of the
critical values):

    v_hat(c_{0,j}) = sum_k p_{j,k} v(c_{1,k})
    v_hat(x)       = (v(g(x)) - sum_k L_k(x) v(c_{1,k})) / Dg(x)    x not in P0
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from app.core.config import settings
from app.core.errors import DegenerateChart, DivideByZero, DomainError
from app.services.families import (
    Family,
    MonicAdditive,
    Reparametrization,
    ReparametrizedQuadratic,
    family_for,
)
from app.services.orbits import CriticalRelation, MarkedOrbit, critical_orbit, detect_relations
from app.services.polynomial import (
    aberth_roots,
    check_overflow,
    eval_ascending,
    faddeev_leverrier,
    interpolate_on_circle,
    trim_trailing,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TransferMatrix:
    entries: np.ndarray
    index_kind: Literal["set", "label"]
    # gP values (set-indexed) or (i, j) labels (label-indexed)
    index: tuple
    meta: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.entries.shape[0]


def _require_full(orbit: MarkedOrbit) -> None:
    if not orbit.fully_marked:
        raise DomainError("transfer operators need every critical point marked", marked=list(orbit.critical))


def _meta(orbit: MarkedOrbit) -> dict:
    return {"family": orbit.family.kind, "theta": list(orbit.theta)}


def _first_value_label(orbit: MarkedOrbit, relations: Sequence[CriticalRelation]) -> list[int]:
    """gP position of c_{1,k} for every k."""
    return [orbit.index[(1, k)] for k in range(orbit.nu)]


def assemble_A(orbit: MarkedOrbit, relations: Sequence[CriticalRelation]) -> TransferMatrix:
    _require_full(orbit)
    by_j = {rel.j: rel for rel in relations}
    n = len(orbit.gP)
    ones = _first_value_label(orbit, relations)
    P = orbit.family.marked_jacobian(orbit.theta)
    A = np.zeros((n, n), dtype=complex)

    # one representative label (i, j) with 1 <= i < q_j per non-marked element
    rep: dict[int, tuple[int, int]] = {}
    for (i, j), pos in sorted(orbit.index.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        if 1 <= i < by_j[j].q and pos not in rep:
            rep[pos] = (i, j)

    for pos in range(n):
        if pos in orbit.marked:
            j = orbit.marked[pos]
            for k in range(orbit.nu):
                A[pos, ones[k]] += P[j, k]
            continue
        i, j = rep[pos]
        d = orbit.D[j][i]
        if d == 0:
            raise DivideByZero("Dg vanishes at a point of g(P) outside P0", i=i, j=j + 1)
        A[pos, orbit.index[(i + 1, j)]] += 1.0 / d
        for k in range(orbit.nu):
            A[pos, ones[k]] -= orbit.L[j][i, k] / d
    return TransferMatrix(entries=A, index_kind="set", index=tuple(orbit.gP), meta=_meta(orbit))


def label_set(orbit: MarkedOrbit, relations: Sequence[CriticalRelation]) -> list[tuple[int, int]]:
    """J: (0, j) when j = mu(j') for some periodic j', and (i, j) for 1 <= i < q_j."""
    targets = {rel.mu for rel in relations if rel.periodic}
    out: list[tuple[int, int]] = []
    for rel in sorted(relations, key=lambda r: r.j):
        if rel.j in targets:
            out.append((0, rel.j))
        out.extend((i, rel.j) for i in range(1, rel.q))
    return out


def _resolve(by_j: dict[int, CriticalRelation], i: int, j: int) -> tuple[int, int]:
    rel = by_j[j]
    if i < rel.q:
        return (i, j)
    return (0, rel.mu) if rel.periodic else (rel.l, j)


def assemble_AJ(orbit: MarkedOrbit, relations: Sequence[CriticalRelation]) -> TransferMatrix:
    _require_full(orbit)
    by_j = {rel.j: rel for rel in relations}
    J = label_set(orbit, relations)
    pos = {lab: n for n, lab in enumerate(J)}
    ones = [pos[_resolve(by_j, 1, k)] for k in range(orbit.nu)]
    P = orbit.family.marked_jacobian(orbit.theta)
    A = np.zeros((len(J), len(J)), dtype=complex)
    for row, (i, j) in enumerate(J):
        if i == 0:
            for k in range(orbit.nu):
                A[row, ones[k]] += P[j, k]
            continue
        d = orbit.D[j][i]
        if d == 0:
            raise DivideByZero("Dg vanishes at a labelled point", i=i, j=j + 1)
        A[row, pos[_resolve(by_j, i + 1, j)]] += 1.0 / d
        for k in range(orbit.nu):
            A[row, ones[k]] -= orbit.L[j][i, k] / d
    return TransferMatrix(entries=A, index_kind="label", index=tuple(J), meta=_meta(orbit))


def identify(aj: TransferMatrix, orbit: MarkedOrbit) -> np.ndarray | None:
    """A_J re-indexed by g(P) when its labels are in bijection with g(P), else None."""
    where: list[int] = []
    for i, j in aj.index:
        if i == 0:
            hits = [p for p, m in orbit.marked.items() if m == j]
            if not hits:
                return None
            where.append(hits[0])
        else:
            where.append(orbit.index[(i, j)])
    n = len(orbit.gP)
    if len(where) != n or len(set(where)) != n:
        return None
    out = np.zeros((n, n), dtype=complex)
    for r, pr in enumerate(where):
        for c, pc in enumerate(where):
            out[pr, pc] = aj.entries[r, c]
    return out


def _cal_L(orbit: MarkedOrbit, j: int, m: int, rho: complex) -> np.ndarray:
    """L^m_{j,.} = sum_{n=1}^m rho^n L(c_{n,j}) / Dg^n(c_{1,j})."""
    out = np.zeros(orbit.nu, dtype=complex)
    chain = 1.0 + 0j
    for n in range(1, m + 1):
        chain *= orbit.D[j][n]
        out += rho**n * orbit.L[j][n] / chain
    return out


def assemble_D(orbit: MarkedOrbit, relations: Sequence[CriticalRelation], rho: complex) -> np.ndarray:
    _require_full(orbit)
    P = orbit.family.marked_jacobian(orbit.theta)
    nu = orbit.nu
    eye = np.eye(nu, dtype=complex)
    D = eye.copy()
    for rel in relations:
        j, q = rel.j, rel.q
        row = eye[j] + _cal_L(orbit, j, q - 1, rho)
        if rel.periodic:
            row -= rho**q * P[rel.mu] / orbit.derivative_product(j, 1, q)
        else:
            mult = orbit.derivative_product(j, rel.l, q)
            row -= rho ** (q - rel.l) / mult * (_cal_L(orbit, j, rel.l - 1, rho) + eye[j])
        D[j] = row
    return D


# =========================
# Determinants and spectra
# =========================
def det_poly(matrix: TransferMatrix | np.ndarray) -> np.ndarray:
    """Ascending coefficients of det(I - rho M), constant term 1."""
    m = matrix.entries if isinstance(matrix, TransferMatrix) else np.asarray(matrix)
    if m.shape[0] > settings.MAX_DIMENSION:
        raise DomainError("matrix dimension above the supported maximum", dimension=m.shape[0])
    if m.shape[0] == 0:
        return np.ones(1, dtype=complex)
    coeffs = faddeev_leverrier(m)
    check_overflow(coeffs)
    return trim_trailing(coeffs)


def spectrum(matrix: TransferMatrix | np.ndarray) -> np.ndarray:
    """Reciprocal roots of det(I - rho M) plus zeros up to the dimension."""
    m = matrix.entries if isinstance(matrix, TransferMatrix) else np.asarray(matrix)
    dim = m.shape[0]
    coeffs = det_poly(m)
    # det(I - rho M) = rho^n det(I/rho - M): the same coefficients, read descending, give the eigenvalues
    nonzero = aberth_roots(coeffs) if len(coeffs) > 1 else np.zeros(0, dtype=complex)
    eig = np.concatenate([nonzero, np.zeros(dim - len(nonzero), dtype=complex)])
    return eig[np.lexsort((eig.imag, -np.abs(eig)))]


def spectral_radius(eigenvalues: np.ndarray) -> float:
    return float(np.max(np.abs(eigenvalues))) if len(eigenvalues) else 0.0


def det_D_poly(orbit: MarkedOrbit, relations: Sequence[CriticalRelation]) -> np.ndarray:
    """Ascending coefficients of det D(rho), interpolated on the unit circle."""
    degree = sum(rel.q for rel in relations)
    coeffs = interpolate_on_circle(lambda rho: np.linalg.det(assemble_D(orbit, relations, rho)), degree)
    check_overflow(coeffs)
    return trim_trailing(coeffs, rel_tol=1e-11)


@dataclass(frozen=True, slots=True)
class ExceptionalConstraint:
    """rho is exceptional for j when rho^exponent = multiplier."""

    j: int
    multiplier: complex
    exponent: int

    def rhos(self) -> list[complex]:
        r = abs(self.multiplier) ** (1.0 / self.exponent)
        phase = np.angle(self.multiplier)
        return [complex(r * np.exp(1j * (phase + 2.0 * np.pi * m) / self.exponent)) for m in range(self.exponent)]

    def is_exceptional(self, rho: complex, tol: float = 1e-9) -> bool:
        return abs(rho**self.exponent - self.multiplier) <= tol * max(1.0, abs(self.multiplier))


def exceptional_values(orbit: MarkedOrbit, relations: Sequence[CriticalRelation]) -> list[ExceptionalConstraint]:
    out = []
    for rel in relations:
        if rel.periodic:
            continue
        out.append(ExceptionalConstraint(rel.j, orbit.derivative_product(rel.j, rel.l, rel.q), rel.q - rel.l))
    return out


def is_exceptional(constraints: Sequence[ExceptionalConstraint], rho: complex, tol: float = 1e-9) -> bool:
    return any(c.is_exceptional(rho, tol) for c in constraints)


# =========================
# Jacobian of the relation map
# =========================
def _relation_values(fam: Family, w: np.ndarray, relations: Sequence[CriticalRelation]) -> np.ndarray:
    theta = fam.params_from_values(list(w))
    cps = fam.critical_points(theta)
    out = np.zeros(len(relations), dtype=complex)
    for rel in relations:
        z = w[rel.j]
        tail = None
        for n in range(1, rel.q):
            if not rel.periodic and n == rel.l:
                tail = z
            z = fam.eval(theta, z)
        if rel.periodic:
            out[rel.j] = z - cps[rel.mu]
        else:
            out[rel.j] = z - tail
    return out


def jacobian_R(spec, w, relations: Sequence[CriticalRelation]) -> np.ndarray:
    """
    dR_j/dw_k at the critical-value vector w. Complex step where the family
    is analytic in w and w is real; central differences otherwise.
    """
    fam = family_for(spec)
    w = np.atleast_1d(np.asarray(w, dtype=complex))
    nu = len(w)
    if len(relations) != nu:
        raise DomainError("one relation per critical value is required", nu=nu, relations=len(relations))
    J = np.zeros((nu, nu), dtype=complex)
    real_input = bool(np.all(w.imag == 0.0))
    if fam.analytic_in_w and real_input:
        h = settings.COMPLEX_STEP
        for k in range(nu):
            shifted = w.copy()
            shifted[k] += 1j * h
            J[:, k] = _relation_values(fam, shifted, relations).imag / h
        return J.real.astype(complex)
    for k in range(nu):
        h = settings.FD_STEP * max(1.0, abs(w[k]))
        up, down = w.copy(), w.copy()
        up[k] += h
        down[k] -= h
        J[:, k] = (_relation_values(fam, up, relations) - _relation_values(fam, down, relations)) / (2.0 * h)
    return J


# =========================
# Certificate
# =========================
@dataclass(frozen=True)
class TransversalityCertificate:
    det_DR: complex
    derivative_product: complex
    Q: complex
    det_D1: complex
    spectral_radius: float
    eigenvalues: np.ndarray
    exceptional_rhos: list[complex]
    positive: bool
    identity_residuals: dict[str, float | None]
    relations: list[CriticalRelation]
    rank_DR: int
    unit_eigenvalue: bool
    unit_rank_consistent: bool | None
    rho1_exceptional: bool
    half_in_spectrum: bool | None
    critical_sum: complex | None
    near_parabolic: bool
    det_poly: np.ndarray
    theta: tuple = ()
    family: str = ""


def critical_sum(orbit: MarkedOrbit) -> complex | None:
    """sum_{n=0}^{q-1} 1 / Dg^n(c_1) for a single critical point."""
    if orbit.nu != 1:
        return None
    total, chain = 1.0 + 0j, 1.0 + 0j
    for n in range(1, orbit.q(0)):
        chain *= orbit.D[0][n]
        total += 1.0 / chain
    return total


def _rootset_distance(a: np.ndarray, b: np.ndarray) -> float:
    if len(a) == 0 and len(b) == 0:
        return 0.0
    if len(a) == 0 or len(b) == 0:
        return 1.0

    def one_way(x, y):
        return max(min(abs(u - v) for v in y) / (1.0 + abs(u)) for u in x)

    return float(max(one_way(a, b), one_way(b, a)))


def _roots_of_ascending(coeffs: np.ndarray) -> np.ndarray:
    coeffs = trim_trailing(coeffs, rel_tol=1e-10)
    if len(coeffs) <= 1:
        return np.zeros(0, dtype=complex)
    return aberth_roots(coeffs[::-1])


def certify(spec, w, relations: Sequence[CriticalRelation] | None = None, orbit: MarkedOrbit | None = None) -> TransversalityCertificate:
    """`w` is the native parameter: c or the multiplier, or (a, b) for the cubic."""
    fam = family_for(spec)
    orbit = orbit if orbit is not None else critical_orbit(fam, w)
    _require_full(orbit)
    relations = list(relations) if relations is not None else detect_relations(orbit)
    cvals = orbit.critical_values()
    scale_tol = settings.CERT_TOL

    A = assemble_A(orbit, relations)
    AJ = assemble_AJ(orbit, relations)
    coeffs = det_poly(A)
    eig = spectrum(A)
    rad = spectral_radius(eig)

    DR = jacobian_R(fam, cvals, relations)
    det_DR = complex(np.linalg.det(DR))
    prod = 1.0 + 0j
    for rel in relations:
        prod *= orbit.derivative_product(rel.j, 1, rel.q)
    det_D1 = complex(np.linalg.det(assemble_D(orbit, relations, 1.0)))
    Q = det_DR / prod

    residuals: dict[str, float | None] = {}
    residuals["drho_identity"] = abs(det_DR - prod * det_D1) / (1.0 + abs(det_DR))

    # closed form for a single critical point returning to itself
    closed = None
    if orbit.nu == 1 and relations[0].periodic and fam.orientation > 0 and fam.kind != "cubic":
        expected = np.zeros(relations[0].q, dtype=complex)
        chain = 1.0 + 0j
        expected[0] = 1.0
        for n in range(1, relations[0].q):
            chain *= orbit.D[0][n]
            expected[n] = 1.0 / chain
        got = np.zeros(max(len(expected), len(coeffs)), dtype=complex)
        got[: len(coeffs)] = coeffs
        ref = np.zeros_like(got)
        ref[: len(expected)] = expected
        closed = float(np.max(np.abs(got - ref)))
    residuals["closed_form_detpoly"] = closed

    # det(I - rho A_J) = det D(rho) on seeded sample points |rho| <= 2
    rng = np.random.default_rng(settings.SEED)
    samples = 2.0 * np.sqrt(rng.random(20)) * np.exp(2j * np.pi * rng.random(20))
    coeffs_J = det_poly(AJ)
    eq_i = 0.0
    for rho in samples:
        lhs = eval_ascending(coeffs_J, rho)
        rhs = complex(np.linalg.det(assemble_D(orbit, relations, rho)))
        eq_i = max(eq_i, abs(lhs - rhs) / (1.0 + abs(rhs)))
    residuals["labelled_identity"] = eq_i

    constraints = exceptional_values(orbit, relations)
    roots_A = _roots_of_ascending(coeffs)
    roots_D = _roots_of_ascending(det_D_poly(orbit, relations))
    keep_A = np.array([r for r in roots_A if not is_exceptional(constraints, r, 1e-6)], dtype=complex)
    keep_D = np.array([r for r in roots_D if not is_exceptional(constraints, r, 1e-6)], dtype=complex)
    residuals["prop43_rootsets"] = _rootset_distance(keep_A, keep_D)

    unit = bool(np.any(np.abs(eig - 1.0) < scale_tol * 100))
    degenerate = abs(det_DR) < scale_tol * max(1.0, abs(prod))
    rank = int(np.linalg.matrix_rank(DR, tol=settings.RANK_TOL * max(1.0, float(np.max(np.abs(DR))))))
    consistent = None if orbit.near_parabolic else (unit == degenerate)
    if consistent is False:
        logger.warning("unit eigenvalue (%s) and degenerate DR (%s) disagree at theta=%s", unit, degenerate, orbit.theta)

    half = None
    if isinstance(fam, MonicAdditive) and fam.d == 2 and relations[0].q >= 2:
        half = bool(np.any(np.abs(eig - 0.5) < 1e-8))

    real_input = bool(np.all(np.abs(cvals.imag) == 0.0)) and all(
        complex(t).imag == 0.0 for t in orbit.theta
    )
    positive = real_input and Q.real > scale_tol and abs(Q.imag) < scale_tol
    if orbit.near_parabolic:
        logger.warning("certificate at theta=%s computed next to a parabolic cycle", orbit.theta)

    exc = [r for c in constraints for r in c.rhos()]
    logger.debug("certify theta=%s: Q=%s radius=%.6g residuals=%s", orbit.theta, Q, rad, residuals)
    return TransversalityCertificate(
        det_DR=det_DR,
        derivative_product=prod,
        Q=Q,
        det_D1=det_D1,
        spectral_radius=rad,
        eigenvalues=eig,
        exceptional_rhos=exc,
        positive=bool(positive),
        identity_residuals=residuals,
        relations=list(relations),
        rank_DR=rank,
        unit_eigenvalue=unit,
        unit_rank_consistent=consistent,
        rho1_exceptional=is_exceptional(constraints, 1.0),
        half_in_spectrum=half,
        critical_sum=critical_sum(orbit),
        near_parabolic=orbit.near_parabolic,
        det_poly=coeffs,
        theta=tuple(orbit.theta),
        family=fam.kind,
    )


# =========================
# Reparametrized quadratic family
# =========================
@dataclass(frozen=True, slots=True)
class ReparametrizationReport:
    name: str
    v1: complex
    dnu_v1: complex
    residual: float
    det_D1: complex
    spectral_radius: float
    # lifting property (radius < 1) <=> positive transversality (D(1) > 0)
    equivalence_holds: bool


def reparametrization(name: str, c1: float, v1: float | None = None) -> Reparametrization:
    if name == "affine":
        v = c1 if v1 is None else v1
        return Reparametrization(name, lambda x: x + (c1 - v), lambda x: 1.0 + 0j, complex(v), complex(c1))
    if name == "quadratic-critical":
        v = 0.5 * c1 if v1 is None else v1
        return Reparametrization(name, lambda x: c1 + (x - v) ** 2, lambda x: 2.0 * (x - v), complex(v), complex(c1))
    raise DomainError(f"unknown reparametrization {name!r}", known=["affine", "quadratic-critical"])


def reparametrize_check(c_star: float, nu_spec: str = "affine", v1: float | None = None, samples: int = 20) -> ReparametrizationReport:
    """
    Checks det(I - rho A_nu) = (1 - rho(1 - v1 nu'(v1)/(2 c1))) / (1 - rho/2) det(I - rho A)
    on a circle of radius 0.9 and at rho = 0.
    """
    if c_star == 0:
        raise DegenerateChart("c1 = 0 has no reparametrized counterpart")
    base = MonicAdditive(2)
    orbit = critical_orbit(base, c_star)
    relations = detect_relations(orbit)
    coeffs = det_poly(assemble_A(orbit, relations))

    rep = reparametrization(nu_spec, c_star, v1)
    fam = ReparametrizedQuadratic(rep)
    orbit_nu = critical_orbit(fam, rep.v1)
    rel_nu = detect_relations(orbit_nu)
    A_nu = assemble_A(orbit_nu, rel_nu)
    coeffs_nu = det_poly(A_nu)

    factor = 1.0 - rep.v1 * rep.dnu(rep.v1) / (2.0 * rep.c1)
    rhos = [0j] + [0.9 * np.exp(2j * np.pi * (m + 0.5) / samples) for m in range(samples)]
    residual = 0.0
    for rho in rhos:
        lhs = eval_ascending(coeffs_nu, rho)
        rhs = (1.0 - rho * factor) / (1.0 - rho / 2.0) * eval_ascending(coeffs, rho)
        residual = max(residual, abs(lhs - rhs) / (1.0 + abs(lhs)))

    d1 = complex(np.linalg.det(assemble_D(orbit_nu, rel_nu, 1.0)))
    rad = spectral_radius(spectrum(A_nu))
    tol = settings.CERT_TOL
    equivalent = (rad < 1.0 - tol) == (d1.real > tol)
    logger.debug("reparametrize_check %s v1=%s: residual=%.3g D(1)=%s radius=%.6g", nu_spec, rep.v1, residual, d1, rad)
    return ReparametrizationReport(
        name=nu_spec,
        v1=rep.v1,
        dnu_v1=complex(rep.dnu(rep.v1)),
        residual=float(residual),
        det_D1=d1,
        spectral_radius=rad,
        equivalence_holds=bool(equivalent),
    )
