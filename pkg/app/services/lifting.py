"""
Holomorphic motions of g(P), their lifts and the angle geometry used to
certify theta-regularity.

A motion is stored by samples on a polar grid of the lambda-disk:
lambdas[r, m] = radius * (m / n_radii) * exp(2 pi i r / n_rays), m = 0..n_radii,
so column 0 is lambda = 0 and holds the base set exactly.
"""
from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from app.core.config import settings
from app.core.errors import (
    BranchLoss,
    Degenerate,
    DegeneratePoint,
    DomainError,
    InjectivityViolation,
    NoUnitEigenvalue,
    ToolkitError,
)
from app.services.families import Family, PowerAdditive
from app.services.orbits import CriticalRelation, MarkedOrbit
from app.services.transfer import assemble_A

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Motion:
    base: np.ndarray
    radius: float
    lambdas: np.ndarray
    samples: np.ndarray
    jet1: np.ndarray

    @property
    def n_rays(self) -> int:
        return self.lambdas.shape[0]

    @property
    def n_radii(self) -> int:
        return self.lambdas.shape[1] - 1

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.samples))) if self.samples.size else 0.0

    def deviation(self) -> float:
        return float(np.max(np.abs(self.samples - self.base))) if self.samples.size else 0.0


# =========================
# Geometry
# =========================
@dataclass(frozen=True, slots=True)
class Geometry:
    angle: float
    in_Dtheta: bool
    in_sector: bool


def angle_at(o: complex, a: complex, b: complex) -> float:
    """Angle in [0, pi] at o between the rays o->a and o->b."""
    if o == a or o == b:
        raise DegeneratePoint("angle at a ray endpoint", o=o, a=a, b=b)
    return abs(cmath.phase((b - o) / (a - o)))


def corner_angle(z: complex) -> float:
    """The angle 0 z 1."""
    z = complex(z)
    if z == 0 or z == 1:
        raise DegeneratePoint("z must differ from 0 and 1", z=z)
    return abs(cmath.phase((z - 1.0) / z))


def geometry(z: complex, theta: float) -> Geometry:
    ang = corner_angle(z)
    return Geometry(angle=ang, in_Dtheta=ang > math.pi - theta, in_sector=abs(cmath.phase(complex(z))) < theta)


def in_sector(z: complex, theta: float) -> bool:
    return z != 0 and abs(cmath.phase(complex(z))) < theta


# =========================
# Motions
# =========================
def _polar_grid(radius: float, n_rays: int, n_radii: int) -> np.ndarray:
    rays = np.exp(2j * np.pi * np.arange(n_rays) / n_rays)
    radii = radius * np.arange(n_radii + 1) / n_radii
    return rays[:, None] * radii[None, :]


def make_motion(
    base_set: Sequence[complex],
    velocity: Callable[[complex], complex] | Sequence[complex],
    radius: float,
    grid: tuple[int, int] | None = None,
    inj_floor: float | None = None,
) -> Motion:
    """Affine motion h(x) = x + lambda v(x) sampled on an (n_rays, n_radii) polar grid."""
    base = np.asarray(base_set, dtype=complex)
    if callable(velocity):
        v = np.array([velocity(x) for x in base], dtype=complex)
    else:
        v = np.asarray(velocity, dtype=complex)
    if v.shape != base.shape:
        raise DomainError("velocity must give one value per base point", base=len(base), velocity=len(v))
    n_rays, n_radii = grid if grid is not None else (settings.N_RAYS, settings.N_RADII)
    floor = settings.INJ_FLOOR if inj_floor is None else inj_floor

    n = len(base)
    for a in range(n):
        for b in range(a + 1, n):
            dv = v[a] - v[b]
            if dv == 0:
                continue
            hit = -(base[a] - base[b]) / dv
            if abs(hit) < radius:
                raise InjectivityViolation(
                    "points collide inside the disk", pair=[base[a], base[b]], lam=complex(hit)
                )

    lambdas = _polar_grid(radius, n_rays, n_radii)
    samples = base[None, None, :] + lambdas[:, :, None] * v[None, None, :]
    if n > 1:
        gaps = np.abs(samples[:, :, :, None] - samples[:, :, None, :])
        gaps[:, :, np.arange(n), np.arange(n)] = np.inf
        worst = float(np.min(gaps))
        if worst <= floor:
            r, m, a, b = np.unravel_index(int(np.argmin(gaps)), gaps.shape)
            raise InjectivityViolation(
                "sampled points closer than inj_floor", pair=[base[a], base[b]], lam=complex(lambdas[r, m])
            )
    samples[:, 0, :] = base
    return Motion(base=base, radius=float(radius), lambdas=lambdas, samples=samples, jet1=v)


def affine_velocity(orbit: MarkedOrbit) -> np.ndarray:
    """v = 1 off the marked points; marked points move with p_j(c_1(lambda)) to first order."""
    v = np.ones(len(orbit.gP), dtype=complex)
    P = orbit.family.marked_jacobian(orbit.theta)
    ones = [orbit.index[(1, k)] for k in range(orbit.nu)]
    for pos, j in orbit.marked.items():
        v[pos] = sum(P[j, k] * v[ones[k]] for k in range(orbit.nu))
    return v


def restrict(motion: Motion, radius: float) -> Motion:
    keep = np.abs(motion.lambdas[0]) <= radius * (1.0 + 1e-12)
    return replace(motion, radius=float(radius), lambdas=motion.lambdas[:, keep], samples=motion.samples[:, keep, :])


@dataclass(frozen=True, slots=True)
class _Row:
    pos: int
    marked: int | None
    # position of g(x) for lifted rows
    image: int | None


def _structure(orbit: MarkedOrbit, relations: Sequence[CriticalRelation]) -> tuple[list[_Row], list[int]]:
    q = {rel.j: rel.q for rel in relations}
    rows: list[_Row] = []
    seen: dict[int, tuple[int, int]] = {}
    for (i, j), pos in sorted(orbit.index.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        if 1 <= i < q[j] and pos not in seen:
            seen[pos] = (i, j)
    for pos in range(len(orbit.gP)):
        if pos in orbit.marked:
            rows.append(_Row(pos, orbit.marked[pos], None))
        else:
            i, j = seen[pos]
            rows.append(_Row(pos, None, orbit.index[(i + 1, j)]))
    ones = [orbit.index[(1, k)] for k in range(orbit.nu)]
    return rows, ones


def _min_gap(points: np.ndarray) -> float:
    if len(points) < 2:
        return math.inf
    diff = np.abs(points[:, None] - points[None, :])
    np.fill_diagonal(diff, np.inf)
    return float(np.min(diff))


def solve_preimage(fam: Family, theta, target: complex, seed: complex) -> complex:
    """G_theta(z) = target on the branch through `seed`: closed form when available, else Newton."""
    try:
        closed = fam.preimage(theta, target, seed)
        if closed is not None:
            return complex(closed)
        z = complex(seed)
        for _ in range(settings.NEWTON_MAX_ITER):
            d = fam.deriv_z(theta, z)
            if d == 0:
                break
            step = (fam.eval(theta, z) - target) / d
            z -= step
            if not cmath.isfinite(z):
                break
            if abs(step) <= 1e-14 * (1.0 + abs(z)):
                return z
    except ToolkitError as exc:
        raise BranchLoss(f"lift equation not solvable: {exc.code}", target=target, seed=seed) from exc
    raise BranchLoss("Newton did not converge on the lift equation", target=target, seed=seed)


def _lift_samples(fam: Family, orbit: MarkedOrbit, relations, motion: Motion, steps: int) -> np.ndarray:
    rows, ones = _structure(orbit, relations)
    base = motion.base
    max_jump = 0.5 * _min_gap(base)
    out = np.empty_like(motion.samples)
    for r in range(motion.n_rays):
        prev_h = base
        prev_hat = base.copy()
        out[r, 0] = base
        for m in range(1, motion.lambdas.shape[1]):
            target_h = motion.samples[r, m]
            for s in range(1, steps + 1):
                h = prev_h + (target_h - prev_h) * (s / steps)
                theta = fam.params_from_values(list(h[ones]))
                cps = fam.critical_points(theta)
                hat = np.empty_like(base)
                for row in rows:
                    if row.marked is not None:
                        hat[row.pos] = cps[row.marked]
                        continue
                    z = solve_preimage(fam, theta, h[row.image], prev_hat[row.pos])
                    if not abs(z - prev_hat[row.pos]) < max_jump:
                        raise BranchLoss("continuation step larger than the univalence estimate", ray=r, radius_index=m)
                    hat[row.pos] = z
                prev_hat = hat
            out[r, m] = prev_hat
            prev_h = target_h
    return out


def lift_motion(
    spec,
    orbit: MarkedOrbit,
    relations: Sequence[CriticalRelation],
    motion: Motion,
    steps_per_ray: int | None = None,
) -> Motion:
    """
    Lift h -> h_hat with G_{c1(lambda)}(h_hat(x)) = h(g(x)) and h_hat(c_{0,j}) = p_j(c1(lambda)).
    The disk is halved on branch loss; the returned radius says how far the lift reached.
    """
    fam = orbit.family
    steps = settings.STEPS_PER_RAY if steps_per_ray is None else steps_per_ray
    A = assemble_A(orbit, relations).entries
    current = motion
    for attempt in range(settings.MAX_RADIUS_HALVINGS + 1):
        try:
            samples = _lift_samples(fam, orbit, relations, current, steps)
            return Motion(
                base=motion.base,
                radius=current.radius,
                lambdas=current.lambdas,
                samples=samples,
                jet1=A @ motion.jet1,
            )
        except BranchLoss as exc:
            if attempt == settings.MAX_RADIUS_HALVINGS:
                raise
            current = restrict(current, 0.5 * current.radius)
            if current.lambdas.shape[1] < 2:
                raise BranchLoss("no sample radius left after halving", radius=current.radius) from exc
            logger.info("lift_motion: branch loss (%s), radius halved to %.6g", exc.message, current.radius)
    raise BranchLoss("radius halving exhausted")  # pragma: no cover


@dataclass(frozen=True)
class LiftDiagnostics:
    M: list[float]
    d: list[float]
    ratios: list[float | None]
    radius: list[float]
    bounded: bool
    rate: float | None
    final: Motion | None = None
    meta: dict = field(default_factory=dict)


def _rate(d: Sequence[float]) -> float | None:
    pts = [(k, math.log(x)) for k, x in enumerate(d) if x > 1e-12]
    if len(pts) < 3:
        return None
    tail = pts[len(pts) // 2 :] if len(pts) >= 4 else pts[1:]
    if len(tail) < 2:
        return None
    ks, ys = zip(*tail)
    slope, _ = np.polyfit(np.asarray(ks, dtype=float), np.asarray(ys), 1)
    return float(math.exp(slope))


def _diagnostics(M, d, radius, slack: float, final: Motion | None) -> LiftDiagnostics:
    ratios = [d[k + 1] / d[k] if d[k] > 0 else None for k in range(len(d) - 1)]
    bounded = all(m <= M[0] + slack for m in M)
    return LiftDiagnostics(M=list(M), d=list(d), ratios=ratios, radius=list(radius), bounded=bounded, rate=_rate(d), final=final)


def iterate_lifts(
    spec,
    orbit: MarkedOrbit,
    relations: Sequence[CriticalRelation],
    motion: Motion,
    k_max: int,
    slack: float | None = None,
    steps_per_ray: int | None = None,
) -> LiftDiagnostics:
    if not 0 <= k_max <= 200:
        raise DomainError("k_max must lie in 0..200", k_max=k_max)
    M = [motion.sup_norm()]
    d = [motion.deviation()]
    radius = [motion.radius]
    slack = d[0] + 1e-12 if slack is None else slack
    h = motion
    for k in range(1, k_max + 1):
        try:
            h = lift_motion(spec, orbit, relations, h, steps_per_ray)
        except BranchLoss as exc:
            partial = _diagnostics(M, d, radius, slack, h)
            raise BranchLoss(exc.message, k=k, diagnostics=partial) from exc
        M.append(h.sup_norm())
        d.append(h.deviation())
        radius.append(h.radius)
        logger.debug("iterate_lifts k=%d: M=%.6g d=%.6g radius=%.4g", k, M[-1], d[-1], h.radius)
    return _diagnostics(M, d, radius, slack, h)


def roots_lift(spec, orbit: MarkedOrbit, relations: Sequence[CriticalRelation], motion: Motion) -> np.ndarray:
    """
    Explicit lift of the power family: h_hat(0) = 0 and
    h_hat(a) = +-(h(f(a)) - h(f(0)))^{1/l+-} on the principal branch.
    """
    fam = orbit.family
    if not isinstance(fam, PowerAdditive):
        raise DomainError("the roots lift is defined for power_additive families", kind=fam.kind)
    rows, ones = _structure(orbit, relations)
    out = np.empty_like(motion.samples)
    for row in rows:
        if row.marked is not None:
            out[:, :, row.pos] = 0.0
            continue
        s = 1 if motion.base[row.pos].real >= 0 else -1
        ell = fam.ell_plus if s > 0 else fam.ell_minus
        diff = motion.samples[:, :, row.image] - motion.samples[:, :, ones[0]]
        out[:, :, row.pos] = s * np.exp(np.log(diff.astype(complex)) / ell)
    out[:, 0, :] = motion.base
    return out


# =========================
# Phi and its derivative
# =========================
@dataclass(frozen=True)
class PhiResult:
    value: np.ndarray
    jacobian_fd: np.ndarray


def phi(orbit: MarkedOrbit, relations: Sequence[CriticalRelation], Z: Sequence[complex]) -> np.ndarray:
    """Phi(Z): G_{Z_1}(phi_x) = Z_{g(x)} on the branch through x, phi_{c_{0,j}} = p_j(Z_1)."""
    fam = orbit.family
    Z = np.asarray(Z, dtype=complex)
    rows, ones = _structure(orbit, relations)
    theta = fam.params_from_values(list(Z[ones]))
    cps = fam.critical_points(theta)
    out = np.empty_like(Z)
    for row in rows:
        if row.marked is not None:
            out[row.pos] = cps[row.marked]
        else:
            out[row.pos] = solve_preimage(fam, theta, Z[row.image], orbit.gP[row.pos])
    return out


def phi_and_derivative(
    spec,
    orbit: MarkedOrbit,
    relations: Sequence[CriticalRelation],
    Z: Sequence[complex] | None = None,
    step: float = 1e-6,
) -> PhiResult:
    Z = np.asarray(orbit.gP if Z is None else Z, dtype=complex)
    value = phi(orbit, relations, Z)
    n = len(Z)
    jac = np.zeros((n, n), dtype=complex)
    for k in range(n):
        e = np.zeros(n, dtype=complex)
        e[k] = step
        jac[:, k] = (phi(orbit, relations, Z + e) - phi(orbit, relations, Z - e)) / (2.0 * step)
    return PhiResult(value=value, jacobian_fd=jac)


# =========================
# theta-regularity
# =========================
@dataclass(frozen=True)
class SectorReport:
    theta: float
    A1_ok: list[bool]
    A2_ok: dict[tuple[int, int], bool]
    worst_angle: float

    @property
    def regular(self) -> bool:
        return all(self.A1_ok) and all(self.A2_ok.values())


def theta_regularity(motion: Motion, ell: float, theta: float) -> SectorReport:
    base = motion.base
    scale = max(1.0, float(np.max(np.abs(base)))) if len(base) else 1.0
    if np.any(np.abs(base.imag) > 1e-12 * scale):
        raise DomainError("theta-regularity needs a real base set")
    real = base.real
    samples = motion.samples.reshape(-1, len(base))
    opening = 4.0 * theta / ell

    worst = 0.0
    a1: list[bool] = []
    for pos, a in enumerate(real):
        if a == 0.0:
            a1.append(True)
            continue
        s = 1.0 if a > 0 else -1.0
        args = np.abs(np.angle(s * samples[:, pos]))
        a1.append(bool(np.all(args < opening)))
        worst = max(worst, float(np.max(args)) * ell / 4.0)

    a2: dict[tuple[int, int], bool] = {}
    for ia, a in enumerate(real):
        for ib, b in enumerate(real):
            if not (abs(a) > abs(b) > 0.0 and a * b > 0.0):
                continue
            angles = [corner_angle(zb / za) for za, zb in zip(samples[:, ia], samples[:, ib])]
            a2[(ia, ib)] = all(x > math.pi - theta for x in angles)
            worst = max(worst, math.pi - min(angles))
    return SectorReport(theta=theta, A1_ok=a1, A2_ok=a2, worst_angle=worst)


def lift_sequence_sectors(
    spec,
    orbit: MarkedOrbit,
    relations: Sequence[CriticalRelation],
    motion: Motion,
    k: int,
    ell: float,
    theta: float,
) -> list[SectorReport]:
    """SectorReport of the seed and of each of its first k lifts."""
    reports = [theta_regularity(motion, ell, theta)]
    h = motion
    for _ in range(k):
        h = lift_motion(spec, orbit, relations, h)
        reports.append(theta_regularity(h, ell, theta))
    return reports


# =========================
# Order of invariance
# =========================
@dataclass(frozen=True, slots=True)
class InvarianceReport:
    slope: float
    eigenvalue: complex
    unit: bool
    errors: tuple[float, ...]


def order_invariance_check(
    spec,
    orbit: MarkedOrbit,
    relations: Sequence[CriticalRelation],
    v: Sequence[complex] | None = None,
    lambdas: Sequence[float] = (1e-3, 2e-3, 4e-3, 8e-3, 1.6e-2),
    require_unit: bool = True,
) -> InvarianceReport:
    """
    Lifts h = x + lambda v once and fits log|h_hat - h| against log|lambda|.
    A slope near 2 means h is invariant to first order (v is a unit eigenvector).
    """
    A = assemble_A(orbit, relations).entries
    if v is None:
        vals, vecs = np.linalg.eig(A)
        unit_idx = int(np.argmin(np.abs(vals - 1.0)))
        if abs(vals[unit_idx] - 1.0) < 1e-8:
            idx = unit_idx
        elif require_unit:
            raise NoUnitEigenvalue("transfer operator has no eigenvalue 1", closest=complex(vals[unit_idx]))
        else:
            idx = int(np.argmax(np.abs(vals)))
        v = vecs[:, idx]
        eigenvalue = complex(vals[idx])
    else:
        v = np.asarray(v, dtype=complex)
        if not np.any(v):
            raise Degenerate("zero direction: the lift is the identity motion")
        Av = A @ v
        k = int(np.argmax(np.abs(v)))
        eigenvalue = complex(Av[k] / v[k])
        if require_unit and np.max(np.abs(Av - v)) > 1e-8 * max(1.0, float(np.max(np.abs(v)))):
            raise NoUnitEigenvalue("v is not fixed by the transfer operator", rayleigh=eigenvalue)
    v = np.asarray(v, dtype=complex)
    if not np.any(v):
        raise Degenerate("zero direction: the lift is the identity motion")
    v = v / np.max(np.abs(v))

    errors = []
    for lam in lambdas:
        h = orbit.gP + lam * v
        errors.append(float(np.max(np.abs(phi(orbit, relations, h) - h))))
    if min(errors) <= 0.0:
        raise Degenerate("lift coincides with the motion on the sample list", errors=errors)
    slope, _ = np.polyfit(np.log(np.abs(np.asarray(lambdas, dtype=float))), np.log(errors), 1)
    return InvarianceReport(
        slope=float(slope),
        eigenvalue=eigenvalue,
        unit=abs(eigenvalue - 1.0) < 1e-8,
        errors=tuple(errors),
    )


# =========================
# Schwarz lemma sampling
# =========================
@dataclass(frozen=True, slots=True)
class SchwarzReport:
    samples: int
    violations: int
    refined_checked: int
    refined_violations: int


def schwarz_sampling(theta: float, n_samples: int, seed: int | None = None) -> SchwarzReport:
    """
    z uniform in D_theta within 0.01 < |z| < 100 and |arg z| < pi - 1e-6,
    t uniform in (0, 1); counts z^t outside D_theta. For theta <= pi/2 also
    counts samples with angle 01z < 0.01 theta whose power has angle 01z^t >= 0.5 theta.
    """
    if not 0.0 < theta < math.pi:
        raise DomainError("theta must lie in (0, pi)", theta=theta)
    rng = np.random.default_rng(settings.SEED if seed is None else seed)
    R = 1.0 / (2.0 * math.sin(theta))
    top = 0.5 * math.tan(0.5 * theta)
    x_lo, x_hi = (0.0, 1.0) if theta <= 0.5 * math.pi else (max(-100.0, 0.5 - R), min(100.0, 0.5 + R))
    top = min(top, 100.0)
    eps, delta = 0.5, 0.01

    zs: list[np.ndarray] = []
    have = 0
    while have < n_samples:
        batch = max(1024, 4 * (n_samples - have))
        z = rng.uniform(x_lo, x_hi, batch) + 1j * rng.uniform(-top, top, batch)
        r = np.abs(z)
        ok = (r > 0.01) & (r < 100.0) & (np.abs(np.angle(z)) < math.pi - 1e-6) & (z != 1.0)
        z = z[ok]
        corner = np.abs(np.angle((z - 1.0) / z))
        z = z[corner > math.pi - theta]
        zs.append(z)
        have += len(z)
    z = np.concatenate(zs)[:n_samples]
    t = rng.uniform(0.0, 1.0, n_samples)
    t = np.where(t == 0.0, 0.5, t)

    zt = np.exp(t * np.log(z))
    corner_t = np.abs(np.angle((zt - 1.0) / zt))
    violations = int(np.sum(~(corner_t > math.pi - theta)))

    checked = refined = 0
    if theta <= 0.5 * math.pi:
        at_one = np.abs(np.angle(1.0 - z))
        mask = at_one < delta * theta
        checked = int(np.sum(mask))
        refined = int(np.sum(np.abs(np.angle(1.0 - zt[mask])) >= eps * theta))
    if violations:
        logger.warning("schwarz_sampling: %d of %d powers left D_theta", violations, n_samples)
    return SchwarzReport(samples=n_samples, violations=violations, refined_checked=checked, refined_violations=refined)
