"""
Critical orbits of marked maps, their critical relations, and superstable
parameters of the unimodal families.

Labels: c_{i,j} is the i-th iterate of critical point j (0-based j). A
critical orbit closes either on a marked critical point (PeriodicToCritical,
c_{q,j} = c_{0,mu}) or on an earlier point of its own orbit
(Preperiodic, c_{q,j} = c_{l,j}).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from app.core.config import dedup_tol as _dedup_tol
from app.core.config import orbit_tol as _orbit_tol
from app.core.config import settings
from app.core.errors import (
    AmbiguousRelation,
    DegenerateDerivative,
    DomainError,
    LowerPeriodCollision,
    NoSignChange,
    NonConvergence,
    NotFinite,
)
from app.services.families import Family, family_for

logger = logging.getLogger(__name__)

PERIODIC = "periodic_to_critical"
PREPERIODIC = "preperiodic"


@dataclass(frozen=True, slots=True)
class CriticalRelation:
    j: int
    kind: Literal["periodic_to_critical", "preperiodic"]
    q: int
    mu: int | None = None
    l: int | None = None  # noqa: E741

    @property
    def periodic(self) -> bool:
        return self.kind == PERIODIC

    def to_dict(self) -> dict:
        out = {"j": self.j + 1, "kind": self.kind, "q": self.q}
        if self.periodic:
            out["mu"] = self.mu + 1
        else:
            out["l"] = self.l
        return out


@dataclass(frozen=True)
class MarkedOrbit:
    family: Family
    theta: tuple
    # indices (into the family's critical points) of the marked points
    critical: tuple[int, ...]
    # points[j][i] = c_{i,j}, 0 <= i <= q_j
    points: tuple[np.ndarray, ...]
    # D[j][i] = Dg(c_{i,j}); entry 0 is the critical derivative
    D: tuple[np.ndarray, ...]
    # L[j][i, k] = L_k(c_{i,j}) for 0 <= i < q_j
    L: tuple[np.ndarray, ...]
    closures: tuple[CriticalRelation, ...]
    gP: np.ndarray
    index: dict[tuple[int, int], int]
    # gP element -> marked critical point it coincides with
    marked: dict[int, int]
    scale: float
    orbit_tol: float
    near_parabolic: bool = False
    multipliers: dict[int, complex] = field(default_factory=dict)

    @property
    def nu(self) -> int:
        return len(self.critical)

    @property
    def fully_marked(self) -> bool:
        return self.nu == self.family.nu

    def q(self, j: int) -> int:
        return len(self.points[j]) - 1

    def critical_values(self) -> np.ndarray:
        return np.array([pts[1] for pts in self.points], dtype=complex)

    def derivative_product(self, j: int, start: int, stop: int) -> complex:
        """prod_{i=start}^{stop-1} Dg(c_{i,j})."""
        return complex(np.prod(self.D[j][start:stop]))

    def label_value(self, i: int, j: int) -> complex:
        return complex(self.gP[self.index[(i, j)]])


def _evaluate(fam: Family, theta, x: complex, j: int, i: int) -> complex:
    y = complex(fam.eval(theta, x))
    if not (math.isfinite(y.real) and math.isfinite(y.imag)):
        raise NotFinite("critical orbit is not finite", j=j, i=i)
    return y


def critical_orbit(
    spec,
    w,
    max_iter: int | None = None,
    orbit_tol: float | None = None,
    critical: Sequence[int] | None = None,
) -> MarkedOrbit:
    fam = family_for(spec)
    theta = fam.theta(w)
    max_iter = settings.MAX_ITER if max_iter is None else max_iter
    cps = [complex(p) for p in fam.critical_points(theta)]
    marked_js = tuple(range(len(cps))) if critical is None else tuple(critical)
    for j in marked_js:
        if not 0 <= j < len(cps):
            raise DomainError(f"critical index {j} out of range", nu=len(cps))

    def tol_for(values) -> float:
        if orbit_tol is not None:
            return orbit_tol
        return _orbit_tol(max(abs(v) for v in values))

    points: list[list[complex]] = []
    closures: list[CriticalRelation] = []
    for j in marked_js:
        xs = [cps[j]]
        relation = None
        for n in range(1, max_iter + 1):
            x = _evaluate(fam, theta, xs[-1], j, n)
            tol = tol_for(xs + [x] + cps)
            to_critical = [k for k in marked_js if abs(x - cps[k]) < tol]
            to_orbit = [m for m in range(1, n) if abs(x - xs[m]) < tol]
            xs.append(x)
            if to_critical:
                if len(to_critical) > 1 or to_orbit:
                    raise AmbiguousRelation("several closure candidates", j=j, q=n)
                relation = CriticalRelation(j=len(points), kind=PERIODIC, q=n, mu=marked_js.index(to_critical[0]))
                break
            if to_orbit:
                if len(to_orbit) > 1:
                    raise AmbiguousRelation("several closure candidates", j=j, q=n)
                relation = CriticalRelation(j=len(points), kind=PREPERIODIC, q=n, l=to_orbit[0])
                break
        if relation is None:
            raise NotFinite("no closure detected", j=j, max_iter=max_iter)
        points.append(xs)
        closures.append(relation)

    all_pts = [x for xs in points for x in xs]
    scale = max(1.0, max(abs(x) for x in all_pts))
    tol = orbit_tol if orbit_tol is not None else _orbit_tol(scale)
    dtol = settings.DEDUP_FACTOR * tol if orbit_tol is not None else _dedup_tol(scale)

    D: list[np.ndarray] = []
    L: list[np.ndarray] = []
    for jj, (j, xs) in enumerate(zip(marked_js, points)):
        q = len(xs) - 1
        d = np.array([fam.deriv_z(theta, xs[i]) if i else 0j for i in range(q)], dtype=complex)
        for i in range(1, q):
            if abs(d[i]) < settings.DERIV_FLOOR:
                raise DegenerateDerivative("Dg vanishes on g(P) outside P0", j=jj, i=i, value=d[i])
        lk = np.array([[fam.deriv_w(theta, xs[i], k) for k in range(fam.nu)] for i in range(q)], dtype=complex)
        D.append(d)
        L.append(lk)

    # g(P): labels (i, j), 1 <= i <= q_j; the wrap label maps to its target
    elements: list[complex] = []
    index: dict[tuple[int, int], int] = {}
    marked: dict[int, int] = {}

    def intern(value: complex) -> int:
        for pos, e in enumerate(elements):
            if abs(e - value) < dtol:
                return pos
        elements.append(value)
        return len(elements) - 1

    for jj, (xs, rel) in enumerate(zip(points, closures)):
        for i in range(1, rel.q):
            index[(i, jj)] = intern(xs[i])
        if rel.periodic:
            target = cps[marked_js[rel.mu]]
            pos = intern(target)
            marked[pos] = rel.mu
        else:
            pos = index[(rel.l, jj)]
        index[(rel.q, jj)] = pos

    multipliers: dict[int, complex] = {}
    near_parabolic = False
    for jj, rel in enumerate(closures):
        if rel.periodic:
            continue
        mult = complex(np.prod(D[jj][rel.l : rel.q]))
        multipliers[jj] = mult
        if abs(mult - 1.0) < settings.NEAR_PARABOLIC_TOL:
            near_parabolic = True
            logger.warning("near-parabolic cycle for critical point %d: multiplier %s", jj + 1, mult)

    logger.debug("critical_orbit: theta=%s relations=%s |gP|=%d", theta, closures, len(elements))
    return MarkedOrbit(
        family=fam,
        theta=theta,
        critical=marked_js,
        points=tuple(np.array(xs, dtype=complex) for xs in points),
        D=tuple(D),
        L=tuple(L),
        closures=tuple(closures),
        gP=np.array(elements, dtype=complex),
        index=index,
        marked=marked,
        scale=scale,
        orbit_tol=tol,
        near_parabolic=near_parabolic,
        multipliers=multipliers,
    )


def detect_relations(orbit: MarkedOrbit, orbit_tol: float | None = None) -> list[CriticalRelation]:
    """
    Re-checks each closure against every candidate; PeriodicToCritical
    relations come first (the 1..r relabelling), ties kept in critical order.
    """
    tol = orbit.orbit_tol if orbit_tol is None else orbit_tol
    fam, theta = orbit.family, orbit.theta
    cps = [complex(p) for p in fam.critical_points(theta)]
    marked_pts = [cps[j] for j in orbit.critical]
    for rel in orbit.closures:
        xs = orbit.points[rel.j]
        end = xs[rel.q]
        target = marked_pts[rel.mu] if rel.periodic else xs[rel.l]
        if abs(end - target) >= tol:
            raise AmbiguousRelation("stored closure no longer holds", j=rel.j, residual=abs(end - target))
        candidates = [p for p in marked_pts if abs(end - p) < tol]
        candidates += [xs[m] for m in range(1, rel.q) if abs(end - xs[m]) < tol]
        if len(candidates) > 1:
            raise AmbiguousRelation("two closure candidates within orbit_tol", j=rel.j, q=rel.q)
        if rel.periodic:
            for k in range(1, rel.q):
                if any(abs(xs[k] - p) < tol for p in marked_pts):
                    raise AmbiguousRelation("orbit meets P0 before q", j=rel.j, k=k)
    return sorted(orbit.closures, key=lambda r: (not r.periodic, r.j))


# =========================
# Superstable parameters
# =========================
def param_derivative(spec, w, n: int, k: int = 0) -> tuple[complex, complex]:
    """
    (G_w^n(x0), d/dw_k G_w^n(x0)) by forward accumulation
    s_{m+1} = Dg(x_m) s_m + L_k(x_m), s_0 = 0.
    """
    fam = family_for(spec)
    theta = fam.theta(w)
    x = complex(fam.critical_points(theta)[0])
    s = 0j
    for _ in range(n):
        s = fam.deriv_z(theta, x) * s + fam.deriv_w(theta, x, k)
        x = fam.eval(theta, x)
    return x, s


def _residual(fam: Family, q: int, c: float) -> tuple[float, float, float]:
    """(F, dF/dc, scale) for F(c) = f_c^q(x0) - x0."""
    theta = fam.theta(c)
    x0 = complex(fam.critical_points(theta)[0])
    x, s, scale = x0, 0j, 1.0
    for _ in range(q):
        s = fam.deriv_z(theta, x) * s + fam.deriv_w(theta, x, 0)
        x = fam.eval(theta, x)
        scale = max(scale, abs(x))
    return (x - x0).real, s.real, scale


def _check_minimal_period(fam: Family, q: int, c: float) -> None:
    theta = fam.theta(c)
    x0 = complex(fam.critical_points(theta)[0])
    xs = [x0]
    for _ in range(q):
        xs.append(complex(fam.eval(theta, xs[-1])))
    tol = _orbit_tol(max(abs(x) for x in xs))
    for d in range(1, q):
        if q % d == 0 and abs(xs[d] - x0) < tol:
            raise LowerPeriodCollision("root has a lower minimal period", q=q, period=d, c=c)


def solve_superstable(spec, q: int, bracket: Sequence[float], tol: float | None = None) -> float:
    """Bisection-safeguarded Newton on f_c^q(x0) - x0 inside the bracket."""
    fam = family_for(spec)
    if fam.nu != 1:
        raise DomainError("superstable solving needs a one-parameter family", kind=fam.kind)
    if q < 1:
        raise DomainError("q must be >= 1")
    tol = settings.SUPERSTABLE_TOL if tol is None else tol
    lo, hi = float(bracket[0]), float(bracket[1])
    if lo > hi:
        lo, hi = hi, lo

    f_lo, _, _ = _residual(fam, q, lo)
    f_hi, _, _ = _residual(fam, q, hi)
    for end, value in ((lo, f_lo), (hi, f_hi)):
        if value == 0.0:
            _check_minimal_period(fam, q, end)
            return end
    if (f_lo > 0) == (f_hi > 0):
        raise NoSignChange("f^q(x0) - x0 has the same sign at both ends", q=q, bracket=[lo, hi])

    c = 0.5 * (lo + hi)
    best, best_f = c, math.inf
    for it in range(1, 400):
        f, df, scale = _residual(fam, q, c)
        if abs(f) < abs(best_f):
            best, best_f = c, f
        if abs(f) < tol * scale:
            break
        if (f > 0) == (f_lo > 0):
            lo, f_lo = c, f
        else:
            hi = c
        step_ok = df != 0.0 and math.isfinite(df)
        nxt = c - f / df if step_ok else math.nan
        # Newton only while it stays strictly inside the current bracket
        if not (lo < nxt < hi):
            nxt = 0.5 * (lo + hi)
        if nxt in (lo, hi) or hi - lo <= 4.0 * np.spacing(max(abs(lo), abs(hi))):
            break
        c = nxt
    else:
        raise NonConvergence("superstable solve did not converge", q=q)

    logger.debug("solve_superstable q=%d: c*=%.17g |F|=%.3g after %d steps", q, best, abs(best_f), it)
    _check_minimal_period(fam, q, best)
    return best


def superstable_residual(spec, q: int, c: float) -> float:
    fam = family_for(spec)
    return abs(_residual(fam, q, c)[0])


def enumerate_superstable(
    spec,
    c_range: Sequence[float],
    q_max: int,
    grid: int = 64,
) -> list[tuple[int, float]]:
    """
    All sign-change-isolated superstable parameters of minimal period <= q_max.
    Grid parameters are refined by bisection wherever their q_max-itineraries
    differ; the first differing symbol is the period of the enclosed center.
    """
    from app.services.kneading import itinerary

    fam = family_for(spec)
    if fam.nu != 1:
        raise DomainError("enumeration needs a one-parameter family", kind=fam.kind)
    if not 1 <= q_max <= 16:
        raise DomainError("q_max must lie in 1..16", q_max=q_max)
    c_lo, c_hi = float(c_range[0]), float(c_range[1])
    if c_lo >= c_hi:
        return []

    def symbols(c: float) -> tuple[int, ...]:
        return itinerary(fam, fam.theta(c), q_max)

    width_floor = 1e-10 * max(1.0, abs(c_lo), abs(c_hi))
    cs = [float(c) for c in np.linspace(c_lo, c_hi, max(2, grid))]
    ks = [symbols(c) for c in cs]
    stack = [(cs[i], cs[i + 1], ks[i], ks[i + 1]) for i in range(len(cs) - 1)][::-1]
    candidates: list[tuple[int, float, float]] = []
    while stack:
        lo, hi, k_lo, k_hi = stack.pop()
        if k_lo == k_hi:
            continue
        n = next(i for i, (a, b) in enumerate(zip(k_lo, k_hi)) if a != b) + 1
        if hi - lo <= width_floor:
            candidates.append((n, lo, hi))
            continue
        mid = 0.5 * (lo + hi)
        k_mid = symbols(mid)
        stack.append((mid, hi, k_mid, k_hi))
        stack.append((lo, mid, k_lo, k_mid))

    found: list[tuple[int, float]] = []
    for n, lo, hi in candidates:
        try:
            c = _solve_widening(spec, n, lo, hi, c_lo, c_hi)
        except (NoSignChange, LowerPeriodCollision, NonConvergence) as exc:
            logger.warning("skipped bracket [%.17g, %.17g] for q=%d: %s", lo, hi, n, exc.code)
            continue
        if any(qq == n and abs(cc - c) < 1e-9 * max(1.0, abs(c)) for qq, cc in found):
            continue
        found.append((n, c))
    found.sort(key=lambda qc: (qc[1], qc[0]))
    logger.info("enumerate_superstable: %d parameters with q <= %d", len(found), q_max)
    return found


def _solve_widening(spec, q: int, lo: float, hi: float, c_lo: float, c_hi: float, doublings: int = 16) -> float:
    """Solve on [lo, hi], doubling the bracket inside [c_lo, c_hi] while F keeps one sign on it."""
    width = hi - lo
    for k in range(doublings + 1):
        try:
            return solve_superstable(spec, q, [lo, hi])
        except NoSignChange:
            if k == doublings or (lo <= c_lo and hi >= c_hi):
                raise
        width *= 2.0
        lo, hi = max(c_lo, lo - width), min(c_hi, hi + width)
        logger.debug("widened bracket for q=%d to [%.17g, %.17g]", q, lo, hi)
    raise NoSignChange("no sign change after widening", q=q)
