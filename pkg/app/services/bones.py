"""
Bones of the cubic family x^3 - 3a^2 x + b: components of f^q(a) = a in the
(a, b) half plane a > 0, traced by pseudo-arclength continuation.

The orientation field is computed in critical-value coordinates
w = (f(a), f(-a)): with column V = grad_w R / Df^{q-1}(f(a)), E_w is V rotated
by +pi/2, so det[V, E_w] > 0. The normalising product changes sign exactly
where f^i(a) passes through -a, so E_w reverses at crossings while the
tracer's own tangent stays continuous.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from app.core.config import settings
from app.core.errors import (
    DomainError,
    Escape,
    NearParabolic,
    RankDeficient,
    SeedNotOnCurve,
    StepFailure,
)
from app.schemas.family import CubicSpec
from app.services.families import Cubic
from app.services.kneading import lap_numbers

logger = logging.getLogger(__name__)

_CUBIC = Cubic()
_A_MIN = 1e-3


# =========================
# Orbit derivatives
# =========================
def _forward(a: float, b: float, sign: int, n: int) -> tuple[float, float, float, float]:
    """
    x_n for x_0 = sign * a, with d x_n/da, d x_n/db and prod_{k=1}^{n-1} f'(x_k).
    """
    x = sign * a
    xa, xb, prod = float(sign), 0.0, 1.0
    for k in range(n):
        d = 3.0 * x * x - 3.0 * a * a
        if k >= 1:
            prod *= d
        xa, xb = d * xa - 6.0 * a * x, d * xb + 1.0
        x = x**3 - 3.0 * a * a * x + b
    return x, xa, xb, prod


def residual(q: int, a: float, b: float) -> float:
    """R(a, b) = f^q(a) - a."""
    return _forward(a, b, 1, q)[0] - a


def _grad_ab(q: int, a: float, b: float) -> tuple[float, np.ndarray, float]:
    x, xa, xb, prod = _forward(a, b, 1, q)
    return x - a, np.array([xa - 1.0, xb]), prod


def _dadw(a: float) -> np.ndarray:
    """Rows: d(a, b)/dw for the chart w1 = f(a), w2 = f(-a)."""
    g = 1.0 / (12.0 * a * a)
    return np.array([[-g, g], [0.5, 0.5]])


def _to_w(a: float, grad_ab: np.ndarray) -> np.ndarray:
    return grad_ab @ _dadw(a)


def _rot(v: np.ndarray) -> np.ndarray:
    return np.array([-v[1], v[0]])


@dataclass(frozen=True, slots=True)
class Orientation:
    E_w: np.ndarray
    E_ab: np.ndarray
    column: np.ndarray
    grad_norm: float


def tangent_orientation(spec, q: int, point: Sequence[float]) -> Orientation:
    a, b = float(point[0]), float(point[1])
    if a == 0.0:
        raise RankDeficient("the chart is singular at a = 0")
    _, g_ab, prod = _grad_ab(q, a, b)
    g_w = _to_w(a, g_ab)
    norm = float(np.linalg.norm(g_w))
    if norm < settings.RANK_TOL:
        raise RankDeficient("gradient of the relation vanishes", a=a, b=b, norm=norm)
    if prod == 0.0:
        raise RankDeficient("normalising derivative vanishes (orbit meets -a)", a=a, b=b)
    column = g_w / prod
    e_w = _rot(column) / np.linalg.norm(column)
    e_ab = _dadw(a) @ e_w
    e_ab = e_ab / np.linalg.norm(e_ab)
    return Orientation(E_w=e_w, E_ab=e_ab, column=column, grad_norm=norm)


# =========================
# Curves
# =========================
@dataclass(frozen=True, slots=True)
class BoneEvent:
    index: int
    type: Literal["crossing", "near_parabolic"]
    i: int | None = None
    point: tuple[float, float] | None = None


@dataclass(frozen=True)
class BoneCurve:
    q: int
    points: np.ndarray
    # tracer tangent in (a, b); continuous along the polyline
    tangents: np.ndarray
    E_w: np.ndarray
    E_ab: np.ndarray
    events: list[BoneEvent]
    stop_reason: str
    lap_entropy: list[float | None] | None = None
    meta: dict = field(default_factory=dict)

    def crossings(self) -> list[BoneEvent]:
        return [e for e in self.events if e.type == "crossing"]

    def residuals(self) -> np.ndarray:
        return np.array([abs(residual(self.q, a, b)) for a, b in self.points])

    def orientation_continuous(self) -> bool:
        """E_w keeps its orientation between crossing events."""
        cut = {e.index for e in self.crossings()}
        for k in range(len(self.points) - 1):
            if k in cut:
                continue
            if float(self.E_w[k] @ self.E_w[k + 1]) <= 0.0:
                return False
        return True


def _project(q: int, guess: np.ndarray, t: np.ndarray, anchor: np.ndarray, tol: float) -> np.ndarray | None:
    """Newton on [R = 0, t.(x - anchor) = 0]."""
    x = guess.astype(float).copy()
    for _ in range(settings.NEWTON_MAX_ITER):
        r, g, _ = _grad_ab(q, x[0], x[1])
        F = np.array([r, float(t @ (x - anchor))])
        J = np.array([g, t])
        try:
            dx = np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            return None
        x = x - dx
        if not np.all(np.isfinite(x)):
            return None
        if np.linalg.norm(dx) < 1e-14 * (1.0 + np.linalg.norm(x)):
            break
    if abs(residual(q, x[0], x[1])) <= tol * (1.0 + abs(x[1])):
        return x
    return None


def _unit_tangent(q: int, x: np.ndarray) -> tuple[np.ndarray, float]:
    _, g, _ = _grad_ab(q, x[0], x[1])
    n = float(np.linalg.norm(g))
    return _rot(g) / n if n > 0 else np.zeros(2), n


def _orientation_arrays(q: int, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    e_w = np.zeros_like(pts)
    e_ab = np.zeros_like(pts)
    for k, (a, b) in enumerate(pts):
        try:
            o = tangent_orientation(None, q, (a, b))
            e_w[k], e_ab[k] = o.E_w, o.E_ab
        except RankDeficient:
            # exactly at a crossing: keep the neighbour's orientation
            if k:
                e_w[k], e_ab[k] = e_w[k - 1], e_ab[k - 1]
    return e_w, e_ab


def trace_bone(
    q: int,
    seed: Sequence[float],
    step: float | None = None,
    n_steps: int = 200,
    direction: int = 1,
    bounds: tuple[tuple[float, float], tuple[float, float]] | None = None,
) -> BoneCurve:
    """
    Pseudo-arclength continuation of f^q(a) = a from `seed`; direction +1
    starts along E. Stops at n_steps, at a = 0, on leaving `bounds`, or when
    the corrector fails ten halvings in a row.
    """
    if q < 1:
        raise DomainError("q must be >= 1")
    h0 = settings.BONE_STEP if step is None else step
    tol = settings.CURVE_TOL
    x = np.asarray(seed, dtype=float)
    if x[0] <= 0.0:
        raise SeedNotOnCurve("seed must have a > 0", seed=list(x))

    _, g0, _ = _grad_ab(q, x[0], x[1])
    # constraint along the tangent, correction along the gradient
    t0 = _rot(g0) / max(float(np.linalg.norm(g0)), 1e-300)
    on = _project(q, x, t0, x, tol)
    if on is None:
        raise SeedNotOnCurve("Newton could not reach the curve from the seed", seed=list(x))
    x = on

    t, gnorm = _unit_tangent(q, x)
    try:
        e = tangent_orientation(None, q, x).E_ab
        if float(t @ e) < 0.0:
            t = -t
    except RankDeficient:
        pass
    t = t * (1 if direction >= 0 else -1)

    pts = [x.copy()]
    tans = [t.copy()]
    events: list[BoneEvent] = []
    stop = "n_steps"
    h = h0
    for n in range(n_steps):
        accepted = None
        for _ in range(10):
            pred = x + h * t
            y = _project(q, pred, t, pred, tol)
            if y is not None:
                t_new, gnorm = _unit_tangent(q, y)
                if float(t_new @ t) < 0.0:
                    t_new = -t_new
                if float(t_new @ t) >= 0.5:
                    accepted = (y, t_new)
                    break
            h *= 0.5
        if accepted is None:
            if n == 0:
                raise StepFailure("first continuation step failed", last_point=list(x))
            stop = "step_failure"
            logger.info("trace_bone q=%d: corrector failed after %d steps at %s", q, n, x)
            break
        x, t = accepted
        h = min(h0, 2.0 * h)
        if x[0] <= _A_MIN:
            stop = "a_zero"
            break
        if bounds is not None:
            (a_lo, a_hi), (b_lo, b_hi) = bounds
            if not (a_lo <= x[0] <= a_hi and b_lo <= x[1] <= b_hi):
                stop = "bounds"
                break
        pts.append(x.copy())
        tans.append(t.copy())
        if gnorm < 1e-6 * (1.0 + abs(x[1])):
            events.append(BoneEvent(index=len(pts) - 1, type="near_parabolic", point=(x[0], x[1])))
            logger.warning("trace_bone q=%d: near-singular point %s (|grad| = %.3g)", q, x, gnorm)

    points = np.array(pts)
    e_w, e_ab = _orientation_arrays(q, points)
    curve = BoneCurve(
        q=q,
        points=points,
        tangents=np.array(tans),
        E_w=e_w,
        E_ab=e_ab,
        events=events,
        stop_reason=stop,
    )
    return replace(curve, events=sorted(events + detect_crossings(None, curve), key=lambda ev: ev.index))


def trace_component(
    q: int,
    seed: Sequence[float],
    step: float | None = None,
    n_steps: int = 200,
    bounds=None,
) -> BoneCurve:
    """Both directions from the seed, joined into one polyline oriented along E at the seed."""
    fwd = trace_bone(q, seed, step, n_steps, 1, bounds)
    back = trace_bone(q, seed, step, n_steps, -1, bounds)
    head = back.points[1:][::-1]
    points = np.vstack([head, fwd.points]) if len(head) else fwd.points
    tangents = np.vstack([-back.tangents[1:][::-1], fwd.tangents]) if len(head) else fwd.tangents
    e_w, e_ab = _orientation_arrays(q, points)
    offset = len(head)
    near = [replace(ev, index=ev.index + offset) for ev in fwd.events if ev.type == "near_parabolic"]
    near += [replace(ev, index=offset - ev.index) for ev in back.events if ev.type == "near_parabolic" and ev.index]
    curve = BoneCurve(
        q=q,
        points=points,
        tangents=tangents,
        E_w=e_w,
        E_ab=e_ab,
        events=near,
        stop_reason=f"{back.stop_reason}/{fwd.stop_reason}",
        meta={"seed_index": offset},
    )
    events = sorted(near + detect_crossings(None, curve), key=lambda ev: ev.index)
    crossings = sum(ev.type == "crossing" for ev in events)
    if crossings > 1:
        logger.warning("trace_component q=%d: %d crossings on one component", q, crossings)
    return replace(curve, events=events)


def find_bone_seeds(
    q: int,
    a_range: tuple[float, float] = (0.2, 1.2),
    b_range: tuple[float, float] = (-1.0, 1.0),
    grid: tuple[int, int] = (41, 81),
) -> list[tuple[float, float]]:
    """Sign changes of R in b along vertical grid lines, bisected onto the curve; minimal period q only."""
    out: list[tuple[float, float]] = []
    for a in np.linspace(a_range[0], a_range[1], grid[0]):
        a = float(a)
        if a <= 0.0:
            continue
        bs = np.linspace(b_range[0], b_range[1], grid[1])
        rs = [residual(q, a, float(b)) for b in bs]
        for lo, hi, r_lo, r_hi in zip(bs[:-1], bs[1:], rs[:-1], rs[1:]):
            if r_lo == 0.0:
                b = float(lo)
            elif (r_lo > 0) == (r_hi > 0):
                continue
            else:
                lo, hi = float(lo), float(hi)
                for _ in range(200):
                    mid = 0.5 * (lo + hi)
                    if mid in (lo, hi):
                        break
                    if (residual(q, a, mid) > 0) == (r_lo > 0):
                        lo = mid
                    else:
                        hi = mid
                b = 0.5 * (lo + hi)
            if _minimal_period(q, a, b):
                out.append((a, b))
    return out


def _minimal_period(q: int, a: float, b: float) -> bool:
    x = a
    for k in range(1, q):
        x = x**3 - 3.0 * a * a * x + b
        if q % k == 0 and abs(x - a) < 1e-8 * (1.0 + abs(a)):
            return False
    return True


# =========================
# Crossings
# =========================
def _crossing_value(q: int, i: int, p: np.ndarray) -> float:
    return _forward(p[0], p[1], 1, i)[0] + p[0]


def detect_crossings(spec, curve: BoneCurve) -> list[BoneEvent]:
    """Sign changes of s_i = f^i(a) + a, 0 < i < q, refined by bisection with projection onto the curve."""
    q = curve.q
    pts = curve.points
    events: list[BoneEvent] = []
    for i in range(1, q):
        vals = [_crossing_value(q, i, p) for p in pts]
        for k in range(len(pts) - 1):
            v0, v1 = vals[k], vals[k + 1]
            if v0 == 0.0:
                events.append(BoneEvent(index=k, type="crossing", i=i, point=(float(pts[k][0]), float(pts[k][1]))))
                continue
            if (v0 > 0) == (v1 > 0) or v1 == 0.0:
                continue
            p = _refine(q, i, pts[k], pts[k + 1], v0)
            if not _on_crossing(q, i, p):
                logger.info("detect_crossings q=%d i=%d: dropped sign change at %s, refinement left the curve", q, i, p.tolist())
                continue
            events.append(BoneEvent(index=k, type="crossing", i=i, point=(float(p[0]), float(p[1]))))
    if len(events) > 1:
        logger.info("detect_crossings q=%d: %d crossing events on one trace", q, len(events))
    return sorted(events, key=lambda ev: ev.index)


def _on_crossing(q: int, i: int, p: np.ndarray) -> bool:
    scale = max(1.0, abs(float(p[0])), abs(float(p[1])))
    tol = settings.CURVE_TOL * scale
    return abs(residual(q, p[0], p[1])) <= 10.0 * tol and abs(_crossing_value(q, i, p)) <= 1e3 * tol


def _refine(q: int, i: int, p0: np.ndarray, p1: np.ndarray, v0: float) -> np.ndarray:
    chord = p1 - p0
    length = float(np.linalg.norm(chord))
    direction = chord / length
    lo, hi = 0.0, 1.0
    best = p0
    while (hi - lo) * length > settings.CROSSING_TOL:
        mid = 0.5 * (lo + hi)
        guess = p0 + mid * chord
        p = _project(q, guess, direction, guess, settings.CURVE_TOL)
        if p is None:
            p = guess
        best = p
        if (_crossing_value(q, i, p) > 0) == (v0 > 0):
            lo = mid
        else:
            hi = mid
    return best


def _relation_w(fam_values: np.ndarray, sign: int, n: int, target_sign: int) -> float:
    """f^n(sign * a) - target_sign * a at the chart point of the critical values."""
    a, b = _CUBIC.params_from_values(list(fam_values))
    a, b = a.real, b.real
    return _forward(a, b, sign, n)[0] - target_sign * a


def directional_transversality(spec, curve: BoneCurve, event: BoneEvent, reverse: bool = False, step: float = 1e-6) -> float:
    """
    At a crossing f^i(a) = -a: E from the relation of -a, f^{q-i}(-a) = a,
    normalised by Df^{q-i-1}(f(-a)); returns the derivative along E of
    f^i(a) + a divided by Df^{i-1}(f(a)). E is oriented with the relation of
    -a taken first, which makes the value positive at every crossing.
    """
    if event.type != "crossing" or event.i is None:
        raise DomainError("directional transversality is evaluated at crossing events")
    q, i = curve.q, event.i
    a, b = event.point
    _, r2a, r2b, prod2 = _forward(a, b, -1, q - i)
    g2 = _to_w(a, np.array([r2a - 1.0, r2b]))
    if float(np.linalg.norm(g2)) < settings.RANK_TOL or prod2 == 0.0:
        raise NearParabolic("second relation is singular at the crossing", a=a, b=b)
    column = g2 / prod2
    # the relation of -a comes first: in the swapped chart (w2, w1) E = rot(column)
    E = np.array([column[1], -column[0]]) / np.linalg.norm(column)

    w = np.array(_CUBIC.critical_values((a, b)).real)
    h = step * max(1.0, float(np.max(np.abs(w))))
    up = _relation_w(w + h * E, 1, i, -1)
    down = _relation_w(w - h * E, 1, i, -1)
    derivative = (up - down) / (2.0 * h)
    prod1 = _forward(a, b, 1, i)[3]
    if prod1 == 0.0:
        raise NearParabolic("first relation normaliser vanishes", a=a, b=b)
    value = derivative / prod1
    return -value if reverse else value


# =========================
# Entropy and ordering
# =========================
@dataclass(frozen=True)
class EntropyReport:
    values: list[float | None]
    segments: list[tuple[int, int, str]]
    monotone: bool
    opposite: bool
    escaped: int = 0


def _direction(vals: list[float], tol: float) -> str:
    if not vals or max(vals) - min(vals) <= tol:
        return "flat"
    up = all(b >= a - tol for a, b in zip(vals[:-1], vals[1:]))
    down = all(b <= a + tol for a, b in zip(vals[:-1], vals[1:]))
    if up:
        return "non_decreasing"
    if down:
        return "non_increasing"
    return "none"


def entropy_along(spec, curve: BoneCurve, n: int, stride: int = 1, tol: float | None = None) -> EntropyReport:
    tol = settings.ENTROPY_TOL if tol is None else tol
    values: list[float | None] = [None] * len(curve.points)
    escaped = 0
    for k in range(0, len(curve.points), max(1, stride)):
        a, b = curve.points[k]
        try:
            values[k] = lap_numbers(CubicSpec(), (float(a), float(b)), n).entropy_estimate
        except Escape:
            escaped += 1
    cuts = sorted({ev.index for ev in curve.crossings()})
    bounds = [0] + [c + 1 for c in cuts] + [len(curve.points)]
    segments = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        seg = [v for v in values[lo:hi] if v is not None]
        segments.append((lo, hi - 1, _direction(seg, tol)))
    monotone = all(s[2] != "none" for s in segments)
    opposite = True
    for (_, _, d0), (_, _, d1) in zip(segments[:-1], segments[1:]):
        if {d0, d1} == {"non_decreasing"} or {d0, d1} == {"non_increasing"}:
            opposite = False
    return EntropyReport(values=values, segments=segments, monotone=monotone, opposite=opposite, escaped=escaped)


def ordering_changes(spec, curve: BoneCurve) -> list[int]:
    """Indices k where the order of a, f(a), ..., f^{q-1}(a) differs from point k-1."""
    changes = []
    prev = None
    for k, (a, b) in enumerate(curve.points):
        orbit = [a]
        for _ in range(curve.q - 1):
            x = orbit[-1]
            orbit.append(x**3 - 3.0 * a * a * x + b)
        order = tuple(np.argsort(orbit, kind="stable"))
        if prev is not None and order != prev:
            changes.append(k)
        prev = order
    return changes


def with_entropy(curve: BoneCurve, report: EntropyReport) -> BoneCurve:
    return replace(curve, lap_entropy=list(report.values))


__all__ = [
    "BoneCurve",
    "BoneEvent",
    "EntropyReport",
    "Orientation",
    "detect_crossings",
    "directional_transversality",
    "entropy_along",
    "find_bone_seeds",
    "ordering_changes",
    "residual",
    "tangent_orientation",
    "trace_bone",
    "trace_component",
    "with_entropy",
]
