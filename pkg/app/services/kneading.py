"""
Milnor-Thurston symbolic dynamics for the unimodal families, lap numbers and
entropy estimates (lap counting also covers the bimodal cubic).

Symbol convention: i_k = orientation * sign(f^k(x0) - x0), where orientation
is +1 for minimum-type (additive) families and -1 for maximum-type
(multiplicative) ones. With it, kneading is increasing in c for additive
families and decreasing in w for multiplicative ones.
"""
from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

from app.core.config import escape_bound, settings
from app.core.errors import DomainError, Escape, Incomparable
from app.services.families import Family, family_for

logger = logging.getLogger(__name__)


class Ordering(enum.Enum):
    LESS = "Less"
    EQUAL = "Equal"
    GREATER = "Greater"


@dataclass(frozen=True, slots=True)
class KneadingSequence:
    symbols: tuple[int, ...]
    terminated: bool
    orientation: int = 1

    def as_text(self) -> str:
        return ",".join(f"{s:+d}" if s else "0" for s in self.symbols)


@dataclass(frozen=True, slots=True)
class LapTable:
    laps: tuple[int, ...]
    entropy_estimate: float
    fit_error: float
    interval: tuple[float, float] = (0.0, 0.0)

    def submultiplicative(self) -> bool:
        return is_submultiplicative(self.laps)


def _unimodal(fam: Family) -> None:
    if fam.nu != 1:
        raise DomainError("kneading sequences are defined for unimodal kinds only", kind=fam.kind)


def _sign(x: float, tol: float) -> int:
    if x == 0.0 or abs(x) < tol:
        return 0
    return 1 if x > 0 else -1


def kneading(spec, c: float, n: int, zero_tol: float | None = None) -> KneadingSequence:
    fam = family_for(spec)
    _unimodal(fam)
    if n < 1:
        raise DomainError("n must be >= 1")
    theta = fam.theta(c)
    x0 = fam.critical_points(theta)[0].real
    bound = escape_bound(fam.escape_param(theta))

    orbit = []
    x = x0
    for k in range(1, n + 1):
        x = fam.eval(theta, x).real
        if not math.isfinite(x) or abs(x) > bound:
            raise Escape("critical orbit left the dynamical interval", c=c, k=k)
        orbit.append(x)

    length = max(orbit + [x0]) - min(orbit + [x0])
    tol = (settings.ZERO_TOL if zero_tol is None else zero_tol) * max(1.0, length)
    symbols: list[int] = []
    for x in orbit:
        s = fam.orientation * _sign(x - x0, tol)
        symbols.append(s)
        if s == 0:
            return KneadingSequence(tuple(symbols), True, fam.orientation)
    return KneadingSequence(tuple(symbols), False, fam.orientation)


def itinerary(fam: Family, theta, n: int, zero_tol: float | None = None) -> tuple[int, ...]:
    """
    First n symbols without early termination; escaping orbits keep the sign
    they escaped with. Used to guide the superstable enumeration, so signs are
    exact unless `zero_tol` is given.
    """
    x0 = fam.critical_points(theta)[0].real
    bound = escape_bound(fam.escape_param(theta))
    tol = 0.0 if zero_tol is None else zero_tol * max(1.0, bound)
    out: list[int] = []
    x = x0
    for _ in range(n):
        if abs(x) <= bound:
            x = fam.eval(theta, x).real
        if not math.isfinite(x):
            x = math.copysign(math.inf, x) if not math.isnan(x) else math.inf
        out.append(fam.orientation * _sign(x - x0, tol))
    return tuple(out)


def compare(k1: KneadingSequence, k2: KneadingSequence) -> Ordering:
    if not k1.symbols or not k2.symbols:
        raise DomainError("kneading sequences must be nonempty")
    s1, s2 = k1.symbols, k2.symbols
    p1 = p2 = 1
    for a, b in zip(s1, s2):
        p1 *= a
        p2 *= b
        if a != b:
            return Ordering.LESS if p1 < p2 else Ordering.GREATER
    if len(s1) != len(s2):
        shorter = k1 if len(s1) < len(s2) else k2
        if shorter.terminated:
            raise Incomparable("terminated sequence is a strict prefix of the other")
    return Ordering.EQUAL


# =========================
# Lap numbers
# =========================
def dynamical_interval(fam: Family, theta, n_iter: int | None = None) -> tuple[float, float]:
    """
    Hull of the bounded critical orbits. For x^d + c this is [c, f(c)] when
    that interval is invariant. Escape if every critical orbit escapes or an
    escaping critical point sits inside the hull.
    """
    n_iter = settings.HULL_ITERATES if n_iter is None else n_iter
    bound = escape_bound(fam.escape_param(theta))
    bounded: list[float] = []
    escaped: list[float] = []
    for p in fam.critical_points(theta):
        x = p.real
        pts = []
        for _ in range(n_iter):
            x = fam.eval(theta, x).real
            if not math.isfinite(x) or abs(x) > bound:
                escaped.append(p.real)
                break
            pts.append(x)
        else:
            bounded.extend(pts)
    if not bounded:
        raise Escape("all critical orbits escape", theta=list(theta))
    lo, hi = min(bounded), max(bounded)
    for p in escaped:
        if lo <= p <= hi:
            raise Escape("an escaping critical point lies inside the dynamical interval", point=p)
    return lo, hi


def lap_counts(fam: Family, theta, n_max: int) -> tuple[list[int], tuple[float, float]]:
    """
    Lambda_1..Lambda_n by pushing forward the images of monotone laps; laps
    with identical images are merged with multiplicity.
    """
    lo, hi = dynamical_interval(fam, theta)
    length = hi - lo
    if length <= 0.0:
        return [1] * n_max, (lo, hi)

    bound = escape_bound(fam.escape_param(theta))
    turning = sorted(fam.turning_points(theta))
    eps = settings.LAP_EDGE_TOL * max(1.0, length)

    def key(a: float, b: float) -> tuple[float, float]:
        return (round((a - lo) / length, 11), round((b - lo) / length, 11))

    pieces: dict[tuple[float, float], list] = {key(lo, hi): [lo, hi, 1]}
    laps: list[int] = []
    for _ in range(n_max):
        nxt: dict[tuple[float, float], list] = {}
        total = 0
        for a, b, count in pieces.values():
            edges = [a] + [t for t in turning if a + eps < t < b - eps] + [b]
            total += count * (len(edges) - 1)
            images = [fam.eval(theta, x).real for x in edges]
            for u, v in zip(images[:-1], images[1:]):
                lo_i, hi_i = (u, v) if u <= v else (v, u)
                if abs(lo_i) > bound or abs(hi_i) > bound:
                    raise Escape("lap image left the escape disk", theta=list(theta))
                k = key(lo_i, hi_i)
                if k in nxt:
                    nxt[k][2] += count
                else:
                    nxt[k] = [lo_i, hi_i, count]
        laps.append(total)
        pieces = nxt
    return laps, (lo, hi)


def entropy_from_laps(laps: Sequence[int]) -> tuple[float, float]:
    """Least-squares slope of log Lambda_n against n over the last half of the table."""
    n_max = len(laps)
    if n_max == 0:
        return 0.0, 0.0
    start = n_max - max(2, n_max // 2)
    if start < 0:
        return max(0.0, math.log(laps[-1]) / n_max), 0.0
    ns = np.arange(start + 1, n_max + 1, dtype=float)
    ys = np.log(np.asarray(laps[start:], dtype=float))
    slope, intercept = np.polyfit(ns, ys, 1)
    resid = ys - (slope * ns + intercept)
    return max(0.0, float(slope)), float(np.sqrt(np.mean(resid**2)))


def is_submultiplicative(laps: Sequence[int]) -> bool:
    n = len(laps)
    for m in range(1, n + 1):
        for k in range(1, n - m + 1):
            if laps[m + k - 1] > laps[m - 1] * laps[k - 1]:
                return False
    return True


def lap_numbers(spec, c, n_max: int) -> LapTable:
    """`c` is the scalar parameter, or (a, b) for the cubic (bimodal lap counting)."""
    fam = family_for(spec)
    if n_max < 1 or n_max > settings.LAP_MAX:
        raise DomainError(f"n_max must lie in 1..{settings.LAP_MAX}", n_max=n_max)
    laps, interval = lap_counts(fam, fam.theta(c), n_max)
    h, err = entropy_from_laps(laps)
    return LapTable(laps=tuple(laps), entropy_estimate=h, fit_error=err, interval=interval)


# =========================
# Scans
# =========================
@dataclass(frozen=True, slots=True)
class ScanRow:
    c: float
    kneading: KneadingSequence | None
    lambda_n: int | None
    entropy: float | None
    escaped: bool = False


@dataclass(frozen=True, slots=True)
class Violation:
    c: float
    c_next: float
    reason: str


@dataclass(frozen=True, slots=True)
class ScanReport:
    violations: list[Violation]
    rows: list[ScanRow]
    orientation: int
    direction: str
    meta: dict = field(default_factory=dict)


def _scan_point(spec, n: int, n_laps: int, c: float) -> ScanRow:
    try:
        k = kneading(spec, c, n)
    except Escape:
        return ScanRow(c=c, kneading=None, lambda_n=None, entropy=0.0, escaped=True)
    lam = h = None
    if n_laps:
        try:
            table = lap_numbers(spec, c, n_laps)
            lam, h = table.laps[-1], table.entropy_estimate
        except Escape:
            lam, h = None, 0.0
    return ScanRow(c=c, kneading=k, lambda_n=lam, entropy=h)


def monotonicity_scan(
    spec,
    c_lo: float,
    c_hi: float,
    grid_points: int,
    n: int,
    n_laps: int = 0,
    jobs: int | None = None,
) -> ScanReport:
    fam = family_for(spec)
    _unimodal(fam)
    if c_lo >= c_hi:
        raise DomainError("c_lo must be smaller than c_hi", c_lo=c_lo, c_hi=c_hi)
    grid = [float(c) for c in np.linspace(c_lo, c_hi, max(1, grid_points))]
    jobs = settings.JOBS if jobs is None else jobs
    work = partial(_scan_point, spec, n, n_laps)
    if jobs > 1 and len(grid) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(work, grid, chunksize=max(1, len(grid) // (4 * jobs))))
    else:
        rows = [work(c) for c in grid]

    # kneading grows with c for minimum-type maps and shrinks for maximum-type ones
    bad = Ordering.LESS if fam.orientation > 0 else Ordering.GREATER
    violations: list[Violation] = []
    live = [r for r in rows if not r.escaped]
    for prev, cur in zip(live[:-1], live[1:]):
        try:
            if compare(cur.kneading, prev.kneading) is bad:
                violations.append(Violation(prev.c, cur.c, "order"))
        except Incomparable:
            violations.append(Violation(prev.c, cur.c, "incomparable"))
    escaped = sum(r.escaped for r in rows)
    if escaped:
        logger.info("monotonicity_scan: %d of %d grid points escaped", escaped, len(rows))
    return ScanReport(
        violations=violations,
        rows=rows,
        orientation=fam.orientation,
        direction="increasing" if fam.orientation > 0 else "decreasing",
        meta={"symbols": "orientation*sign(f^k(x0)-x0)", "escaped": escaped},
    )
