"""
Concrete one- and two-parameter families G_w(z).

Every family is addressed through its *critical values*: for the additive
kinds w = c, for the multiplicative kinds w is the multiplier (the marked
maximum is normalised to f(x0) = 1), and the cubic x^3 - 3a^2 x + b is
charted by (w1, w2) = (f(a), f(-a)). Native parameters (`theta`) are always a
tuple: (c,), (w,) or (a, b).
"""
from __future__ import annotations

import cmath
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from app.core.errors import DegenerateChart, DomainError, NonRealError, NoSolution
from app.schemas.family import (
    CubicSpec,
    FlatAdditiveSpec,
    MonicAdditiveSpec,
    MultiplicativeSpec,
    PowerAdditiveSpec,
)

logger = logging.getLogger(__name__)

Theta = tuple


def _side(z: complex) -> int:
    return 1 if z.real >= 0 else -1


def _is_real(z: complex) -> bool:
    return complex(z).imag == 0.0


def _real_root(x: float, n: float = 3.0) -> float:
    return math.copysign(abs(x) ** (1.0 / n), x)


# =========================
# Families
# =========================
class Family(ABC):
    kind: str = "family"
    nu: int = 1
    # +1: minimum type (decreasing-then-increasing), -1: maximum type
    orientation: int = 1
    # False when w -> R(w) cannot be evaluated at complex w (complex-step not allowed)
    analytic_in_w: bool = True

    def theta(self, w) -> Theta:
        if isinstance(w, tuple):
            return w
        if isinstance(w, (list, np.ndarray)):
            return tuple(w)
        return (w,)

    @abstractmethod
    def eval(self, theta: Theta, z: complex) -> complex: ...

    @abstractmethod
    def deriv_z(self, theta: Theta, z: complex) -> complex: ...

    @abstractmethod
    def deriv_w(self, theta: Theta, z: complex, k: int) -> complex: ...

    @abstractmethod
    def critical_points(self, theta: Theta) -> list[complex]: ...

    def critical_values(self, theta: Theta) -> np.ndarray:
        return np.array([self.eval(theta, p) for p in self.critical_points(theta)], dtype=complex)

    def params_from_values(self, values: Sequence[complex]) -> Theta:
        return (values[0],)

    def marked_jacobian(self, theta: Theta) -> np.ndarray:
        """p_{j,k} = dp_j/dw_k; zero when the marked points do not move."""
        return np.zeros((self.nu, self.nu), dtype=complex)

    def marked_points_for_values(self, values: Sequence[complex]) -> list[complex]:
        return self.critical_points(self.params_from_values(values))

    def turning_points(self, theta: Theta) -> list[float]:
        return [complex(p).real for p in self.critical_points(theta)]

    def escape_param(self, theta: Theta) -> float:
        return abs(complex(theta[0]))

    def preimage(self, theta: Theta, target: complex, near: complex) -> complex | None:
        """Closed-form branch of G_theta^{-1}(target) on the side of `near`, if the family has one."""
        return None


class MonicAdditive(Family):
    kind = "monic_additive"

    def __init__(self, d: int):
        self.d = int(d)

    def eval(self, theta, z):
        return complex(z) ** self.d + theta[0]

    def deriv_z(self, theta, z):
        return self.d * complex(z) ** (self.d - 1)

    def deriv_w(self, theta, z, k):
        return 1.0 + 0j

    def critical_points(self, theta):
        return [0j]

    def turning_points(self, theta):
        return [0.0] if self.d % 2 == 0 else []

    def preimage(self, theta, target, near):
        rhs = complex(target) - theta[0]
        if rhs == 0:
            return 0j
        root = cmath.exp(cmath.log(rhs) / self.d)
        omega = cmath.exp(2j * math.pi / self.d)
        candidates = [root * omega**k for k in range(self.d)]
        return min(candidates, key=lambda r: abs(r - near))


class PowerAdditive(Family):
    """|x|^{l-} + c for x < 0 and x^{l+} + c for x >= 0."""

    kind = "power_additive"

    def __init__(self, ell_minus: float, ell_plus: float):
        self.ell_minus = float(ell_minus)
        self.ell_plus = float(ell_plus)
        self.integral = self.ell_minus.is_integer() and self.ell_plus.is_integer()
        self.analytic_in_w = self.integral

    def _ell(self, s: int) -> float:
        return self.ell_plus if s > 0 else self.ell_minus

    def _check(self, z: complex) -> complex:
        z = complex(z)
        if not _is_real(z) and not self.integral:
            raise NonRealError("non-integer exponent applied to a non-real point", z=z)
        return z

    def eval(self, theta, z):
        z = self._check(z)
        s = _side(z)
        ell = self._ell(s)
        if _is_real(z):
            return complex(math.pow(abs(z.real), ell)) + theta[0]
        return (s * z) ** int(ell) + theta[0]

    def deriv_z(self, theta, z):
        z = self._check(z)
        s = _side(z)
        ell = self._ell(s)
        if z == 0:
            if ell > 1:
                return 0j
            raise DomainError("one-sided derivative at the turning point for exponent 1", z=z)
        if _is_real(z):
            return complex(s * ell * math.pow(abs(z.real), ell - 1.0))
        return s * ell * (s * z) ** (int(ell) - 1)

    def deriv_w(self, theta, z, k):
        self._check(z)
        return 1.0 + 0j

    def critical_points(self, theta):
        return [0j]

    def preimage(self, theta, target, near):
        # roots formula: +-(h(f(a)) - h(f(0)))^{1/l+-}
        s = _side(complex(near))
        rhs = complex(target) - theta[0]
        if rhs == 0:
            return 0j
        return s * cmath.exp(cmath.log(rhs) / self._ell(s))


class FlatAdditive(Family):
    """b exp(-1/|x|^l) + c, extended to the sectors |arg(+-z)| < pi/(2l)."""

    kind = "flat_additive"

    def __init__(self, ell: float, b: float):
        self.ell = float(ell)
        self.b = float(b)

    def _power(self, z: complex) -> tuple[int, complex]:
        s = _side(z)
        u = s * z
        if not _is_real(z) and abs(cmath.phase(u)) >= math.pi / (2.0 * self.ell):
            raise DomainError("point outside the sector domain of the flat family", z=z)
        if _is_real(z):
            return s, complex(math.pow(abs(z.real), self.ell))
        return s, cmath.exp(self.ell * cmath.log(u))

    def _g(self, z: complex) -> complex:
        if z == 0:
            return 0j
        _, p = self._power(z)
        return self.b * cmath.exp(-1.0 / p)

    def eval(self, theta, z):
        return self._g(complex(z)) + theta[0]

    def deriv_z(self, theta, z):
        z = complex(z)
        if z == 0:
            return 0j
        s, p = self._power(z)
        g = self.b * cmath.exp(-1.0 / p)
        # g' = g * l * s * (s z)^{-l-1}
        return g * self.ell * s / (p * (s * z))

    def deriv_w(self, theta, z, k):
        return 1.0 + 0j

    def critical_points(self, theta):
        return [0j]

    def preimage(self, theta, target, near):
        s = _side(complex(near))
        ratio = (complex(target) - theta[0]) / self.b
        if ratio == 0:
            return 0j
        log_ratio = cmath.log(ratio)
        if log_ratio == 0 or (abs(log_ratio.imag) < 1e-300 and log_ratio.real >= 0):
            raise DomainError("target outside the image of the flat branch", target=target)
        power = -1.0 / log_ratio
        return s * cmath.exp(cmath.log(power) / self.ell)


class Multiplicative(Family):
    """w * f(z) with f(x0) = 1 at the marked maximum x0."""

    kind = "multiplicative"
    orientation = -1

    def __init__(self, base: str, ell: float | None = None):
        self.base = base
        self.ell = float(ell) if ell is not None else None
        if base == "sin":
            self.x0 = math.pi / 2
        elif base in ("quad4x1mx", "flat_unimodal"):
            self.x0 = 0.5
        else:
            raise DomainError(f"unknown multiplicative base {base!r}")

    def _flat(self, z: complex) -> tuple[complex, complex]:
        """(f(z), f'(z)) for the flat unimodal base."""
        ell = self.ell
        dz = z - 0.5
        if dz == 0:
            return 1 + 0j, 0j
        s = _side(dz)
        u = s * dz
        if _is_real(dz):
            p = complex(math.pow(abs(dz.real), ell))
        else:
            if abs(cmath.phase(u)) >= math.pi / (2.0 * ell):
                raise DomainError("point outside the sector domain of the flat base", z=z)
            p = cmath.exp(ell * cmath.log(u))
        e = cmath.exp(2.0**ell - 1.0 / p)
        return 1.0 - e, -e * ell * s / (p * u)

    def f(self, z: complex) -> complex:
        z = complex(z)
        if self.base == "sin":
            return cmath.sin(z)
        if self.base == "quad4x1mx":
            return 4.0 * z * (1.0 - z)
        return self._flat(z)[0]

    def df(self, z: complex) -> complex:
        z = complex(z)
        if self.base == "sin":
            return cmath.cos(z)
        if self.base == "quad4x1mx":
            return 4.0 - 8.0 * z
        return self._flat(z)[1]

    def eval(self, theta, z):
        return theta[0] * self.f(z)

    def deriv_z(self, theta, z):
        return theta[0] * self.df(z)

    def deriv_w(self, theta, z, k):
        return self.f(z)

    def critical_points(self, theta):
        return [complex(self.x0)]


class Cubic(Family):
    """x^3 - 3a^2 x + b with critical points [a, -a]."""

    kind = "cubic"
    nu = 2
    analytic_in_w = False

    def theta(self, w) -> Theta:
        a, b = w
        return (a, b)

    def eval(self, theta, z):
        a, b = theta
        z = complex(z)
        return z**3 - 3.0 * a * a * z + b

    def deriv_z(self, theta, z):
        a, _ = theta
        z = complex(z)
        return 3.0 * z * z - 3.0 * a * a

    def _da_dw(self, a: complex) -> tuple[complex, complex]:
        if a == 0:
            raise DegenerateChart("critical values coincide (a = 0)")
        g = 1.0 / (12.0 * a * a)
        return -g, g

    def deriv_w(self, theta, z, k):
        a, _ = theta
        da = self._da_dw(a)[k]
        return -6.0 * a * complex(z) * da + 0.5

    def critical_points(self, theta):
        a, _ = theta
        return [complex(a), -complex(a)]

    def critical_values(self, theta):
        a, b = theta
        return np.array([-2.0 * a**3 + b, 2.0 * a**3 + b], dtype=complex)

    def params_from_values(self, values):
        w1, w2 = complex(values[0]), complex(values[1])
        if w1 == w2:
            raise DegenerateChart("w1 = w2", w1=w1, w2=w2)
        cube = (w2 - w1) / 4.0
        if _is_real(cube):
            a = complex(_real_root(cube.real))
        else:
            # branch continuing the real root of the real part
            a0 = _real_root(cube.real) or 1.0
            a = a0 * cmath.exp(cmath.log(cube / a0**3) / 3.0)
        return (a, (w1 + w2) / 2.0)

    def marked_jacobian(self, theta):
        a, _ = theta
        d1, d2 = self._da_dw(a)
        return np.array([[d1, d2], [-d1, -d2]], dtype=complex)

    def escape_param(self, theta):
        a, b = theta
        return max(abs(complex(a)), abs(complex(b)))


@dataclass(frozen=True, slots=True)
class Reparametrization:
    """A holomorphic nu with nu(v1) = c1 (for the quadratic reparametrisation identity)."""

    name: str
    nu: Callable[[complex], complex]
    dnu: Callable[[complex], complex]
    v1: complex
    c1: complex = field(default=0j)


class ReparametrizedQuadratic(Family):
    """G^nu_v(z) = (nu(v)/v) z^2 + v; not reachable from a FamilySpec."""

    kind = "reparametrized_quadratic"

    def __init__(self, rep: Reparametrization):
        if rep.v1 == 0:
            raise DegenerateChart("v1 = 0")
        self.rep = rep

    def _phi(self, v: complex) -> complex:
        return self.rep.nu(v) / v

    def _dphi(self, v: complex) -> complex:
        return (self.rep.dnu(v) * v - self.rep.nu(v)) / (v * v)

    def eval(self, theta, z):
        v = complex(theta[0])
        return self._phi(v) * complex(z) ** 2 + v

    def deriv_z(self, theta, z):
        return 2.0 * self._phi(complex(theta[0])) * complex(z)

    def deriv_w(self, theta, z, k):
        return self._dphi(complex(theta[0])) * complex(z) ** 2 + 1.0

    def critical_points(self, theta):
        return [0j]


def family_for(spec) -> Family:
    """Resolve a FamilySpec (or pass through a Family instance)."""
    if isinstance(spec, Family):
        return spec
    if isinstance(spec, MonicAdditiveSpec):
        return MonicAdditive(spec.d)
    if isinstance(spec, PowerAdditiveSpec):
        return PowerAdditive(spec.ell_minus, spec.ell_plus)
    if isinstance(spec, FlatAdditiveSpec):
        return FlatAdditive(spec.ell, spec.b)
    if isinstance(spec, MultiplicativeSpec):
        return Multiplicative(spec.base, spec.ell)
    if isinstance(spec, CubicSpec):
        return Cubic()
    raise DomainError(f"unsupported family spec {spec!r}")


# =========================
# Operations
# =========================
def eval(spec, w, z) -> complex:  # noqa: A001 - mirrors the operation name
    fam = family_for(spec)
    return fam.eval(fam.theta(w), z)


def deriv_z(spec, w, z) -> complex:
    fam = family_for(spec)
    return fam.deriv_z(fam.theta(w), z)


def deriv_w(spec, w, z, k: int) -> complex:
    """k is 1-based as in the coordinate index w_k."""
    fam = family_for(spec)
    if not 1 <= k <= fam.nu:
        raise DomainError(f"coordinate index {k} outside 1..{fam.nu}")
    return fam.deriv_w(fam.theta(w), z, k - 1)


def critical_points(spec, w) -> list[complex]:
    fam = family_for(spec)
    return fam.critical_points(fam.theta(w))


@dataclass(frozen=True, slots=True)
class CubicChart:
    a: float
    b: float
    swapped: bool


def cubic_chart(w1: float, w2: float) -> CubicChart:
    """(w1, w2) -> canonical (a, b) with a > 0; `swapped` means f(a) = w2."""
    if w1 == w2:
        raise DegenerateChart("w1 = w2", w1=w1, w2=w2)
    cube = (w2 - w1) / 4.0
    a = _real_root(cube)
    b = (w1 + w2) / 2.0
    if a < 0:
        return CubicChart(a=-a, b=b, swapped=True)
    return CubicChart(a=a, b=b, swapped=False)


def cubic_values(a: float, b: float) -> tuple[float, float]:
    return (-2.0 * a**3 + b, 2.0 * a**3 + b)


def flat_threshold(ell: float) -> float:
    return 2.0 * (math.e * ell) ** (1.0 / ell)


def flat_beta(ell: float, b: float, boundary: bool = False) -> float:
    """
    Unique solution of 2x e^{1/x^l} = b on (0, l^{1/l}).
    With boundary=True the double root l^{1/l} is returned at b = 2(el)^{1/l}.
    """
    top = ell ** (1.0 / ell)
    thr = flat_threshold(ell)
    if b <= thr:
        if boundary and b >= thr * (1.0 - 1e-12):
            return top
        raise NoSolution("b must exceed 2(e l)^{1/l}", ell=ell, b=b, threshold=thr)

    log_b = math.log(b)

    def psi(x: float) -> float:
        return math.log(2.0 * x) + x ** (-ell) - log_b

    lo, hi = 0.5 * top, top
    while psi(lo) <= 0.0:
        lo *= 0.5
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if psi(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    beta = lo if abs(psi(lo)) < abs(psi(hi)) else hi
    logger.debug("flat_beta(ell=%s, b=%s) = %.17g", ell, b, beta)
    return beta


def chebyshev_parameter(ell: float, b: float, boundary: bool = False) -> float:
    """c = -beta: 0 -> -beta -> beta -> beta."""
    return -flat_beta(ell, b, boundary=boundary)


@dataclass(frozen=True, slots=True)
class SeparationReport:
    diam_U: float
    radius_R: float
    robust: bool
    class_F_conditions: tuple[bool, bool, bool, bool]
    details: dict = field(default_factory=dict)


def check_separation(spec) -> SeparationReport:
    if isinstance(spec, FlatAdditiveSpec):
        return _flat_separation(spec.ell, spec.b)
    if isinstance(spec, MonicAdditiveSpec):
        d = spec.d
        # U = B(0, r), F_0(U) = B*(0, r^d); need r^d > 2r
        r = 2.0 * 2.0 ** (1.0 / (d - 1))
        R = r**d
        diam = 2.0 * r
        cond = (True, True, True, R > diam)
        return SeparationReport(
            diam_U=diam,
            radius_R=R,
            robust=all(cond) and diam < R,
            class_F_conditions=cond,
            details={"r_U": r},
        )
    raise DomainError("separation is only constructed for flat_additive and monic_additive")


def _flat_separation(ell: float, b: float) -> SeparationReport:
    beta = flat_beta(ell, b)
    fam = FlatAdditive(ell, b)
    c = (-beta,)
    slope = 2.0 * ell / beta**ell

    delta = 0.5 * beta
    x0 = x1 = beta
    for _ in range(200):
        x0 = beta + delta
        x1 = fam.eval(c, x0).real
        if x1 - beta > 2.0 * (x0 - beta) and x1 + beta < b:
            break
        delta *= 0.5
    else:
        raise NoSolution("could not place x0 next to beta", ell=ell, b=b)

    R = x1 + beta
    diam = 2.0 * x0
    cond = (x0 > 0.0, math.isfinite(R), x0 > beta, diam < R)
    return SeparationReport(
        diam_U=diam,
        radius_R=R,
        robust=all(cond) and diam < R,
        class_F_conditions=cond,
        details={"beta": beta, "x0": x0, "x1": x1, "multiplier": slope},
    )
