from __future__ import annotations

import logging
from typing import Callable

import numpy as np

from app.core.config import settings
from app.core.errors import NonConvergence, Overflow

logger = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


def faddeev_leverrier(matrix: np.ndarray) -> np.ndarray:
    """
    Coefficients [1, a_1, ..., a_n] (ascending in rho) of det(I - rho M).

    M_k = M M_{k-1} + a_{k-1} I,  a_k = -tr(M M_k) / k
    """
    m = np.asarray(matrix, dtype=complex)
    n = m.shape[0]
    coeffs = np.zeros(n + 1, dtype=complex)
    coeffs[0] = 1.0
    mk = np.zeros_like(m)
    eye = np.eye(n, dtype=complex)
    for k in range(1, n + 1):
        mk = m @ mk + coeffs[k - 1] * eye
        coeffs[k] = -np.trace(m @ mk) / k
    return coeffs


def trim_trailing(coeffs: np.ndarray, rel_tol: float = 1e-13) -> np.ndarray:
    """Drop highest-degree coefficients that are rounding noise."""
    c = np.asarray(coeffs, dtype=complex)
    scale = max(1.0, float(np.max(np.abs(c))))
    end = len(c)
    while end > 1 and abs(c[end - 1]) <= rel_tol * scale:
        end -= 1
    return c[:end]


def check_overflow(coeffs: np.ndarray) -> None:
    big = float(np.max(np.abs(coeffs))) if len(coeffs) else 0.0
    if not np.isfinite(big) or big > settings.DETPOLY_OVERFLOW:
        raise Overflow("determinant polynomial coefficients overflow", max_abs=big)


def aberth_roots(coeffs_desc, tol: float | None = None, max_sweeps: int | None = None) -> np.ndarray:
    """
    Simultaneous Aberth-Ehrlich iteration for the roots of
    c[0] x^n + c[1] x^{n-1} + ... + c[n].
    """
    tol = settings.ABERTH_TOL if tol is None else tol
    max_sweeps = settings.ABERTH_MAX_SWEEPS if max_sweeps is None else max_sweeps

    c = np.asarray(coeffs_desc, dtype=complex)
    nz = np.flatnonzero(c)
    if len(nz) == 0:
        return np.zeros(0, dtype=complex)
    c = c[nz[0]:]
    n = len(c) - 1
    if n == 0:
        return np.zeros(0, dtype=complex)
    c = c / c[0]
    # exact zero roots are split off
    n_zero = 0
    while n > 0 and c[-1] == 0:
        c = c[:-1]
        n -= 1
        n_zero += 1
    if n == 0:
        return np.zeros(n_zero, dtype=complex)

    dc = np.polyder(c)
    abs_c = np.abs(c)
    # Fujiwara-type bound for the initial circle
    radius = 2.0 * max(abs_c[k] ** (1.0 / k) for k in range(1, n + 1))
    radius = max(radius, 1e-300)
    angles = 2.0 * np.pi * np.arange(n) / n + 0.4
    z = radius * np.exp(1j * angles)

    for sweep in range(1, max_sweeps + 1):
        worst = 0.0
        settled = True
        for i in range(n):
            zi = z[i]
            p = np.polyval(c, zi)
            # rounding level of p at zi
            bound = 4.0 * _EPS * np.polyval(abs_c, abs(zi))
            if abs(p) <= bound:
                continue
            dp = np.polyval(dc, zi)
            diff = zi - np.delete(z, i)
            s = np.sum(1.0 / diff) if n > 1 else 0.0
            ratio = p / dp if dp != 0 else p
            delta = ratio / (1.0 - ratio * s)
            z[i] = zi - delta
            rel = abs(delta) / (1.0 + abs(z[i]))
            worst = max(worst, rel)
            if rel >= tol:
                settled = False
        if settled:
            logger.debug("aberth: degree %d converged after %d sweeps (last step %.3g)", n, sweep, worst)
            return np.concatenate([z, np.zeros(n_zero, dtype=complex)])

    raise NonConvergence("Aberth iteration did not converge", degree=n, sweeps=max_sweeps)


def eval_ascending(coeffs: np.ndarray, rho: complex) -> complex:
    return complex(np.polyval(np.asarray(coeffs, dtype=complex)[::-1], rho))


def interpolate_on_circle(fn: Callable[[complex], complex], degree: int, radius: float = 1.0) -> np.ndarray:
    """Ascending coefficients of a polynomial of known degree from its values on a circle."""
    m = degree + 1
    nodes = radius * np.exp(2j * np.pi * np.arange(m) / m)
    values = np.array([fn(x) for x in nodes], dtype=complex)
    coeffs = np.fft.fft(values) / m
    return coeffs / radius ** np.arange(m)
