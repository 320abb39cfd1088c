"""Bessel functions of the first kind, normal pdf/cdf, and Bessel inequality scans.

Bessel values are computed with the power series for small argument and
Miller's backward recurrence (normalised with J0 + 2*sum J_{2k} = 1)
otherwise, so no special-function library is needed in the hot paths.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, UnsupportedOrderError

MAX_ORDER = 256

_SERIES_TERMS = 48


def _bessel_series(n, x):
    # J_n(x) = (x/2)^n sum_m (-1)^m (x/2)^{2m} / (m! (m+n)!)
    half = x / 2.0
    term = 1.0
    for k in range(1, n + 1):
        term *= half / k
    total = term
    m = 0
    while m < _SERIES_TERMS:
        m += 1
        term *= -(half * half) / (m * (m + n))
        total += term
        if abs(term) < 1e-18 * max(abs(total), 1e-300):
            break
    return total


def _bessel_miller(n, x):
    # Backward recurrence from a safely high starting order; returns J_n(x).
    start = int(max(n, x)) + 51
    if start % 2:
        start += 1
    jp = 0.0
    jc = 1e-300
    result = 0.0
    norm = 0.0
    for k in range(start, 0, -1):
        jm = (2.0 * k / x) * jc - jp
        jp = jc
        jc = jm
        if k - 1 == n:
            result = jc
        if (k - 1) % 2 == 0:
            norm += jc if k - 1 == 0 else 2.0 * jc
        if abs(jc) > 1e250:
            jc *= 1e-250
            jp *= 1e-250
            result *= 1e-250
            norm *= 1e-250
    return result / norm


def bessel_j(order, x):
    """Bessel function of the first kind J_order(x) for order >= 0, x >= 0."""
    if order < 0 or order != int(order):
        raise DomainError(f"order must be a non-negative integer, got {order}")
    order = int(order)
    if order > MAX_ORDER:
        raise UnsupportedOrderError(f"order {order} exceeds maximum {MAX_ORDER}")
    if not np.isfinite(x):
        raise DomainError(f"argument must be finite, got {x}")
    if x < 0:
        raise DomainError(f"argument must be >= 0, got {x}")
    if x == 0.0:
        return 1.0 if order == 0 else 0.0
    # Series only for small argument: for x beyond ~12 its alternating terms
    # grow to ~e^x before cancelling, destroying double precision.
    if x < 12.0:
        return _bessel_series(order, x)
    return _bessel_miller(order, x)


def bessel_j_many(max_order, x):
    """J_m(x) for all m = 0..max_order at once, vectorised over an array x.

    Uses backward recurrence with per-element rescaling; intended for grid
    precomputation where x has thousands of entries.  Returns an array of
    shape (max_order + 1,) + x.shape.
    """
    if max_order > MAX_ORDER:
        raise UnsupportedOrderError(f"order {max_order} exceeds maximum {MAX_ORDER}")
    x = np.asarray(x, dtype=float)
    flat = np.ravel(x)
    out = np.zeros((max_order + 1, flat.size))
    tiny = flat < 1e-9
    xs = np.where(tiny, 1.0, flat)
    start = int(max(max_order, float(xs.max()))) + 51
    if start % 2:
        start += 1
    jp = np.zeros_like(xs)
    jc = np.full_like(xs, 1e-300)
    norm = np.zeros_like(xs)
    for k in range(start, 0, -1):
        jm = (2.0 * k / xs) * jc - jp
        jp = jc
        jc = jm
        if k - 1 <= max_order:
            out[k - 1] = jc
        if (k - 1) % 2 == 0:
            norm += jc if k - 1 == 0 else 2.0 * jc
        big = np.abs(jc) > 1e250
        if big.any():
            jp[big] *= 1e-250
            jc[big] *= 1e-250
            norm[big] *= 1e-250
            out[:, big] *= 1e-250
    out /= norm
    if tiny.any():
        out[:, tiny] = 0.0
        out[0, tiny] = 1.0
        if max_order >= 1:
            out[1, tiny] = flat[tiny] / 2.0
    return out.reshape((max_order + 1,) + x.shape)


_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_INV_SQRT_2 = 1.0 / math.sqrt(2.0)


def gaussian_pdf(x):
    if not np.isfinite(x):
        raise DomainError(f"argument must be finite, got {x}")
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


def gaussian_cdf(x):
    if not np.isfinite(x):
        raise DomainError(f"argument must be finite, got {x}")
    # erfc keeps full relative accuracy in the tails needed at |x| ~ 3
    return 0.5 * math.erfc(-x * _INV_SQRT_2)


def gaussian_pdf_cdf(x):
    """(phi(x), Phi(x)) for the standard normal."""
    return gaussian_pdf(x), gaussian_cdf(x)


@dataclass(frozen=True)
class InequalityReport:
    name: str
    grid_min: float
    grid_argmin: float
    passed: bool


# Floating point slack: g_minus(0) = 1 - 1 - 0 is exactly 0 in theory.
INEQUALITY_BOUND = -1e-12


def bessel_gap(which, s):
    """1 - J0(s) -/+ 2*J2(s) evaluated on an array of arguments."""
    j = bessel_j_many(2, np.asarray(s, dtype=float))
    if which == "minus":
        return 1.0 - j[0] - 2.0 * j[2]
    if which == "plus":
        return 1.0 - j[0] + 2.0 * j[2]
    raise DomainError(f"which must be 'minus' or 'plus', got {which!r}")


def verify_bessel_inequality(which, s_max=20.0, step=1e-3):
    """Scan 1 - J0 -/+ 2*J2 on {0, step, ..., s_max} and report the minimum."""
    if not (0 < step <= 0.05):
        raise DomainError(f"step must be in (0, 0.05], got {step}")
    if s_max < 20.0:
        raise DomainError(f"s_max must be >= 20, got {s_max}")
    grid = np.arange(0.0, s_max + step / 2, step)
    vals = bessel_gap(which, grid)
    i = int(np.argmin(vals))
    gmin = float(vals[i])
    return InequalityReport(
        name=f"one_minus_j0_{'minus' if which == 'minus' else 'plus'}_2j2",
        grid_min=gmin,
        grid_argmin=float(grid[i]),
        passed=gmin >= INEQUALITY_BOUND,
    )
