"""Closed-form critical point densities, Euler characteristic density, tail
quadrature, and monotone-region thresholds.

Densities follow the (chi, xi^2) parameterisation; laws with chi at the
degenerate endpoint sqrt(2) dispatch to the plane-wave closed forms, whose
Phi factors have otherwise become numerically violent step functions.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, QuadratureError
from .specfun import gaussian_cdf

SQRT2 = math.sqrt(2.0)
_DEGENERATE_TOL = 1e-9

_PHI_NORM = 1.0 / math.sqrt(2.0 * math.pi)


def _phi(x):
    return _PHI_NORM * np.exp(-0.5 * x * x)


def _Phi(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * np.vectorize(math.erfc)(-x / SQRT2)


def _p_max_generic(x, chi, xi2):
    c2 = chi * chi
    a = math.sqrt(2.0 - c2)
    b = math.sqrt(3.0 - c2)
    t1 = c2 * (x * x - 1.0) * _phi(x) * _Phi(chi * x / a)
    t2 = chi * x * a / (2.0 * math.pi) * np.exp(-x * x / (2.0 - c2))
    t3 = SQRT2 / (math.sqrt(math.pi) * b) * np.exp(
        -3.0 * x * x / (2.0 * (3.0 - c2))
    ) * _Phi(chi * x / (b * a))
    return (t1 + t2 + t3) / (math.pi * xi2)


def _p_max_rpw(x, xi2):
    # chi = sqrt(2) limit: Phi factors become indicators, the middle term dies
    core = (x * x - 1.0) * np.exp(-0.5 * x * x) + np.exp(-1.5 * x * x)
    return np.where(x >= 0, core, 0.0) * SQRT2 / (math.pi * xi2 * math.sqrt(math.pi))


def _p_saddle(x, chi, xi2):
    c2 = min(chi * chi, 2.0)
    b = math.sqrt(3.0 - c2)
    return SQRT2 / (math.pi * xi2 * math.sqrt(math.pi) * b) * np.exp(
        -3.0 * x * x / (2.0 * (3.0 - c2))
    )


def is_degenerate_chi(chi):
    return chi >= SQRT2 - _DEGENERATE_TOL


def crit_density(law, kind, x):
    """Level density of critical points of the given kind (max/min/saddle)."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    chi, xi2 = law.chi, law.xi2
    if chi > SQRT2 + _DEGENERATE_TOL:
        raise DegeneracyError(f"chi = {chi} beyond sqrt(2): unsupported degeneracy")
    degenerate = is_degenerate_chi(chi)
    if kind == "saddle":
        out = _p_saddle(x, chi, xi2)
    elif kind in ("max", "min"):
        arg = x if kind == "max" else -x
        out = _p_max_rpw(arg, xi2) if degenerate else _p_max_generic(arg, chi, xi2)
    else:
        raise ValueError(f"kind must be 'max', 'min' or 'saddle', got {kind!r}")
    return float(out[0]) if scalar else out


def euler_density_h(model, level):
    """Asymptotic mean Euler characteristic density of {f >= level}.

    sqrt(det Hess K(0)) * level * (2 pi)^{-3/2} * exp(-level^2 / 2) with
    Hess K(0) = 2 k'(0) I, so the root of the determinant is -2 k'(0).
    """
    level = np.asarray(level, dtype=float)
    sqrt_det = -2.0 * float(model.k1(0.0))
    out = sqrt_det * level * (2.0 * math.pi) ** -1.5 * np.exp(-0.5 * level * level)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TailIntegral:
    value: float
    truncation_bound: float


_TAIL_SPAN = 12.0
_MAX_INTERVALS = 2**20


def tail_integral(density, level, rel_tol=1e-9):
    """Integral of `density` over [level, infinity) by adaptive Simpson.

    The integrand must decay at least like exp(-x^2/4); integration is
    truncated at level + 12 and the report carries a bound on the truncated
    mass under that decay assumption.
    """
    a, b = float(level), float(level) + _TAIL_SPAN
    fa, fb = density(a), density(b)
    m = 0.5 * (a + b)
    fm = density(m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    # tolerance scale from a coarse trapezoid: the 3-point estimate can be
    # spuriously tiny when the probe points all miss the mass
    xs = np.linspace(a, b, 65)
    scale = max(float(np.trapezoid(np.abs([density(x) for x in xs]), xs)), 1e-300)
    budget = [0]

    def recurse(a, fa, m, fm, b, fb, whole, tol, depth):
        budget[0] += 1
        if budget[0] > _MAX_INTERVALS:
            raise QuadratureError("adaptive Simpson exceeded 2^20 subdivisions")
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = density(lm), density(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        floor = 60.0 * np.finfo(float).eps * (abs(left) + abs(right))
        if depth > 0 and abs(left + right - whole) <= max(15.0 * tol, floor):
            return left + right + (left + right - whole) / 15.0
        return recurse(a, fa, lm, flm, m, fm, left, tol / 2.0, depth + 1) + recurse(
            m, fm, rm, frm, b, fb, right, tol / 2.0, depth + 1
        )

    value = recurse(a, fa, m, fm, b, fb, whole, rel_tol * scale, 0)
    # |density| <= C exp(-x^2/4) with C matched at b gives tail mass <= 2|f(b)|/b
    trunc = 2.0 * abs(fb) / max(abs(b), 1.0)
    return TailIntegral(value=value, truncation_bound=trunc)


@dataclass(frozen=True)
class ThresholdReport:
    lower_positive_bound: float   # largest l with p_s/2 - p_m+ > 0 on [0, l]
    upper_negative_bound: float   # smallest l with p_s - p_m+ < 0 on [l, inf)
    crude_upper_bound: float      # the general bound sqrt(2)/chi


def _bisect(f, lo, hi, tol=1e-6):
    flo = f(lo)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if hi - lo < tol:
            return mid
        if (f(mid) > 0) == (flo > 0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def monotone_thresholds(law, scan_max=10.0, scan_step=1e-3):
    """Monotone-region endpoints solved from the closed-form densities."""

    def d_lower(x):
        return crit_density(law, "saddle", x) / 2.0 - crit_density(law, "max", x)

    def d_upper(x):
        return crit_density(law, "saddle", x) - crit_density(law, "max", x)

    grid = np.arange(0.0, scan_max + scan_step / 2, scan_step)
    lower_vals = d_lower(grid)
    neg = np.flatnonzero(lower_vals <= 0)
    if neg.size == 0:
        lower = float(grid[-1])
    else:
        i = int(neg[0])
        lower = float(grid[i]) if i == 0 else _bisect(d_lower, grid[i - 1], grid[i])

    upper_vals = d_upper(grid)
    pos = np.flatnonzero(upper_vals > 0)
    if pos.size == 0:
        upper = 0.0
    else:
        i = int(pos[-1])
        if i + 1 >= grid.size:
            upper = float(grid[-1])
        else:
            upper = _bisect(d_upper, grid[i], grid[i + 1])

    return ThresholdReport(
        lower_positive_bound=lower,
        upper_negative_bound=upper,
        crude_upper_bound=SQRT2 / law.chi,
    )


def density_table(model, law, levels):
    """Rows (level, p_m_plus, p_m_minus, p_s, h) for the CSV emitter."""
    levels = np.asarray(levels, dtype=float)
    return [
        {
            "level": float(l),
            "p_m_plus": float(crit_density(law, "max", l)),
            "p_m_minus": float(crit_density(law, "min", l)),
            "p_s": float(crit_density(law, "saddle", l)),
            "h": float(euler_density_h(model, l)),
        }
        for l in levels
    ]
