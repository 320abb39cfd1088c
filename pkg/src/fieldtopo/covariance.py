"""Isotropic covariance kernels, second-jet laws, and Gaussian regression.

All kernels are of the form K(x) = k(|x|^2) with analytic derivatives k1,
k2, k3 supplied per model; finite differences appear only in test oracles.
The jet vector convention follows v0 = (f, f11, f22, f12) and
v = (f, f1, f2, f11, f22, f12) at the origin.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import specfun
from .errors import DegeneracyError, ModelInconsistencyError

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class IsotropicModel:
    """A stationary isotropic Gaussian field model with unit variance."""

    name: str
    k: Callable
    k1: Callable
    k2: Callable
    k3: Callable
    spectral_sampler: Optional[Callable]  # (rng, n) -> (n, 2) frequency draws
    degenerate_jet: bool = False
    metadata: dict = field(default_factory=dict)

    def validate(self):
        if abs(float(self.k(0.0)) - 1.0) > 1e-12:
            raise ModelInconsistencyError(f"{self.name}: k(0) != 1")
        if not float(self.k1(0.0)) < 0:
            raise ModelInconsistencyError(f"{self.name}: k'(0) must be negative")
        if not float(self.k2(0.0)) > 0:
            raise ModelInconsistencyError(f"{self.name}: k''(0) must be positive")


# ---------------------------------------------------------------------------
# Built-in models


def _rpw_kderiv(order, y):
    """d^order/dy^order of k(y) = J0(sqrt(y)), valid for all y >= 0.

    Uses k^(j)(y) = (-1)^j J_j(r) / (2r)^j with r = sqrt(y), and the power
    series of J0 near the origin where that form is 0/0.
    """
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0
    y = np.atleast_1d(y)
    out = np.empty_like(y)
    small = y < 0.25
    if small.any():
        ys = y[small]
        acc = np.zeros_like(ys)
        # c_m = (-1)^m / (4^m (m!)^2); differentiate term-wise
        for m in range(order, order + 40):
            c = (-1.0) ** m / (4.0**m * math.factorial(m) ** 2)
            fall = math.factorial(m) / math.factorial(m - order)
            acc += c * fall * ys ** (m - order)
        out[small] = acc
    if (~small).any():
        r = np.sqrt(y[~small])
        j = specfun.bessel_j_many(order, r)[order]
        out[~small] = (-1.0) ** order * j / (2.0 * r) ** order
    return float(out[0]) if scalar else out


def rpw_model():
    """Random plane wave: K(x) = J0(|x|), spectral measure uniform on the unit circle."""

    def sampler(rng, n):
        ang = rng.uniform(0.0, 2.0 * math.pi, size=n)
        return np.column_stack([np.cos(ang), np.sin(ang)])

    return IsotropicModel(
        name="rpw",
        k=lambda y: _rpw_kderiv(0, y),
        k1=lambda y: _rpw_kderiv(1, y),
        k2=lambda y: _rpw_kderiv(2, y),
        k3=lambda y: _rpw_kderiv(3, y),
        spectral_sampler=sampler,
        degenerate_jet=True,
        metadata={"smoothness": "analytic"},
    )


def bargmann_fock_model():
    """Bargmann-Fock field: K(x) = exp(-|x|^2/2), Gaussian spectral measure."""

    def sampler(rng, n):
        return rng.standard_normal(size=(n, 2))

    return IsotropicModel(
        name="bargmann-fock",
        k=lambda y: np.exp(-np.asarray(y, dtype=float) / 2.0),
        k1=lambda y: -0.5 * np.exp(-np.asarray(y, dtype=float) / 2.0),
        k2=lambda y: 0.25 * np.exp(-np.asarray(y, dtype=float) / 2.0),
        k3=lambda y: -0.125 * np.exp(-np.asarray(y, dtype=float) / 2.0),
        spectral_sampler=sampler,
        metadata={"smoothness": "analytic"},
    )


def power_series_model(name, coeffs):
    """Custom kernel k(y) = sum_m coeffs[m] * y^m (no spectral sampler)."""
    c = np.asarray(coeffs, dtype=float)

    def deriv(order):
        def f(y):
            y = np.asarray(y, dtype=float)
            acc = np.zeros_like(y)
            for m in range(order, len(c)):
                fall = math.factorial(m) / math.factorial(m - order)
                acc = acc + c[m] * fall * y ** (m - order)
            return acc if acc.ndim else float(acc)

        return f

    _CUSTOM_PARAMS[name] = {"coeffs": tuple(float(v) for v in c)}
    return IsotropicModel(
        name=name, k=deriv(0), k1=deriv(1), k2=deriv(2), k3=deriv(3),
        spectral_sampler=None, metadata={"kind": "power-series"},
    )


def gaussian_mixture_model(name, weights, scales):
    """k(y) = sum_i w_i exp(-a_i y / 2): spectral measure a Gaussian mixture."""
    w = np.asarray(weights, dtype=float)
    a = np.asarray(scales, dtype=float)
    if abs(w.sum() - 1.0) > 1e-12 or (w < 0).any() or (a <= 0).any():
        raise ModelInconsistencyError("mixture weights must sum to 1, scales > 0")

    def deriv(order):
        def f(y):
            y = np.asarray(y, dtype=float)
            acc = sum(
                w[i] * (-a[i] / 2.0) ** order * np.exp(-a[i] * y / 2.0)
                for i in range(len(w))
            )
            return acc if np.ndim(acc) else float(acc)

        return f

    def sampler(rng, n):
        comp = rng.choice(len(w), size=n, p=w)
        return np.sqrt(a[comp])[:, None] * rng.standard_normal(size=(n, 2))

    _CUSTOM_PARAMS[name] = {
        "weights": tuple(float(v) for v in w),
        "scales": tuple(float(v) for v in a),
    }
    return IsotropicModel(
        name=name, k=deriv(0), k1=deriv(1), k2=deriv(2), k3=deriv(3),
        spectral_sampler=sampler, metadata={"kind": "gaussian-mixture"},
    )


_ALIASES = {"rpw": rpw_model, "bargmann-fock": bargmann_fock_model,
            "bf": bargmann_fock_model}

# construction parameters of custom models, so they can be re-materialized by
# name (e.g. inside Monte Carlo replicate workers)
_CUSTOM_PARAMS = {}


def get_model(name, **params):
    """Model registry: 'rpw', 'bargmann-fock'/'bf', or custom kernels.

    Custom kernels: get_model('my-kernel', coeffs=[...]) for an even power
    series, or get_model('my-mix', weights=[...], scales=[...]) for a
    Gaussian-mixture spectral density.
    """
    if name in _ALIASES:
        return _ALIASES[name]()
    if not params and name in _CUSTOM_PARAMS:
        params = _CUSTOM_PARAMS[name]
    if "coeffs" in params:
        return power_series_model(name, params["coeffs"])
    if "weights" in params:
        return gaussian_mixture_model(name, params["weights"], params["scales"])
    raise KeyError(f"unknown model {name!r}")


# ---------------------------------------------------------------------------
# Covariance derivative assembly

def kernel_derivatives_at(model, pts):
    """(K, K1, K2, K11, K22, K12) of K(x)=k(|x|^2) at each row of pts."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    t1, t2 = pts[:, 0], pts[:, 1]
    y = t1 * t1 + t2 * t2
    k0, k1, k2 = model.k(y), model.k1(y), model.k2(y)
    return (
        k0,
        2.0 * t1 * k1,
        2.0 * t2 * k1,
        2.0 * k1 + 4.0 * t1 * t1 * k2,
        2.0 * k1 + 4.0 * t2 * t2 * k2,
        4.0 * t1 * t2 * k2,
    )


def cov_field_with_jet(model, pts):
    """Cov(f(t), v) for v = (f, f1, f2, f11, f22, f12)(0); shape (n, 6).

    Gradient entries pick up a sign: Cov(f(t), f_i(0)) = -K_i(t).
    """
    K, K1, K2, K11, K22, K12 = kernel_derivatives_at(model, pts)
    return np.column_stack([K, -K1, -K2, K11, K22, K12])


def cov_grad_with_jet(model, pts):
    """Cov((f1, f2)(t), v); shape (n, 2, 6). Needs third kernel derivatives."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    t1, t2 = pts[:, 0], pts[:, 1]
    y = t1 * t1 + t2 * t2
    k1, k2, k3 = model.k1(y), model.k2(y), model.k3(y)

    def K_i(i):
        t = (t1, t2)[i]
        return 2.0 * t * k1

    def K_ij(i, j):
        ti, tj = (t1, t2)[i], (t1, t2)[j]
        return 2.0 * (i == j) * k1 + 4.0 * ti * tj * k2

    def K_ijk(i, j, k):
        t = (t1, t2)
        sym = (i == j) * t[k] + (i == k) * t[j] + (j == k) * t[i]
        return 4.0 * sym * k2 + 8.0 * t[i] * t[j] * t[k] * k3

    out = np.empty((pts.shape[0], 2, 6))
    for i in range(2):
        out[:, i, 0] = K_i(i)            # Cov(f_i(t), f(0))
        out[:, i, 1] = -K_ij(i, 0)       # Cov(f_i(t), f_1(0))
        out[:, i, 2] = -K_ij(i, 1)
        out[:, i, 3] = K_ijk(i, 0, 0)    # Cov(f_i(t), f_11(0))
        out[:, i, 4] = K_ijk(i, 1, 1)
        out[:, i, 5] = K_ijk(i, 0, 1)
    return out


# ---------------------------------------------------------------------------
# Second-jet law

@dataclass(frozen=True)
class Jet2Law:
    sigma0: np.ndarray     # 4x4 covariance of (f, f11, f22, f12)
    sigma_full: np.ndarray  # 6x6 covariance of (f, f1, f2, f11, f22, f12)
    chi: float
    xi2: float
    mu: float
    sigma2: float
    tau: float
    kp0: float   # k'(0)
    kpp0: float  # k''(0)


def jet2_law(model):
    """Second-jet covariance data (Sigma0, Sigma, chi, xi^2, mu, sigma^2, tau)."""
    model.validate()
    kp = float(model.k1(0.0))
    kpp = float(model.k2(0.0))
    chi = -kp / math.sqrt(kpp)
    if chi > SQRT2 + 1e-9:
        raise ModelInconsistencyError(
            f"{model.name}: chi = {chi} outside (0, sqrt(2)]"
        )
    chi2 = min(chi * chi, 2.0)
    sigma0 = np.array([
        [1.0,       2.0 * kp,   2.0 * kp,   0.0],
        [2.0 * kp, 12.0 * kpp,  4.0 * kpp,  0.0],
        [2.0 * kp,  4.0 * kpp, 12.0 * kpp,  0.0],
        [0.0,       0.0,        0.0,        4.0 * kpp],
    ])
    sigma_full = np.zeros((6, 6))
    sigma_full[np.ix_([0, 3, 4, 5], [0, 3, 4, 5])] = sigma0
    sigma_full[1, 1] = sigma_full[2, 2] = -2.0 * kp
    return Jet2Law(
        sigma0=sigma0,
        sigma_full=sigma_full,
        chi=chi,
        xi2=-kp / kpp,
        mu=2.0 * kp,
        sigma2=16.0 * kpp * (2.0 - chi2) / (3.0 - chi2),
        tau=(chi2 - 1.0) / (3.0 - chi2),
        kp0=kp,
        kpp0=kpp,
    )


def solve_spd(mat, rhs):
    """Solve mat @ x = rhs for a small SPD matrix, with escalating jitter."""
    jitter = 0.0
    while True:
        try:
            c = np.linalg.cholesky(mat + jitter * np.eye(mat.shape[0]))
            return np.linalg.solve(c.T, np.linalg.solve(c, rhs))
        except np.linalg.LinAlgError:
            jitter = 1e-12 if jitter == 0.0 else jitter * 100.0
            if jitter > 1e-8:
                raise DegeneracyError(
                    "covariance matrix singular beyond jitter 1e-8; for the "
                    "RPW use the degenerate-jet code path"
                )


# Indices of the reduced jet (f, f1, f2, f11, f12) used when f22 is a
# linear function of (f, f11), as for the RPW.
REDUCED_JET = [0, 1, 2, 3, 5]


@dataclass(frozen=True)
class RegressionFns:
    alpha: Callable
    beta: Callable
    gamma: Callable
    b1: Callable
    b2: Callable


def regression_fns(model, law=None):
    """Gaussian-regression functions (alpha, beta, gamma, b1, b2) for a model."""
    if law is None:
        law = jet2_law(model)

    if model.degenerate_jet:
        return _regression_fns_rpw(model, law)

    sigma0 = law.sigma0
    sigma = law.sigma_full
    # guard: refuse silently-degenerate jets
    try:
        np.linalg.cholesky(sigma0)
    except np.linalg.LinAlgError:
        raise DegeneracyError(
            f"{model.name}: Sigma0 is singular but degenerate_jet is not set; "
            "use the RPW code path for degenerate second jets"
        )

    def alpha_beta(t):
        K, _, _, K11, K22, K12 = kernel_derivatives_at(model, t)
        c0 = np.column_stack([K, K11, K22, K12])
        return solve_spd(sigma0, c0.T).T

    def alpha(t):
        ab = alpha_beta(np.atleast_2d(t))
        return float(ab[0, 0]) if np.asarray(t).ndim == 1 else ab[:, 0]

    def beta(t):
        ab = alpha_beta(np.atleast_2d(t))
        return tuple(ab[0, 1:4]) if np.asarray(t).ndim == 1 else ab[:, 1:4]

    def gamma(s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        cs = cov_field_with_jet(model, s)
        ct = cov_field_with_jet(model, t)
        K = model.k(np.sum((np.atleast_2d(s) - np.atleast_2d(t)) ** 2, axis=1))
        g = K - np.sum(cs * solve_spd(sigma, ct.T).T, axis=1)
        return float(g[0]) if s.ndim == 1 else g

    return _with_b12(alpha, beta, gamma)


def _regression_fns_rpw(model, law):
    """Closed forms for the RPW (degenerate second jet).

    The Hessian at the origin has only two free coordinates (Z11, Z12)
    because f22 = -f - f11; beta is reported as (beta11, 0, beta12) and the
    contraction Z . beta runs over those two coordinates only.
    """

    def _parts(t):
        t = np.atleast_2d(np.asarray(t, dtype=float))
        r = np.hypot(t[:, 0], t[:, 1])
        y = r * r
        with np.errstate(invalid="ignore", divide="ignore"):
            c2 = np.where(y > 0, (t[:, 0] ** 2 - t[:, 1] ** 2) / np.where(y > 0, y, 1.0), 0.0)
            s2 = np.where(y > 0, 2.0 * t[:, 0] * t[:, 1] / np.where(y > 0, y, 1.0), 0.0)
        j = specfun.bessel_j_many(2, r)
        return j[0], j[2], c2, s2

    def alpha(t):
        j0, j2, c2, _ = _parts(t)
        a = j0 + 2.0 * c2 * j2
        return float(a[0]) if np.asarray(t).ndim == 1 else a

    def beta(t):
        _, j2, c2, s2 = _parts(t)
        b = np.column_stack([4.0 * c2 * j2, np.zeros_like(j2), 4.0 * s2 * j2])
        return tuple(b[0]) if np.asarray(t).ndim == 1 else b

    sigma_red = law.sigma_full[np.ix_(REDUCED_JET, REDUCED_JET)]

    def gamma(s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        cs = cov_field_with_jet(model, s)[:, REDUCED_JET]
        ct = cov_field_with_jet(model, t)[:, REDUCED_JET]
        K = model.k(np.sum((np.atleast_2d(s) - np.atleast_2d(t)) ** 2, axis=1))
        g = K - np.sum(cs * solve_spd(sigma_red, ct.T).T, axis=1)
        return float(g[0]) if s.ndim == 1 else g

    return _with_b12(alpha, beta, gamma)


def _with_b12(alpha, beta, gamma):
    # b2 uses theta + pi/2: the sign of the beta12 term flips.
    def _components(t):
        b = np.asarray(beta(t))
        return (b[:, 0], b[:, 1], b[:, 2]) if b.ndim == 2 else tuple(b)

    def b1(t, theta):
        b11, b22, b12 = _components(t)
        c, s = math.cos(theta), math.sin(theta)
        return c * c * b11 + s * s * b22 + s * c * b12

    def b2(t, theta):
        b11, b22, b12 = _components(t)
        c, s = math.cos(theta), math.sin(theta)
        return s * s * b11 + c * c * b22 - s * c * b12

    return RegressionFns(alpha=alpha, beta=beta, gamma=gamma, b1=b1, b2=b2)


# ---------------------------------------------------------------------------
# Assumption checks

@dataclass(frozen=True)
class MonotonicityReport:
    passed: bool
    witness: Optional[tuple]
    failed_check: Optional[str]
    scale: float  # domain rescaling factor applied so k'(0) = -1


def default_assumption_grids():
    """Default scan grids (rescaled domain, k'(0) = -1): squared radii up to
    50 for the radial inequality, a polar lattice of radius 7 for the planar
    one."""
    radial = np.linspace(0.0, 50.0, 5001)
    r = np.linspace(0.05, 7.0, 140)
    th = np.linspace(0.0, np.pi / 2.0, 46)
    rr, tt = np.meshgrid(r, th, indexing="ij")
    planar = np.column_stack([(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel()])
    return radial, planar


def check_monotonicity_assumption(model, radial_grid=None, planar_grid=None):
    """Check the kernel-level equivalents of the monotonicity assumption.

    The domain is rescaled internally so that k'(0) = -1 (chi is scale
    invariant); grids are interpreted in the rescaled domain.
    """
    if radial_grid is None or planar_grid is None:
        default_radial, default_planar = default_assumption_grids()
        radial_grid = default_radial if radial_grid is None else radial_grid
        planar_grid = default_planar if planar_grid is None else planar_grid
    if model.degenerate_jet:
        raise DegeneracyError(
            f"{model.name}: degenerate second jet; the monotonicity "
            "assumption's conditional expectations are not defined"
        )
    model.validate()
    law = jet2_law(model)
    s = -1.0 / law.kp0  # k_s(y) = k(s*y) has k_s'(0) = -1

    def kk(y):
        return model.k(s * np.asarray(y, dtype=float))

    def kk1(y):
        return s * model.k1(s * np.asarray(y, dtype=float))

    def kk2(y):
        return s * s * model.k2(s * np.asarray(y, dtype=float))

    kpp = float(kk2(0.0))
    if law.chi < 1.0:
        return MonotonicityReport(False, None, "chi >= 1", s)
    if abs(2.0 * kpp - 1.0) < 1e-12:
        raise DegeneracyError("2 k''(0) = 1 makes the radial check undefined")

    pts = np.atleast_2d(np.asarray(planar_grid, dtype=float))
    y = np.sum(pts * pts, axis=1)
    lhs = (kk(y) + kk1(y)) * kpp + (
        pts[:, 0] ** 2 * (3.0 * kpp - 1.0) + pts[:, 1] ** 2 * (1.0 - kpp)
    ) * kk2(y)
    bad = np.flatnonzero(lhs < -1e-10)
    if bad.size:
        return MonotonicityReport(False, tuple(pts[bad[0]]), "planar regression inequality", s)

    ys = np.asarray(radial_grid, dtype=float)
    ratio = (2.0 * kpp * kk(ys) + ys * kk2(ys) + kk1(ys)) / (2.0 * kpp - 1.0)
    bad = np.flatnonzero(ratio > 1.0 + 1e-10)
    if bad.size:
        return MonotonicityReport(False, (float(ys[bad[0]]), 0.0), "radial regression inequality", s)
    return MonotonicityReport(True, None, None, s)


def normalized_det(mat):
    """Determinant normalised by the product of diagonal entries (scale-free)."""
    d = np.prod(np.diag(mat))
    if d == 0.0:
        return 0.0
    return float(np.linalg.det(mat) / d)


NONDEG_THRESHOLD = 1e-10


@dataclass(frozen=True)
class ProbeResult:
    point: tuple
    det: float
    passed: bool


@dataclass(frozen=True)
class NondegeneracyReport:
    det_sigma0: float
    det_sigma_full: float
    sigma0_ok: bool
    sigma_full_ok: bool
    probes: list


def check_nondegeneracy(model, probe_points):
    """Report normalised determinants of Sigma0, Sigma, and the conditional
    covariance of (f(t), grad f(t)) given the full jet at the origin."""
    model.validate()
    law = jet2_law(model)
    d0 = normalized_det(law.sigma0)
    dfull = normalized_det(law.sigma_full)
    idx = REDUCED_JET if model.degenerate_jet else list(range(6))
    sigma = law.sigma_full[np.ix_(idx, idx)]
    probes = []
    for p in np.atleast_2d(np.asarray(probe_points, dtype=float)):
        if not np.any(p):
            raise ModelInconsistencyError("probe points must be nonzero")
        cf = cov_field_with_jet(model, p[None, :])[0, idx]
        cg = cov_grad_with_jet(model, p[None, :])[0][:, idx]
        B = np.vstack([cf, cg])  # 3 x len(idx)
        D = np.diag([1.0, -2.0 * law.kp0, -2.0 * law.kp0])
        cond = D - B @ solve_spd(sigma, B.T)
        nd = normalized_det(cond)
        probes.append(ProbeResult(tuple(p), nd, abs(nd) > NONDEG_THRESHOLD))
    return NondegeneracyReport(
        det_sigma0=d0,
        det_sigma_full=dfull,
        sigma0_ok=abs(d0) > NONDEG_THRESHOLD,
        sigma_full_ok=abs(dfull) > NONDEG_THRESHOLD,
        probes=probes,
    )
