"""Field realizations on grids, conditioned saddle Hessians, and assembly of
the saddle-conditioned field.

Plane-wave fields use the orthogonal expansion sum_m a_m J_|m|(r) e^{i m
theta}, which is the exact law on any disc up to truncation; generic
isotropic fields use the cosine spectral superposition sqrt(2/N) sum_j
cos(w_j . x + phi_j).  Per-grid basis matrices are cached so each draw is a
matrix product.
"""

import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import truncnorm

from . import covariance, specfun
from .errors import ConfigError, SamplerInefficiencyError

DEFAULT_N_FREQS = 4096
MAX_GRID_RADIUS_BESSEL = 60.0


def rng_from(seed, *key):
    """Deterministic stream derived from a master seed and an index path."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                                        spawn_key=tuple(int(k) for k in key)))


@dataclass(frozen=True)
class GridSpec:
    radius: float
    spacing: float
    pad: float = 2.0

    def __post_init__(self):
        if self.spacing <= 0 or self.radius <= 0 or self.pad < 0:
            raise ConfigError("grid radius/spacing must be positive, pad >= 0")

    @property
    def half_extent(self):
        return self.radius + self.pad

    def axis(self):
        m = int(math.ceil(self.half_extent / self.spacing - 1e-9))
        return (np.arange(-m, m + 1)) * self.spacing

    def meshgrid(self):
        ax = self.axis()
        return np.meshgrid(ax, ax, indexing="ij")

    @property
    def n(self):
        return 2 * int(math.ceil(self.half_extent / self.spacing - 1e-9)) + 1

    @property
    def origin_index(self):
        return self.n // 2


@dataclass(frozen=True)
class SaddleDraw:
    """Hessian draw at a conditioned saddle.

    variant 'isotropic': eigenvalues lambda1 < 0 < lambda2, theta the angle
    of the lambda1 eigenvector.  variant 'rpw': the single free eigenvalue
    lambda > max(0, -level), theta the angle of its eigenvector (the other
    eigenvalue is -level - lambda).
    """

    variant: str
    theta: float
    lambda1: float = 0.0
    lambda2: float = 0.0
    lam: float = 0.0

    def hessian(self, level=None):
        if self.variant == "isotropic":
            c, s = math.cos(self.theta), math.sin(self.theta)
            R = np.array([[c, -s], [s, c]])
            return R @ np.diag([self.lambda1, self.lambda2]) @ R.T
        z11 = (self.lam + level / 2.0) * math.cos(2.0 * self.theta) - level / 2.0
        z12 = (self.lam + level / 2.0) * math.sin(2.0 * self.theta)
        return np.array([[z11, z12], [z12, -z11 - level]])

    def as_triple(self):
        if self.variant == "isotropic":
            return (self.lambda1, self.lambda2, self.theta)
        return (self.lam, self.theta, 0.0)


@dataclass(frozen=True)
class OriginJet:
    value: float
    grad: np.ndarray   # shape (2,)
    hess: np.ndarray   # shape (2, 2)


@dataclass(frozen=True)
class FieldSample:
    grid: GridSpec
    values: np.ndarray       # values[i, j] = f(x_i, y_j)
    model_name: str
    seed: int
    kind: str                # 'unconditional' | 'conditional'
    level: Optional[float] = None
    saddle: Optional[SaddleDraw] = None
    jet0: Optional[OriginJet] = None

    def at_origin(self):
        i = self.grid.origin_index
        return float(self.values[i, i])


# ---------------------------------------------------------------------------
# Plane-wave Bessel basis


def bessel_truncation_order(r_total):
    return int(math.ceil(r_total + 10.0 * r_total ** (1.0 / 3.0) + 10.0))


class _BasisCache:
    """Small LRU for per-grid basis matrices (tens of MB each)."""

    def __init__(self, capacity=4):
        self.capacity = capacity
        self.store = {}

    def get(self, key, build):
        if key not in self.store:
            if len(self.store) >= self.capacity:
                self.store.pop(next(iter(self.store)))
            self.store[key] = build()
        return self.store[key]


_rpw_grid_cache = _BasisCache()
_regression_grid_cache = _BasisCache()


def _rpw_basis_for_points(pts):
    """P[m] = J_m(r) cos(m th), Q[m] = J_m(r) sin(m th) for each point."""
    r = np.hypot(pts[:, 0], pts[:, 1])
    th = np.arctan2(pts[:, 1], pts[:, 0])
    M = bessel_truncation_order(float(r.max()) if r.size else 1.0)
    if M > specfun.MAX_ORDER:
        raise ConfigError(
            f"plane-wave truncation order {M} exceeds Bessel maximum "
            f"{specfun.MAX_ORDER}; reduce the grid radius"
        )
    j = specfun.bessel_j_many(M, r)
    m = np.arange(M + 1)[:, None]
    ang = m * th[None, :]
    return j * np.cos(ang), j * np.sin(ang)


def _rpw_grid_basis(grid):
    key = ("rpw", grid.n, round(grid.spacing, 12))
    def build():
        x1, x2 = grid.meshgrid()
        pts = np.column_stack([x1.ravel(), x2.ravel()])
        return _rpw_basis_for_points(pts)
    return _rpw_grid_cache.get(key, build)


def _rpw_coefficients(rng, n_orders):
    """Real coefficient weights w_b, w_c so that the field is
    w_b . (J_m cos m th) + (-w_c) . (J_m sin m th) with the correct law."""
    zb = rng.standard_normal(n_orders)
    zc = rng.standard_normal(n_orders)
    scale = np.full(n_orders, math.sqrt(2.0))
    scale[0] = 1.0
    wb = zb * scale
    wc = zc * scale
    wc[0] = 0.0
    return wb, wc


def _rpw_jet_from_coeffs(wb, wc):
    value = wb[0]
    grad = np.array([wb[1] / 2.0, -wc[1] / 2.0])
    hess = np.array([
        [-wb[0] / 2.0 + wb[2] / 4.0, -wc[2] / 4.0],
        [-wc[2] / 4.0, -wb[0] / 2.0 - wb[2] / 4.0],
    ])
    return OriginJet(value=float(value), grad=grad, hess=hess)


# ---------------------------------------------------------------------------
# Generic spectral superposition


def _spectral_draw(model, rng, n_freqs):
    w = model.spectral_sampler(rng, n_freqs)
    phi = rng.uniform(0.0, 2.0 * math.pi, size=n_freqs)
    return w, phi


def _spectral_grid_field(w, phi, ax1, ax2):
    # sum_j cos(w_j . x + phi_j) over a tensor grid, as Re(E1^T D E2)
    e1 = np.exp(1j * np.outer(w[:, 0], ax1))
    e2 = np.exp(1j * np.outer(w[:, 1], ax2)) * np.exp(1j * phi)[:, None]
    n = w.shape[0]
    return math.sqrt(2.0 / n) * (e1.T @ e2).real


def _spectral_point_field(w, phi, pts):
    n = w.shape[0]
    return math.sqrt(2.0 / n) * np.cos(pts @ w.T + phi[None, :]).sum(axis=1)


def _spectral_jet(w, phi):
    n = w.shape[0]
    c = math.sqrt(2.0 / n)
    cos_p, sin_p = np.cos(phi), np.sin(phi)
    value = c * cos_p.sum()
    grad = -c * (w * sin_p[:, None]).sum(axis=0)
    h11 = -c * (w[:, 0] ** 2 * cos_p).sum()
    h22 = -c * (w[:, 1] ** 2 * cos_p).sum()
    h12 = -c * (w[:, 0] * w[:, 1] * cos_p).sum()
    return OriginJet(value=float(value), grad=grad,
                     hess=np.array([[h11, h12], [h12, h22]]))


# ---------------------------------------------------------------------------
# Unconditional sampling


def sample_field(model, grid, seed, n_freqs=DEFAULT_N_FREQS, method=None):
    """Draw one realization of the field on the grid.

    method: 'bessel' (plane wave only; exact law on the disc) or
    'spectral' (cosine superposition).  Defaults to 'bessel' for the plane
    wave and 'spectral' otherwise.
    """
    rng = rng_from(seed)
    return _sample_field_rng(model, grid, rng, seed, n_freqs, method)


def _sample_field_rng(model, grid, rng, seed, n_freqs=DEFAULT_N_FREQS, method=None):
    if grid.spacing > 0.3:
        raise ConfigError(
            f"grid spacing {grid.spacing} exceeds 0.3: built-in models have "
            "unit-order correlation length and need several samples per length"
        )
    if method is None:
        method = "bessel" if model.degenerate_jet else "spectral"
    if method == "bessel":
        if not model.degenerate_jet:
            raise ConfigError("bessel synthesis is the plane-wave sampler")
        if grid.half_extent > MAX_GRID_RADIUS_BESSEL:
            raise ConfigError("bessel synthesis supports grid radius <= 60")
        P, Q = _rpw_grid_basis(grid)
        wb, wc = _rpw_coefficients(rng, P.shape[0])
        flat = wb @ P - wc @ Q
        jet = _rpw_jet_from_coeffs(wb, wc)
    elif method == "spectral":
        if model.spectral_sampler is None:
            raise ConfigError(f"model {model.name} has no spectral sampler")
        w, phi = _spectral_draw(model, rng, n_freqs)
        ax = grid.axis()
        flat = _spectral_grid_field(w, phi, ax, ax).ravel()
        jet = _spectral_jet(w, phi)
    else:
        raise ConfigError(f"unknown sampling method {method!r}")
    n = grid.n
    return FieldSample(
        grid=grid, values=flat.reshape(n, n), model_name=model.name,
        seed=int(seed) if seed is not None else 0,
        kind="unconditional", jet0=jet,
    )


# ---------------------------------------------------------------------------
# Saddle Hessian rejection samplers


_MIN_ACCEPT_RATE = 1e-4
_MAX_PROPOSALS = 10**6
_BATCH = 512
# Inverse-CDF sampling of a truncated normal cannot place a deviate further
# than Phi^{-1}(1 - eps) ~ 8.3 standard deviations beyond the truncation-side
# mass, so a polynomial weight maximised over mean +/- _SUPPORT_SDS standard
# deviations is a sound (deterministic) rejection envelope.
_SUPPORT_SDS = 8.5


def _envelope_rejection(rng, propose, weight, env):
    """Plain rejection against a fixed envelope `env >= max producible weight`.

    An adaptively grown envelope would bias accepted draws low (acceptance
    would then be conditioned on the batch containing no large weights), so
    the cap must be supplied, not learned.
    """
    proposals = 0
    while True:
        x = propose(rng, _BATCH)
        w = weight(x)
        proposals += _BATCH
        u = rng.uniform(size=_BATCH)
        acc = np.flatnonzero(u * env <= w)
        if acc.size:
            return tuple(np.atleast_2d(x.T)[:, acc[0]]) if x.ndim > 1 else (float(x[acc[0]]),)
        if proposals >= _MAX_PROPOSALS:
            raise SamplerInefficiencyError(
                f"rejection acceptance rate below {_MIN_ACCEPT_RATE} "
                f"after {proposals} proposals", proposals=proposals, accepts=0,
            )


def _truncnorm_rvs(rng, lo, hi, loc, scale, size):
    a = (lo - loc) / scale
    b = (hi - loc) / scale
    return truncnorm.rvs(a, b, loc=loc, scale=scale, size=size, random_state=rng)


def _propose_eigenpair(law, level):
    """Proposal = the Gaussian factor of the eigenvalue density restricted to
    x < 0 < y, sampled exactly via x-marginal reweighting + conditional y."""
    m = law.mu * level
    sd = math.sqrt(law.sigma2)
    tau = law.tau
    # exponent is -(1/2 s^2)[(x-m)^2 + (y-m)^2 + 2 tau (x-m)(y-m)]: a 2-D
    # Gaussian with correlation -tau
    rho = -tau
    sd_cond = sd * math.sqrt(max(1.0 - rho * rho, 1e-15))

    def propose(rng, n):
        out = np.empty((n, 2))
        filled = 0
        while filled < n:
            need = n - filled
            x = _truncnorm_rvs(rng, -np.inf, 0.0, m, sd, need)
            my = m + rho * (x - m)
            p_keep = 1.0 - _phi_cdf(-my / sd_cond)
            keep = rng.uniform(size=need) < p_keep
            x = x[keep]
            my = my[keep]
            if x.size:
                y = _truncnorm_rvs_vecloc(rng, 0.0, np.inf, my, sd_cond)
                out[filled:filled + x.size, 0] = x
                out[filled:filled + x.size, 1] = y
                filled += x.size
        return out

    return propose


def _phi_cdf(x):
    from scipy.special import ndtr
    return ndtr(x)


def _truncnorm_rvs_vecloc(rng, lo, hi, loc, scale):
    a = (lo - loc) / scale
    b = np.full_like(a, np.inf) if np.isinf(hi) else (hi - loc) / scale
    return truncnorm.rvs(a, b, loc=loc, scale=scale, random_state=rng)


def sample_saddle_hessian(model, law, level, seed=None, rng=None):
    """Draw the Hessian at a saddle conditioned to sit at the given level."""
    if rng is None:
        rng = rng_from(seed)
    theta = rng.uniform(0.0, 2.0 * math.pi)
    if model.degenerate_jet:
        lo = max(0.0, -level)
        sd = 1.0 / math.sqrt(8.0)

        def propose(rng, n):
            return _truncnorm_rvs(rng, lo, np.inf, -level / 2.0, sd, n)

        def weight(x):
            return x * (x + level) * (2.0 * x + level)

        # all three factors of the weight are positive and increasing on the
        # support, so the envelope is the weight at the largest producible x
        x_cap = max(lo, -level / 2.0) + _SUPPORT_SDS * sd
        (lam,) = _envelope_rejection(rng, propose, weight, float(weight(x_cap)))
        return SaddleDraw(variant="rpw", theta=theta, lam=float(lam))

    propose = _propose_eigenpair(law, level)

    def weight(xy):
        x, y = xy[:, 0], xy[:, 1]
        return np.abs(x) * y * (y - x)

    m = law.mu * level
    sd = math.sqrt(law.sigma2)
    rho = -law.tau
    sd_cond = sd * math.sqrt(max(1.0 - rho * rho, 1e-15))
    x_min = min(m - _SUPPORT_SDS * sd, 0.0)
    y_max = max(m + rho * (x_min - m), m + rho * (0.0 - m), 0.0) + _SUPPORT_SDS * sd_cond
    # |x| y (y - x) is increasing in |x| and in y on x < 0 < y
    env = abs(x_min) * y_max * (y_max + abs(x_min))
    lam1, lam2 = _envelope_rejection(rng, propose, weight, env)
    return SaddleDraw(variant="isotropic", theta=theta,
                      lambda1=float(lam1), lambda2=float(lam2))


# ---------------------------------------------------------------------------
# Conditional field assembly


def _regression_grid_mats(model, law, grid):
    """Cached (W, A): residual projector W = Cov(f(t), v) Sigma^-1 and jet
    coefficient matrix A = Cov(f(t), v0) Sigma0^-1 over the grid points."""
    key = (model.name, grid.n, round(grid.spacing, 12))

    def build():
        x1, x2 = grid.meshgrid()
        pts = np.column_stack([x1.ravel(), x2.ravel()])
        C = covariance.cov_field_with_jet(model, pts)
        W = covariance.solve_spd(law.sigma_full, C.T).T
        K, _, _, K11, K22, K12 = covariance.kernel_derivatives_at(model, pts)
        C0 = np.column_stack([K, K11, K22, K12])
        A = covariance.solve_spd(law.sigma0, C0.T).T
        return W, A

    return _regression_grid_cache.get(key, build)


def sample_conditional_field(model, level, grid, seed, n_freqs=DEFAULT_N_FREQS,
                             law=None, rng=None):
    """Draw the field conditioned (Palm sense) to have a saddle at the origin
    at the given level."""
    if law is None:
        law = covariance.jet2_law(model)
    if rng is None:
        rng = rng_from(seed)
    if grid.spacing > 0.3:
        raise ConfigError(
            f"grid spacing {grid.spacing} exceeds 0.3: built-in models have "
            "unit-order correlation length and need several samples per length"
        )

    if model.degenerate_jet:
        P, Q = _rpw_grid_basis(grid)
        wb, wc = _rpw_coefficients(rng, P.shape[0])
        # zeroing the five coefficients feeding the 2-jet leaves exactly the
        # residual field g of the conditional representation
        wb[0] = wb[1] = wb[2] = 0.0
        wc[1] = wc[2] = 0.0
        draw = sample_saddle_hessian(model, law, level, rng=rng)
        c2t, s2t = math.cos(2.0 * draw.theta), math.sin(2.0 * draw.theta)
        amp = 2.0 * level + 4.0 * draw.lam
        flat = (wb @ P - wc @ Q) + level * P[0] + amp * (c2t * P[2] + s2t * Q[2])
        hess = draw.hessian(level)
    else:
        base = _sample_field_rng(model, grid, rng, seed, n_freqs, "spectral")
        v = np.concatenate([[base.jet0.value], base.jet0.grad,
                            [base.jet0.hess[0, 0], base.jet0.hess[1, 1],
                             base.jet0.hess[0, 1]]])
        W, A = _regression_grid_mats(model, law, grid)
        draw = sample_saddle_hessian(model, law, level, rng=rng)
        hess = draw.hessian(level)
        target = np.array([level, hess[0, 0], hess[1, 1], hess[0, 1]])
        flat = base.values.ravel() - W @ v + A @ target
    n = grid.n
    jet = OriginJet(value=float(level), grad=np.zeros(2), hess=hess)
    return FieldSample(
        grid=grid, values=flat.reshape(n, n), model_name=model.name,
        seed=int(seed) if seed is not None else 0,
        kind="conditional", level=float(level),
        saddle=draw, jet0=jet,
    )


def conditional_point_values(model, level, points, rng, n_freqs=DEFAULT_N_FREQS,
                             law=None):
    """Values of one conditional draw at arbitrary points (no grid)."""
    if law is None:
        law = covariance.jet2_law(model)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if model.degenerate_jet:
        P, Q = _rpw_basis_for_points(pts)
        wb, wc = _rpw_coefficients(rng, P.shape[0])
        wb[0] = wb[1] = wb[2] = 0.0
        wc[1] = wc[2] = 0.0
        draw = sample_saddle_hessian(model, law, level, rng=rng)
        c2t, s2t = math.cos(2.0 * draw.theta), math.sin(2.0 * draw.theta)
        amp = 2.0 * level + 4.0 * draw.lam
        return (wb @ P - wc @ Q) + level * P[0] + amp * (c2t * P[2] + s2t * Q[2])
    w, phi = _spectral_draw(model, rng, n_freqs)
    f = _spectral_point_field(w, phi, pts)
    jet = _spectral_jet(w, phi)
    v = np.concatenate([[jet.value], jet.grad,
                        [jet.hess[0, 0], jet.hess[1, 1], jet.hess[0, 1]]])
    C = covariance.cov_field_with_jet(model, pts)
    draw = sample_saddle_hessian(model, law, level, rng=rng)
    hess = draw.hessian(level)
    K, _, _, K11, K22, K12 = covariance.kernel_derivatives_at(model, pts)
    C0 = np.column_stack([K, K11, K22, K12])
    target = np.array([level, hess[0, 0], hess[1, 1], hess[0, 1]])
    return (f - C @ covariance.solve_spd(law.sigma_full, v)
            + C0 @ covariance.solve_spd(law.sigma0, target))


# ---------------------------------------------------------------------------
# Binary / CSV export

_KIND_TAGS = {"unconditional": 0, "conditional-isotropic": 1, "conditional-rpw": 2}


def write_field(sample, path):
    """Binary layout: name length + bytes, R, h, pad, seed, kind tag, level,
    saddle triple, then row-major float64 values."""
    name = sample.model_name.encode()
    if sample.kind == "unconditional":
        tag, level, triple = 0, 0.0, (0.0, 0.0, 0.0)
    else:
        tag = 2 if sample.saddle.variant == "rpw" else 1
        level, triple = sample.level, sample.saddle.as_triple()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(name)))
        fh.write(name)
        fh.write(struct.pack("<3dQBd3d", sample.grid.radius, sample.grid.spacing,
                             sample.grid.pad, sample.seed & (2**64 - 1), tag,
                             level, *triple))
        fh.write(np.ascontiguousarray(sample.values, dtype="<f8").tobytes())


def read_field(path):
    with open(path, "rb") as fh:
        (nlen,) = struct.unpack("<I", fh.read(4))
        name = fh.read(nlen).decode()
        R, h, pad, seed, tag, level, a, b, c = struct.unpack("<3dQBd3d", fh.read(65))
        grid = GridSpec(radius=R, spacing=h, pad=pad)
        values = np.frombuffer(fh.read(), dtype="<f8").reshape(grid.n, grid.n)
    if tag == 0:
        return FieldSample(grid=grid, values=values, model_name=name, seed=seed,
                           kind="unconditional")
    if tag == 1:
        saddle = SaddleDraw(variant="isotropic", lambda1=a, lambda2=b, theta=c)
    else:
        saddle = SaddleDraw(variant="rpw", lam=a, theta=b)
    return FieldSample(grid=grid, values=values, model_name=name, seed=seed,
                       kind="conditional", level=level, saddle=saddle)


def write_field_csv(sample, path):
    ax = sample.grid.axis()
    with open(path, "w") as fh:
        fh.write("x,y,value\n")
        for i, x in enumerate(ax):
            for j, y in enumerate(ax):
                fh.write(f"{x:.10g},{y:.10g},{sample.values[i, j]:.17g}\n")
