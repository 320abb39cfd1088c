"""Component counting of excursion / sub-level sets, critical point detection,
saddle connectivity classification, and arm events on sampled fields.

Excursion sets {f >= l} are labeled with 4-connectivity and their complement
with 8-connectivity: the standard planar duality, which prevents the two
phases from crossing through a saddle-like 2x2 cell configuration.  A disc
B(R) contains a grid cell iff the cell centre does.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.interpolate import RectBivariateSpline

from .errors import ClassificationError, ConfigError

_FOUR = ndimage.generate_binary_structure(2, 1)
_EIGHT = ndimage.generate_binary_structure(2, 2)

LOWER_CONNECTED = "LowerConnected"
UPPER_CONNECTED = "UpperConnected"
FOUR_ARM = "FourArmInR"

_DEGENERATE_FRACTION = 1e-3
_LEVEL_JITTER = 1e-9


@dataclass(frozen=True)
class TopologyReport:
    level: float
    n_es: int             # excursion components contained in B(R)
    n_ls: int             # closed level curves in B(R) (both phases' counts)
    n_es_touching: int    # excursion components crossing the B(R) boundary
    n_sub: int            # sub-level components contained in B(R)
    connectivity: str = "four/eight"
    membership_rule: str = "cell-center"


def _radii_grid(grid):
    x1, x2 = grid.meshgrid()
    return np.hypot(x1, x2)


def _counted_and_touching(labels, nlab, inside):
    """Count labels entirely inside the disc; 'touching' labels have cells on
    both sides of the boundary."""
    if nlab == 0:
        return 0, 0
    idx = np.arange(1, nlab + 1)
    in_counts = np.bincount(labels[inside].ravel(), minlength=nlab + 1)[1:]
    out_counts = np.bincount(labels[~inside].ravel(), minlength=nlab + 1)[1:]
    contained = int(np.count_nonzero((in_counts > 0) & (out_counts == 0)))
    touching = int(np.count_nonzero((in_counts > 0) & (out_counts > 0)))
    return contained, touching


def count_components(sample, level, R):
    """Component counts of {f >= level} and {f < level} inside B(R)."""
    grid = sample.grid
    if R + grid.spacing > grid.half_extent + 1e-12:
        raise ConfigError(
            f"counting radius {R} leaves no margin inside the padded grid "
            f"(half extent {grid.half_extent})"
        )
    values = sample.values
    ties = np.count_nonzero(values == level)
    if ties >= _DEGENERATE_FRACTION * values.size:
        warnings.warn(
            f"level {level} exactly hits {ties} grid values; "
            f"jittering by {_LEVEL_JITTER}", RuntimeWarning,
        )
        level = level + _LEVEL_JITTER
    mask = values >= level
    inside = _radii_grid(grid) <= R
    lab_es, n_es_all = ndimage.label(mask, structure=_FOUR)
    lab_sub, _ = ndimage.label(~mask, structure=_EIGHT)
    n_es, n_touch = _counted_and_touching(lab_es, n_es_all, inside)
    n_sub, _ = _counted_and_touching(lab_sub, int(lab_sub.max()), inside)
    return TopologyReport(
        level=float(level), n_es=n_es, n_ls=n_es + n_sub,
        n_es_touching=n_touch, n_sub=n_sub,
    )


def centroid_component_count(sample, level, R):
    """Excursion components whose centroid lies in B(R) (minus-sampling).

    Counting by containment in B(R) loses every component within a diameter
    of the boundary, a bias of order diameter/R; assigning each component to
    the disc holding its centroid removes that bias, which matters when a
    count is compared against a closed-form density at moderate R.
    Components reaching the outer grid edge are excluded (their continuation
    is unobserved, and their centroid is not meaningful).
    """
    grid = sample.grid
    mask = sample.values >= level
    labels, nlab = ndimage.label(mask, structure=_FOUR)
    if nlab == 0:
        return 0
    x1, x2 = grid.meshgrid()
    idx = np.arange(1, nlab + 1)
    cx = ndimage.mean(x1, labels, index=idx)
    cy = ndimage.mean(x2, labels, index=idx)
    edge = np.zeros_like(mask)
    edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
    on_edge = np.unique(labels[edge & (labels > 0)])
    ok = np.ones(nlab, dtype=bool)
    ok[on_edge - 1] = False
    return int(np.count_nonzero((np.hypot(cx, cy) <= R) & ok))


# ---------------------------------------------------------------------------
# Critical point detection


@dataclass(frozen=True)
class CriticalPoint:
    position: tuple
    level: float
    kind: str   # 'max' | 'min' | 'saddle'


@dataclass(frozen=True)
class CriticalPointSearch:
    points: list
    diagnostics: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)

    def of_kind(self, kind):
        return [p for p in self.points if p.kind == kind]


_NEWTON_ITERS = 30
_NEWTON_TOL = 1e-10


def _spline(sample):
    ax = sample.grid.axis()
    return RectBivariateSpline(ax, ax, sample.values, kx=3, ky=3)


def _hessians(sp, xs, ys):
    h11 = sp.ev(xs, ys, dx=2)
    h22 = sp.ev(xs, ys, dy=2)
    h12 = sp.ev(xs, ys, dx=1, dy=1)
    return h11, h22, h12


def find_critical_points(sample, window_radius, band=(-np.inf, np.inf)):
    """Critical points of the bicubic interpolant inside the square window
    |x|_inf <= window_radius with level inside the open band."""
    grid = sample.grid
    h = grid.spacing
    if window_radius + 2 * h > grid.half_extent + 1e-12:
        raise ConfigError("window must sit strictly inside the padded grid")
    sp = _spline(sample)
    ax = grid.axis()
    fx = sp(ax, ax, dx=1)
    fy = sp(ax, ax, dy=1)

    def cell_sign_change(d):
        lo = np.minimum.reduce([d[:-1, :-1], d[1:, :-1], d[:-1, 1:], d[1:, 1:]])
        hi = np.maximum.reduce([d[:-1, :-1], d[1:, :-1], d[:-1, 1:], d[1:, 1:]])
        return (lo <= 0.0) & (hi >= 0.0)

    cand = cell_sign_change(fx) & cell_sign_change(fy)
    cx = 0.5 * (ax[:-1] + ax[1:])
    X, Y = np.meshgrid(cx, cx, indexing="ij")
    inside = (np.abs(X) <= window_radius + h) & (np.abs(Y) <= window_radius + h)
    ii, jj = np.nonzero(cand & inside)
    xs, ys = X[ii, jj].copy(), Y[ii, jj].copy()
    active = np.ones(xs.size, dtype=bool)
    for _ in range(_NEWTON_ITERS):
        if not active.any():
            break
        g1 = sp.ev(xs[active], ys[active], dx=1)
        g2 = sp.ev(xs[active], ys[active], dy=1)
        done = np.hypot(g1, g2) < _NEWTON_TOL
        h11, h22, h12 = _hessians(sp, xs[active], ys[active])
        det = h11 * h22 - h12 * h12
        det = np.where(np.abs(det) < 1e-300, 1e-300, det)
        # Newton step for the gradient, with length capped at one cell
        sx = -(h22 * g1 - h12 * g2) / det
        sy = -(-h12 * g1 + h11 * g2) / det
        norm = np.hypot(sx, sy)
        clip = np.where(norm > h, h / norm, 1.0)
        idx = np.flatnonzero(active)
        xs[idx] += np.where(done, 0.0, sx * clip)
        ys[idx] += np.where(done, 0.0, sy * clip)
        active[idx[done]] = False

    converged = ~active
    diagnostics = [
        {"cell_center": (float(xs[k]), float(ys[k])), "reason": "newton-non-convergence"}
        for k in np.flatnonzero(active)
    ]
    xs, ys = xs[converged], ys[converged]
    keep = (np.abs(xs) <= window_radius) & (np.abs(ys) <= window_radius)
    xs, ys = xs[keep], ys[keep]

    # deduplicate refined roots found from neighbouring cells
    order = np.lexsort((ys, xs))
    xs, ys = xs[order], ys[order]
    taken_x, taken_y = [], []
    for x, y in zip(xs, ys):
        dup = any((x - px) ** 2 + (y - py) ** 2 < (0.25 * h) ** 2
                  for px, py in zip(taken_x, taken_y))
        if not dup:
            taken_x.append(x)
            taken_y.append(y)
    xs = np.asarray(taken_x)
    ys = np.asarray(taken_y)

    points = []
    if xs.size:
        vals = sp.ev(xs, ys)
        h11, h22, h12 = _hessians(sp, xs, ys)
        det = h11 * h22 - h12 * h12
        for x, y, v, d, a in zip(xs, ys, vals, det, h11 + h22):
            if not (band[0] < v < band[1]):
                continue
            kind = "saddle" if d < 0 else ("max" if a < 0 else "min")
            points.append(CriticalPoint(position=(float(x), float(y)),
                                        level=float(v), kind=kind))
    return CriticalPointSearch(points=points, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# Saddle connectivity classification


_RING_ANGLES = 256
_EPS_RETRIES = 4


def _bilinear(sample, pts):
    grid = sample.grid
    h = grid.spacing
    m = grid.origin_index
    coords = np.empty((2, len(pts)))
    pts = np.asarray(pts, dtype=float)
    coords[0] = pts[:, 0] / h + m
    coords[1] = pts[:, 1] / h + m
    return ndimage.map_coordinates(sample.values, coords, order=1, mode="nearest")


def _ring_arcs(signs):
    """Split a cyclic sign sequence into arcs; returns list of (sign, mid_angle)."""
    n = signs.size
    change = np.flatnonzero(signs != np.roll(signs, 1))
    if change.size == 0:
        return [(int(signs[0]), 0.0)]
    arcs = []
    for a, b in zip(change, np.roll(change, -1)):
        length = (b - a) % n
        if length == 0:
            length = n
        mid = (a + (length - 1) / 2.0) % n
        arcs.append((int(signs[a]), 2.0 * math.pi * mid / n))
    return arcs


def _classify(sample, center, level, R, eps, neg_scale, pos_scale):
    grid = sample.grid
    h = grid.spacing
    if eps is None:
        eps = min(0.5, 0.1 * min(abs(neg_scale), pos_scale))
        eps = max(eps, 4.0 * h)
    cx, cy = center
    angles = np.linspace(0.0, 2.0 * math.pi, _RING_ANGLES, endpoint=False)
    for attempt in range(_EPS_RETRIES + 1):
        ring = np.column_stack([cx + eps * np.cos(angles), cy + eps * np.sin(angles)])
        vals = _bilinear(sample, ring) - level
        signs = np.where(vals >= 0.0, 1, -1)
        arcs = _ring_arcs(signs)
        if len(arcs) == 4 and [s for s, _ in arcs] in ([1, -1, 1, -1], [-1, 1, -1, 1]):
            break
        if attempt == _EPS_RETRIES or eps / 2.0 < 2.0 * h:
            raise ClassificationError(
                f"ring at radius {eps} shows {len(arcs)} sign arcs (need 4 "
                f"alternating); saddle structure unresolved at this resolution"
            )
        eps /= 2.0
    pos_seeds = [(cx + eps * math.cos(a), cy + eps * math.sin(a))
                 for s, a in arcs if s > 0]
    neg_seeds = [(cx + eps * math.cos(a), cy + eps * math.sin(a))
                 for s, a in arcs if s < 0]

    x1, x2 = grid.meshgrid()
    rr = np.hypot(x1 - cx, x2 - cy)
    # exclude a core disc: the centre cell sits exactly at the level and would
    # otherwise bridge the two upper sectors through the single saddle point
    domain = (rr <= R) & (rr >= eps / 2.0)
    upper = (sample.values >= level) & domain
    lower = (sample.values < level) & domain
    lab_up, _ = ndimage.label(upper, structure=_FOUR)
    lab_lo, _ = ndimage.label(lower, structure=_EIGHT)

    def seed_label(labels, seeds):
        # the nearest cell to an arc midpoint can fall just across the phase
        # boundary; scan outward over a small neighbourhood for a labeled cell
        n = labels.shape[0]
        out = []
        for sx, sy in seeds:
            i0 = int(round(sx / h)) + grid.origin_index
            j0 = int(round(sy / h)) + grid.origin_index
            found = 0
            for di, dj in sorted(
                ((a, b) for a in range(-2, 3) for b in range(-2, 3)),
                key=lambda d: d[0] ** 2 + d[1] ** 2,
            ):
                i, j = i0 + di, j0 + dj
                if 0 <= i < n and 0 <= j < n and labels[i, j]:
                    found = int(labels[i, j])
                    break
            out.append(found)
        return out

    up_labels = seed_label(lab_up, pos_seeds)
    lo_labels = seed_label(lab_lo, neg_seeds)
    upper_joined = up_labels[0] != 0 and up_labels[0] == up_labels[1]
    lower_joined = lo_labels[0] != 0 and lo_labels[0] == lo_labels[1]
    if upper_joined and lower_joined:
        raise ClassificationError(
            "both phases joined around the saddle: impossible in the "
            "continuum, indicates a resolution failure"
        )
    if lower_joined:
        return LOWER_CONNECTED
    if upper_joined:
        return UPPER_CONNECTED
    return FOUR_ARM


def classify_saddle_at_origin(sample, R, epsilon=None):
    """Connectivity class of the conditioned saddle at the origin within B(R)."""
    if sample.kind != "conditional":
        raise ConfigError("classification requires a conditional sample")
    if R > sample.grid.half_extent + 1e-12:
        raise ConfigError("classification radius exceeds the grid")
    eigs = np.linalg.eigvalsh(sample.jet0.hess)
    return _classify(sample, (0.0, 0.0), sample.level, R, epsilon,
                     neg_scale=float(eigs[0]), pos_scale=float(eigs[1]))


# ---------------------------------------------------------------------------
# Arm events and four-arm saddles


def arm_event(sample, level, r, R):
    """True iff an excursion component of {f >= level} meets both B(r) and the
    complement of B(R)."""
    if not r < R <= sample.grid.radius + 1e-12:
        raise ConfigError(f"need r < R <= grid radius, got r={r}, R={R}")
    rr = _radii_grid(sample.grid)
    labels, nlab = ndimage.label(sample.values >= level, structure=_FOUR)
    if nlab == 0:
        return False
    inner = np.unique(labels[(rr <= r) & (labels > 0)])
    outer = np.unique(labels[(rr > R) & (labels > 0)])
    return bool(np.intersect1d(inner, outer, assume_unique=True).size)


def count_four_arm_saddles(sample, R, arm_radius, band):
    """Number of saddles in B(R) with level in the band whose four arms all
    persist to distance arm_radius."""
    grid = sample.grid
    if R + arm_radius > grid.half_extent + 1e-12:
        raise ConfigError("four-arm search needs R + arm_radius inside the grid")
    found = find_critical_points(sample, window_radius=R, band=band)
    sp = _spline(sample)
    count = 0
    for p in found.of_kind("saddle"):
        x, y = p.position
        if math.hypot(x, y) > R:
            continue
        h11, h22, h12 = _hessians(sp, np.array([x]), np.array([y]))
        H = np.array([[h11[0], h12[0]], [h12[0], h22[0]]])
        eigs = np.linalg.eigvalsh(H)
        try:
            cls = _classify(sample, (x, y), p.level, arm_radius, None,
                            neg_scale=float(eigs[0]), pos_scale=float(eigs[1]))
        except ClassificationError:
            continue
        if cls == FOUR_ARM:
            count += 1
    return count
