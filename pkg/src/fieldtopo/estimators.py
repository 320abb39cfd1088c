"""Monte Carlo pipelines over sampled fields: component-density estimation,
saddle connectivity ratios, paired level-derivative estimates, stochastic
dominance checks, level identities, and arm-decay trends.

Replicates are independent tasks keyed by (master_seed, index); every
replicate derives its own RNG stream from that key, so results are
byte-identical for any worker count or completion order.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import covariance, critdens, sampler, topology
from .errors import ClassificationError, ConfigError, DegeneracyError

DEFAULT_PAD = 2.0
CONDITIONAL_PAD = 0.5
KS_ONE_SIDED_1PCT = math.sqrt(-0.5 * math.log(0.01))


@dataclass(frozen=True)
class EstimateWithCI:
    value: float
    std_error: float
    n_reps: int
    master_seed: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_reps < 2:
            raise ConfigError("estimates need n_reps >= 2")


@dataclass(frozen=True)
class RatioReport:
    level: float
    p_lower: EstimateWithCI
    p_upper: EstimateWithCI
    p_fourarm: EstimateWithCI
    n_failed: int = 0


# ---------------------------------------------------------------------------
# Replicate runner


def _rep_component_counts(model_name, args, seed, index):
    level, R, h, n_freqs = args
    model = covariance.get_model(model_name)
    grid = sampler.GridSpec(radius=R, spacing=h, pad=DEFAULT_PAD)
    s = sampler._sample_field_rng(model, grid, sampler.rng_from(seed, index),
                                  seed, n_freqs)
    rep = topology.count_components(s, level, R)
    return (rep.n_es, rep.n_ls)


def _rep_classify(model_name, args, seed, index):
    level, R, h, n_freqs = args
    model = covariance.get_model(model_name)
    grid = sampler.GridSpec(radius=R, spacing=h, pad=CONDITIONAL_PAD)
    s = sampler.sample_conditional_field(
        model, level, grid, seed, n_freqs, rng=sampler.rng_from(seed, index))
    try:
        return (topology.classify_saddle_at_origin(s, R),)
    except ClassificationError:
        return ("failed",)


def _rep_paired_counts(model_name, args, seed, index):
    level, delta, R, h, n_freqs = args
    model = covariance.get_model(model_name)
    grid = sampler.GridSpec(radius=R, spacing=h, pad=DEFAULT_PAD)
    s = sampler._sample_field_rng(model, grid, sampler.rng_from(seed, index),
                                  seed, n_freqs)
    n0 = topology.count_components(s, level, R).n_es
    n1 = topology.count_components(s, level + delta, R).n_es
    return (n0, n1)


def _rep_conditional_points(model_name, args, seed, index):
    level, pts, n_freqs = args
    model = covariance.get_model(model_name)
    vals = sampler.conditional_point_values(
        model, level, np.asarray(pts, dtype=float),
        sampler.rng_from(seed, index), n_freqs)
    return tuple(float(v) for v in vals)


def _rep_multilevel_counts(model_name, args, seed, index):
    levels, R, h, n_freqs = args
    model = covariance.get_model(model_name)
    grid = sampler.GridSpec(radius=R, spacing=h, pad=DEFAULT_PAD)
    s = sampler._sample_field_rng(model, grid, sampler.rng_from(seed, index),
                                  seed, n_freqs)
    out = []
    for level in levels:
        rep = topology.count_components(s, level, R)
        out.extend([rep.n_es, rep.n_ls,
                    topology.centroid_component_count(s, level, R)])
    return tuple(out)


def _rep_arm_events(model_name, args, seed, index):
    level, r, R_list, h, n_freqs = args
    model = covariance.get_model(model_name)
    grid = sampler.GridSpec(radius=max(R_list), spacing=h, pad=DEFAULT_PAD)
    s = sampler._sample_field_rng(model, grid, sampler.rng_from(seed, index),
                                  seed, n_freqs)
    return tuple(int(topology.arm_event(s, level, r, R)) for R in R_list)


_REPLICATE_FNS = {
    "component_counts": _rep_component_counts,
    "classify": _rep_classify,
    "paired_counts": _rep_paired_counts,
    "conditional_points": _rep_conditional_points,
    "multilevel_counts": _rep_multilevel_counts,
    "arm_events": _rep_arm_events,
}


def _chunk_worker(fn_name, model_name, args, seed, indices):
    fn = _REPLICATE_FNS[fn_name]
    return [fn(model_name, args, seed, i) for i in indices]


def _run_replicates(fn_name, model_name, args, n_reps, seed, workers=1):
    """Results indexed by replicate, independent of scheduling order."""
    if n_reps < 2:
        raise ConfigError("estimates need n_reps >= 2")
    if workers is None or workers <= 1:
        return _chunk_worker(fn_name, model_name, args, seed, range(n_reps))
    out = [None] * n_reps
    chunks = [c for c in np.array_split(np.arange(n_reps), workers * 4) if len(c)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = {
            pool.submit(_chunk_worker, fn_name, model_name, args, seed,
                        [int(i) for i in c]): c
            for c in chunks
        }
        for fut, c in futures.items():
            for i, v in zip(c, fut.result()):
                out[int(i)] = v
    return out


def _mean_se(values, master_seed, n_reps, **metadata):
    values = np.asarray(values, dtype=float)
    return EstimateWithCI(
        value=float(values.mean()),
        std_error=float(values.std(ddof=1) / math.sqrt(values.size)),
        n_reps=n_reps, master_seed=int(master_seed), metadata=metadata,
    )


def _require_named_model(model):
    covariance.get_model(model.name)
    return model.name


# ---------------------------------------------------------------------------
# Estimators


def estimate_component_density(model, level, R, h, n_reps, seed, workers=1,
                               n_freqs=sampler.DEFAULT_N_FREQS):
    """(c_ES, c_LS): mean component counts inside B(R) divided by pi R^2."""
    name = _require_named_model(model)
    rows = _run_replicates("component_counts", name, (level, R, h, n_freqs),
                           n_reps, seed, workers)
    area = math.pi * R * R
    es = [n / area for n, _ in rows]
    ls = [n / area for _, n in rows]
    meta = dict(model=name, level=level, R=R, h=h)
    return (_mean_se(es, seed, n_reps, quantity="c_es", **meta),
            _mean_se(ls, seed, n_reps, quantity="c_ls", **meta))


def estimate_connectivity_ratio(model, level, R, h, n_reps, seed, workers=1,
                                n_freqs=sampler.DEFAULT_N_FREQS,
                                exploratory=False):
    """Fractions of lower-/upper-connected and four-arm conditioned saddles."""
    name = _require_named_model(model)
    if not model.degenerate_jet and not exploratory:
        report = covariance.check_monotonicity_assumption(model)
        if not report.passed:
            raise ConfigError(
                f"model {name} fails the monotonicity assumption "
                f"({report.failed_check}); rerun with exploratory=True"
            )
    rows = _run_replicates("classify", name, (level, R, h, n_freqs),
                           n_reps, seed, workers)
    classes = [r[0] for r in rows]
    n_failed = classes.count("failed")
    n_ok = len(classes) - n_failed
    if n_ok < 2:
        raise ClassificationError("all conditional draws failed to classify")
    meta = dict(model=name, level=level, R=R, h=h)

    def fraction(label):
        k = classes.count(label)
        p = k / n_ok
        se = math.sqrt(p * (1.0 - p) / n_ok)
        return EstimateWithCI(value=p, std_error=se, n_reps=n_ok,
                              master_seed=int(seed),
                              metadata=dict(quantity=f"p_{label}", **meta))

    return RatioReport(
        level=float(level),
        p_lower=fraction(topology.LOWER_CONNECTED),
        p_upper=fraction(topology.UPPER_CONNECTED),
        p_fourarm=fraction(topology.FOUR_ARM),
        n_failed=n_failed,
    )


def estimate_derivative_sign(model, level, delta, R, h, n_reps, seed, workers=1,
                             n_freqs=sampler.DEFAULT_N_FREQS):
    """Paired finite-difference slope of c_ES at the level: common random
    numbers, mean of (N(l+delta) - N(l)) / (pi R^2 delta)."""
    if not 0.02 <= delta <= 0.2:
        raise ConfigError(f"delta must lie in [0.02, 0.2], got {delta}")
    name = _require_named_model(model)
    rows = _run_replicates("paired_counts", name, (level, delta, R, h, n_freqs),
                           n_reps, seed, workers)
    area = math.pi * R * R
    diffs = [(n1 - n0) / (area * delta) for n0, n1 in rows]
    return _mean_se(diffs, seed, n_reps, quantity="dc_es", model=name,
                    level=level, R=R, h=h, delta=delta)


@dataclass(frozen=True)
class DominancePoint:
    point: tuple
    statistic: float
    critical: float
    passed: bool


@dataclass(frozen=True)
class DominanceReport:
    level1: float
    level2: float
    n_reps: int
    points: list

    @property
    def passed(self):
        return all(p.passed for p in self.points)


def check_stochastic_dominance(model, points, level1, level2, n_reps, seed,
                               workers=1, n_freqs=sampler.DEFAULT_N_FREQS):
    """One-sided KS check that f~_{l1}(t) - l1 stochastically dominates
    f~_{l2}(t) - l2 at each point, for l1 < l2."""
    if not level1 <= level2:
        raise ConfigError("need level1 <= level2")
    pts = [tuple(map(float, p)) for p in np.atleast_2d(points)]
    if any(p == (0.0, 0.0) for p in pts):
        raise ConfigError("dominance points must be away from the origin")
    name = _require_named_model(model)
    rows1 = _run_replicates("conditional_points", name, (level1, pts, n_freqs),
                            n_reps, seed, workers)
    rows2 = _run_replicates("conditional_points", name, (level2, pts, n_freqs),
                            n_reps, seed + 1, workers)
    a = np.asarray(rows1) - level1
    b = np.asarray(rows2) - level2
    critical = KS_ONE_SIDED_1PCT * math.sqrt(2.0 / n_reps)
    out = []
    for k, p in enumerate(pts):
        x = np.sort(a[:, k])
        y = np.sort(b[:, k])
        # sup_c [F1(c) - F2(c)] over the pooled sample points
        pooled = np.concatenate([x, y])
        f1 = np.searchsorted(x, pooled, side="right") / n_reps
        f2 = np.searchsorted(y, pooled, side="right") / n_reps
        stat = float(np.max(f1 - f2))
        out.append(DominancePoint(point=p, statistic=stat, critical=critical,
                                  passed=stat <= critical))
    return DominanceReport(level1=float(level1), level2=float(level2),
                           n_reps=n_reps, points=out)


@dataclass(frozen=True)
class IdentityRow:
    level: float
    c_ls: float
    c_es_sum: float
    decomposition_gap: float
    decomposition_limit: float
    decomposition_ok: bool
    euler_diff: float
    euler_target: float
    euler_gap: float
    euler_limit: float
    euler_ok: bool


@dataclass(frozen=True)
class IdentityReport:
    rows: list

    @property
    def passed(self):
        return all(r.decomposition_ok and r.euler_ok for r in self.rows)


def verify_level_identities(model, level_grid, R, h, n_reps, seed, workers=1,
                            n_freqs=sampler.DEFAULT_N_FREQS):
    """Checks, per level l of a symmetric grid, the component-count identity
    c_LS(l) = c_ES(l) + c_ES(-l) and the Euler-characteristic identity
    (N_ES(l) - N_ES(-l)) / (pi R^2) = h(l), on common realizations."""
    levels = sorted(set(float(l) for l in level_grid))
    for l in levels:
        if not any(abs(l + m) < 1e-12 for m in levels):
            raise ConfigError(f"level grid must be symmetric; {l} lacks a mirror")
    name = _require_named_model(model)
    rows = _run_replicates("multilevel_counts", name, (tuple(levels), R, h, n_freqs),
                           n_reps, seed, workers)
    arr = np.asarray(rows, dtype=float)   # per level: n_es, n_ls, n_es_centroid
    area = math.pi * R * R
    out = []
    for i, l in enumerate(levels):
        j = min(range(len(levels)), key=lambda k: abs(levels[k] + l))
        es = arr[:, 3 * i] / area
        ls = arr[:, 3 * i + 1] / area
        es_m = arr[:, 3 * j] / area
        d = ls - es - es_m
        d_se = float(d.std(ddof=1) / math.sqrt(n_reps))
        # the Euler comparison is against a closed form, so it uses the
        # boundary-unbiased centroid counts
        e = (arr[:, 3 * i + 2] - arr[:, 3 * j + 2]) / area
        e_se = float(e.std(ddof=1) / math.sqrt(n_reps))
        target = float(critdens.euler_density_h(model, l))
        d_lim = 3.0 * d_se
        e_lim = 3.0 * e_se + 0.02 * abs(target) + 1e-3
        out.append(IdentityRow(
            level=l, c_ls=float(ls.mean()),
            c_es_sum=float(es.mean() + es_m.mean()),
            decomposition_gap=abs(float(d.mean())), decomposition_limit=d_lim,
            decomposition_ok=abs(float(d.mean())) <= d_lim,
            euler_diff=float(e.mean()), euler_target=target,
            euler_gap=abs(float(e.mean()) - target), euler_limit=e_lim,
            euler_ok=abs(float(e.mean()) - target) <= e_lim,
        ))
    return IdentityReport(rows=out)


@dataclass(frozen=True)
class ArmDecayReport:
    r: float
    R_list: list
    probabilities: list       # EstimateWithCI per R
    slope: float              # fitted d log p / d log(R/r)
    events: list              # per-replicate 0/1 outcomes, row per replicate


def estimate_arm_decay(model, level, r, R_list, n_reps, seed, workers=1, h=0.1,
                       n_freqs=sampler.DEFAULT_N_FREQS):
    """One-arm probabilities P(excursion component joins B(r) to outside B(R))
    per R, with a least-squares log-log slope."""
    R_list = sorted(float(R) for R in R_list)
    if not r < R_list[0]:
        raise ConfigError("need r < min(R_list)")
    name = _require_named_model(model)
    rows = _run_replicates("arm_events", name, (level, r, tuple(R_list), h, n_freqs),
                           n_reps, seed, workers)
    arr = np.asarray(rows, dtype=float)
    probs = []
    for k, R in enumerate(R_list):
        p = float(arr[:, k].mean())
        if p in (0.0, 1.0):
            raise DegeneracyError(
                f"arm events all-{'one' if p else 'zero'} at R={R}: "
                f"log-log fit is degenerate"
            )
        se = math.sqrt(p * (1.0 - p) / n_reps)
        probs.append(EstimateWithCI(value=p, std_error=se, n_reps=n_reps,
                                    master_seed=int(seed),
                                    metadata=dict(quantity="p_arm", model=name,
                                                  level=level, R=R, h=h, r=r)))
    slope = float(np.polyfit(np.log(np.array(R_list) / r),
                             np.log([p.value for p in probs]), 1)[0])
    return ArmDecayReport(r=float(r), R_list=R_list, probabilities=probs,
                          slope=slope, events=[tuple(row) for row in rows])
