"""Configuration-driven experiment runner.

Every subcommand writes a CSV with its results plus a JSON manifest holding
the full configuration and master seed, so any output can be reproduced
exactly.  Exit codes: 0 success, 2 a verification-style check failed,
1 error.
"""

import argparse
import configparser
import csv
import datetime
import json
import os
import sys

import numpy as np

from . import __version__, covariance, critdens, estimators, sampler, specfun, topology
from .errors import FieldtopoError

ESTIMATE_COLUMNS = ["model", "level", "R", "h", "n_reps", "estimate",
                    "std_error", "quantity"]


def parse_level_grid(text):
    """Levels from 'start:stop:step' (inclusive endpoints within 1e-12) or a
    comma-separated list, or a single number."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"level grid must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ValueError(f"bad level grid {text!r}")
        n = int(round((stop - start) / step))
        if abs(start + n * step - stop) > 1e-12:
            raise ValueError(f"step does not divide the range in {text!r}")
        return [start + i * step for i in range(n + 1)]
    if "," in text:
        return [float(p) for p in text.split(",") if p.strip()]
    return [float(text)]


def _parse_points(text):
    return [tuple(float(c) for c in p.split(",")) for p in text.split(";") if p.strip()]


def _est_row(est):
    m = est.metadata
    return {
        "model": m.get("model", ""), "level": m.get("level", ""),
        "R": m.get("R", ""), "h": m.get("h", ""), "n_reps": est.n_reps,
        "estimate": repr(est.value), "std_error": repr(est.std_error),
        "quantity": m.get("quantity", ""),
    }


# ---------------------------------------------------------------------------
# Subcommand handlers: each returns (exit_code, fieldnames, rows)


def _cmd_densities(args):
    model = covariance.get_model(args.model)
    law = covariance.jet2_law(model)
    rows = critdens.density_table(model, law, parse_level_grid(args.levels))
    return 0, ["level", "p_m_plus", "p_m_minus", "p_s", "h"], rows


def _cmd_verify_bessel(args):
    reports = [specfun.verify_bessel_inequality(which) for which in ("minus", "plus")]
    # the 101-point coarse grid with the 0.08 margin
    coarse = specfun.bessel_gap("plus", 5.0 + 0.04 * np.arange(101))
    i = int(np.argmin(coarse))
    rows = [
        {"name": r.name, "grid_min": repr(r.grid_min),
         "grid_argmin": repr(r.grid_argmin), "passed": r.passed}
        for r in reports
    ]
    rows.append({
        "name": "one_minus_j0_plus_2j2_coarse_margin",
        "grid_min": repr(float(coarse[i])),
        "grid_argmin": repr(float(5.0 + 0.04 * i)),
        "passed": bool(coarse[i] > 0.08),
    })
    code = 0 if all(r["passed"] for r in rows) else 2
    return code, ["name", "grid_min", "grid_argmin", "passed"], rows


def _cmd_verify_assumptions(args):
    model = covariance.get_model(args.model)
    rows = []
    ok = True
    if model.degenerate_jet:
        rows.append({"check": "monotonicity", "passed": "",
                     "detail": "skipped: degenerate second jet"})
    else:
        rep = covariance.check_monotonicity_assumption(model)
        ok &= rep.passed
        rows.append({"check": "monotonicity", "passed": rep.passed,
                     "detail": rep.failed_check or ""})
    probes = _parse_points(args.points) if args.points else [(0.7, 0.0), (1.1, 0.3)]
    nd = covariance.check_nondegeneracy(model, probes)
    ok &= nd.sigma0_ok or model.degenerate_jet
    rows.append({"check": "sigma0", "passed": nd.sigma0_ok,
                 "detail": repr(nd.det_sigma0)})
    rows.append({"check": "sigma_full", "passed": nd.sigma_full_ok,
                 "detail": repr(nd.det_sigma_full)})
    for p in nd.probes:
        ok &= p.passed
        label = ",".join(f"{float(c):g}" for c in p.point)
        rows.append({"check": f"conditional@({label})", "passed": p.passed,
                     "detail": repr(p.det)})
    return (0 if ok else 2), ["check", "passed", "detail"], rows


def _cmd_simulate(args):
    model = covariance.get_model(args.model)
    grid = sampler.GridSpec(radius=args.R, spacing=args.h)
    rows = []
    for i in range(args.reps):
        rng = sampler.rng_from(args.seed, i)
        if args.level is None:
            s = sampler._sample_field_rng(model, grid, rng, args.seed, args.n_freqs)
        else:
            s = sampler.sample_conditional_field(model, args.level, grid,
                                                 args.seed, args.n_freqs, rng=rng)
        path = os.path.join(args.out, f"field_{i:04d}.bin")
        sampler.write_field(s, path)
        rows.append({"index": i, "path": path, "kind": s.kind,
                     "level": "" if s.level is None else repr(s.level)})
    return 0, ["index", "path", "kind", "level"], rows


def _cmd_components(args):
    model = covariance.get_model(args.model)
    es, ls = estimators.estimate_component_density(
        model, args.level, args.R, args.h, args.reps, args.seed,
        workers=args.workers, n_freqs=args.n_freqs)
    return 0, ESTIMATE_COLUMNS, [_est_row(es), _est_row(ls)]


def _cmd_saddle_ratio(args):
    model = covariance.get_model(args.model)
    rows = []
    for level in parse_level_grid(args.levels):
        rep = estimators.estimate_connectivity_ratio(
            model, level, args.R, args.h, args.reps, args.seed,
            workers=args.workers, n_freqs=args.n_freqs,
            exploratory=args.exploratory)
        for est in (rep.p_lower, rep.p_upper, rep.p_fourarm):
            rows.append(_est_row(est))
    return 0, ESTIMATE_COLUMNS, rows


def _cmd_derivative(args):
    model = covariance.get_model(args.model)
    est = estimators.estimate_derivative_sign(
        model, args.level, args.delta, args.R, args.h, args.reps, args.seed,
        workers=args.workers, n_freqs=args.n_freqs)
    return 0, ESTIMATE_COLUMNS, [_est_row(est)]


def _cmd_dominance(args):
    model = covariance.get_model(args.model)
    points = _parse_points(args.points)
    rep = estimators.check_stochastic_dominance(
        model, points, args.level1, args.level2, args.reps, args.seed,
        workers=args.workers, n_freqs=args.n_freqs)
    rows = [
        {"point": f"{p.point[0]},{p.point[1]}", "statistic": repr(p.statistic),
         "critical": repr(p.critical), "passed": p.passed}
        for p in rep.points
    ]
    return (0 if rep.passed else 2), ["point", "statistic", "critical", "passed"], rows


def _cmd_identities(args):
    model = covariance.get_model(args.model)
    rep = estimators.verify_level_identities(
        model, parse_level_grid(args.levels), args.R, args.h, args.reps,
        args.seed, workers=args.workers, n_freqs=args.n_freqs)
    rows = [
        {"level": r.level, "c_ls": repr(r.c_ls), "c_es_sum": repr(r.c_es_sum),
         "decomposition_gap": repr(r.decomposition_gap),
         "decomposition_ok": r.decomposition_ok,
         "euler_diff": repr(r.euler_diff), "euler_target": repr(r.euler_target),
         "euler_ok": r.euler_ok}
        for r in rep.rows
    ]
    cols = ["level", "c_ls", "c_es_sum", "decomposition_gap", "decomposition_ok",
            "euler_diff", "euler_target", "euler_ok"]
    return (0 if rep.passed else 2), cols, rows


def _cmd_arm_decay(args):
    model = covariance.get_model(args.model)
    R_list = [float(x) for x in args.R.split(",")]
    rep = estimators.estimate_arm_decay(
        model, args.level, args.r_inner, R_list, args.reps, args.seed,
        workers=args.workers, h=args.h, n_freqs=args.n_freqs)
    rows = [_est_row(p) for p in rep.probabilities]
    rows.append({"model": args.model, "level": args.level, "R": "",
                 "h": args.h, "n_reps": args.reps, "estimate": repr(rep.slope),
                 "std_error": "", "quantity": "log_log_slope"})
    return 0, ESTIMATE_COLUMNS, rows


def _cmd_fourarm_count(args):
    model = covariance.get_model(args.model)
    band = (args.level - args.band_width / 2.0, args.level + args.band_width / 2.0)
    grid = sampler.GridSpec(radius=args.R + args.arm_radius, spacing=args.h)
    counts = []
    for i in range(args.reps):
        s = sampler._sample_field_rng(model, grid, sampler.rng_from(args.seed, i),
                                      args.seed, args.n_freqs)
        counts.append(topology.count_four_arm_saddles(s, args.R, args.arm_radius, band))
    counts = np.asarray(counts, dtype=float)
    row = {"model": args.model, "level": args.level, "R": args.R, "h": args.h,
           "n_reps": args.reps, "estimate": repr(float(counts.mean())),
           "std_error": repr(float(counts.std(ddof=1) / np.sqrt(len(counts))))
           if len(counts) > 1 else "",
           "quantity": "four_arm_count"}
    return 0, ESTIMATE_COLUMNS, [row]


_HANDLERS = {
    "densities": _cmd_densities,
    "verify-bessel": _cmd_verify_bessel,
    "verify-assumptions": _cmd_verify_assumptions,
    "simulate": _cmd_simulate,
    "components": _cmd_components,
    "saddle-ratio": _cmd_saddle_ratio,
    "derivative": _cmd_derivative,
    "dominance": _cmd_dominance,
    "identities": _cmd_identities,
    "arm-decay": _cmd_arm_decay,
    "fourarm-count": _cmd_fourarm_count,
}


# ---------------------------------------------------------------------------
# Argument plumbing


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="fieldtopo",
        description="Topology experiments on planar Gaussian random fields.",
    )
    parser.add_argument("--config", help="INI-style config file; a section per "
                        "subcommand; command-line flags override file values")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name, **extra):
        p = sub.add_parser(name)
        p.add_argument("--model", default="rpw")
        p.add_argument("--seed", type=int, default=1)
        p.add_argument("--out", default=".")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--n-freqs", type=int, default=sampler.DEFAULT_N_FREQS)
        for flag, kw in extra.items():
            p.add_argument(flag, **kw)
        return p

    add("densities", **{"--levels": dict(default="-3:3:0.1")})
    add("verify-bessel")
    add("verify-assumptions", **{"--points": dict(default="")})
    add("simulate", **{"--level": dict(type=float, default=None),
                       "--R": dict(type=float, default=10.0),
                       "--h": dict(type=float, default=0.1),
                       "--reps": dict(type=int, default=1)})
    add("components", **{"--level": dict(type=float, default=0.0),
                         "--R": dict(type=float, default=10.0),
                         "--h": dict(type=float, default=0.1),
                         "--reps": dict(type=int, default=200)})
    add("saddle-ratio", **{"--levels": dict(default="0"),
                           "--R": dict(type=float, default=10.0),
                           "--h": dict(type=float, default=0.1),
                           "--reps": dict(type=int, default=2000),
                           "--exploratory": dict(action="store_true")})
    add("derivative", **{"--level": dict(type=float, default=0.3),
                         "--delta": dict(type=float, default=0.1),
                         "--R": dict(type=float, default=10.0),
                         "--h": dict(type=float, default=0.1),
                         "--reps": dict(type=int, default=1000)})
    add("dominance", **{"--level1": dict(type=float, default=0.0),
                        "--level2": dict(type=float, default=1.0),
                        "--points": dict(default="0.7,0;1.1,0.3"),
                        "--reps": dict(type=int, default=5000)})
    add("identities", **{"--levels": dict(default="-1:1:0.5"),
                         "--R": dict(type=float, default=12.0),
                         "--h": dict(type=float, default=0.1),
                         "--reps": dict(type=int, default=400)})
    add("arm-decay", **{"--level": dict(type=float, default=0.0),
                        "--r-inner": dict(type=float, default=2.0),
                        "--R": dict(default="4,8,16"),
                        "--h": dict(type=float, default=0.1),
                        "--reps": dict(type=int, default=400)})
    add("fourarm-count", **{"--level": dict(type=float, default=0.0),
                            "--band-width": dict(type=float, default=0.1),
                            "--R": dict(type=float, default=10.0),
                            "--arm-radius": dict(type=float, default=2.0),
                            "--h": dict(type=float, default=0.1),
                            "--reps": dict(type=int, default=50)})
    return parser, sub


def _apply_config_file(parser, sub, argv):
    """Config-file values become subparser defaults; flags still override."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cp = configparser.ConfigParser()
    if not cp.read(known.config):
        raise FileNotFoundError(f"config file {known.config!r} not found")
    for name, sp in sub.choices.items():
        if cp.has_section(name):
            defaults = {}
            for key, value in cp.items(name):
                dest = key.replace("-", "_")
                for action in sp._actions:
                    if action.dest == dest:
                        if action.type is not None:
                            value = action.type(value)
                        elif isinstance(action.const, bool) or isinstance(
                                action.default, bool):
                            value = cp.getboolean(name, key)
                        defaults[dest] = value
                        break
                else:
                    raise ValueError(f"unknown config key {key!r} in [{name}]")
            sp.set_defaults(**defaults)


def _write_outputs(args, fieldnames, rows, started, code):
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, f"{args.subcommand.replace('-', '_')}.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    config = {k: v for k, v in vars(args).items()
              if k not in ("subcommand", "config")}
    manifest = {
        "subcommand": args.subcommand,
        "config": config,
        "seed": args.seed,
        "version": __version__,
        "exit_status": code,
        "started_at": started,
        "finished_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(os.path.join(args.out,
                           f"{args.subcommand.replace('-', '_')}_manifest.json"),
              "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
        fh.write("\n")
    return csv_path


def _merge_negative_values(argv):
    """argparse mistakes values like '-3:3:0.1' or '-0.5' for flags; fold
    them into '--flag=value' form."""
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        nxt = argv[i + 1] if i + 1 < len(argv) else None
        if (tok.startswith("--") and "=" not in tok and nxt is not None
                and len(nxt) > 1 and nxt[0] == "-" and nxt[1] in "0123456789."):
            out.append(f"{tok}={nxt}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    argv = _merge_negative_values(argv)
    parser, sub = _build_parser()
    try:
        _apply_config_file(parser, sub, argv)
        args = parser.parse_args(argv)
        started = datetime.datetime.now(datetime.timezone.utc).isoformat()
        code, fieldnames, rows = _HANDLERS[args.subcommand](args)
        path = _write_outputs(args, fieldnames, rows, started, code)
    except FieldtopoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{args.subcommand}: wrote {path} ({len(rows)} rows), exit {code}")
    return code


if __name__ == "__main__":
    sys.exit(main())
