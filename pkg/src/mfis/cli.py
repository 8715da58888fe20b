"""Command-line harness: ``python -m mfis <command> ...``.

Commands
--------
run                 estimate for every configured (N, policy) pair; one CSV row each
table               IS vs standard MC comparison in the layout of tables 1-3
riccati-dump        Riccati coefficients on a uniform time grid
girsanov-check      second moment from controlled and tilted runs must agree
small-noise-check   particle estimator vs the aggregated small-noise estimator
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from typing import Optional

import numpy as np

from .config import ConfigError, RunConfig, load_config, parse_config
from .estimators import aggregate, agree_within, girsanov_check, small_noise_cross_check
from .experiments import EXPERIMENTS, POLICIES, REFERENCE_TABLES, TABLE_EXPERIMENT, get_experiment, make_policy
from .measures import Quadratic
from .models import lq_to_model
from .riccati import exact_mc_relative_error, exact_value, solve_riccati
from .sde import SimConfig, SimulationError, simulate

RUN_COLUMNS = [
    "N", "M", "dt", "policy", "estimate", "rel_error", "R_tilde", "work_TN",
    "exact_value", "exact_rel_error", "wall_time_s",
]
TABLE_COLUMNS = [
    "N", "is_estimate", "is_rel_error", "mc_estimate", "mc_rel_error", "exact_value",
    "mc_rel_error_se", "wide_error",
]
DEFAULT_TABLE_N = [5, 10, 15, 20]
WIDE_ERROR_FRACTION = 0.5


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return f"{float(value):.17g}"


def write_csv(rows, columns, out=None):
    lines = [",".join(columns)]
    lines += [",".join(fmt(row.get(c)) for c in columns) for row in rows]
    text = "\n".join(lines) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    return text


def _has_exact(cfg: RunConfig) -> bool:
    return isinstance(cfg.g, Quadratic)


def run_rows(cfg: RunConfig, workers: int = 1, refine: Optional[float] = None, max_halvings: int = 5,
             log=None):
    """Rows of the ``run`` command in config order.

    With ``refine`` set, dt is halved from its configured value until two
    successive estimates differ relatively by less than ``refine``.
    """
    model = lq_to_model(cfg.lq)
    sol = solve_riccati(cfg.lq, cfg.g, s=cfg.s, T=cfg.T) if _has_exact(cfg) else None
    rows = []
    for N in cfg.n_list:
        exact = exact_value(sol, N, cfg.s, cfg.y) if sol is not None else None
        for name in cfg.policies:
            policy = make_policy(name, cfg.lq, cfg.g, T=cfg.T, s=cfg.s)
            dt = cfg.dt_for(N)
            t0 = time.perf_counter()
            prev = None
            for _ in range(max_halvings + 1):
                sim = SimConfig(N, cfg.n_samples, cfg.s, cfg.T, dt, cfg.seed, cfg.y)
                batch = simulate(model, policy, cfg.g, sim, workers=workers)
                rep = aggregate(batch)
                used_dt = dt
                if refine is None:
                    break
                if prev is not None and abs(rep.estimate / prev - 1.0) < refine:
                    break
                prev = rep.estimate
                dt = dt / 2
            wall = time.perf_counter() - t0
            if name == "zero" and sol is not None:
                exact_rel = exact_mc_relative_error(cfg.lq, cfg.g, N, cfg.s, cfg.y, M=1, T=cfg.T)
            elif name == "lq_optimal":
                exact_rel = 0.0
            else:
                exact_rel = None
            if cfg.samples_csv and len(cfg.n_list) * len(cfg.policies) == 1:
                batch.to_csv(cfg.samples_csv)
            rows.append({
                "N": N, "M": cfg.n_samples, "dt": used_dt, "policy": name,
                "estimate": rep.estimate, "rel_error": rep.empirical_rel_error,
                "R_tilde": rep.second_moment_ratio, "work_TN": rep.work_metric,
                "exact_value": exact, "exact_rel_error": exact_rel,
                "wall_time_s": round(wall, 3) if cfg.timing else None,
            })
            if log is not None:
                log(f"N={N} {name}: estimate {rep.estimate:.6e}  rel err {rep.empirical_rel_error:.4e}  "
                    f"({wall:.1f} s)")
    return rows


def table_rows(table: int, n_list, M: int, dt: Optional[float], seed: int = 0, workers: int = 1, log=None):
    """IS and standard MC side by side for one of the three reference tables."""
    exp = get_experiment(TABLE_EXPERIMENT[table])
    model = lq_to_model(exp.lq)
    is_name = exp.policies[1]
    sol = solve_riccati(exp.lq, exp.g, s=exp.s, T=exp.T) if table == 1 else None
    rows = []
    for N in n_list:
        h = 0.01 / N if dt is None else dt
        sim = SimConfig(N, M, exp.s, exp.T, h, seed, exp.y)
        policy = make_policy(is_name, exp.lq, exp.g, T=exp.T, s=exp.s)
        is_rep = aggregate(simulate(model, policy, exp.g, sim, workers=workers))
        mc_rep = aggregate(simulate(model, make_policy("zero", exp.lq, exp.g), exp.g, sim, workers=workers))
        mc_se = mc_rep.se_rel_error
        wide = not np.isfinite(mc_se) or mc_se > WIDE_ERROR_FRACTION * mc_rep.empirical_rel_error
        rows.append({
            "N": N,
            "is_estimate": is_rep.estimate, "is_rel_error": is_rep.empirical_rel_error,
            "mc_estimate": mc_rep.estimate, "mc_rel_error": mc_rep.empirical_rel_error,
            "exact_value": exact_value(sol, N, exp.s, exp.y) if sol is not None else None,
            "mc_rel_error_se": mc_se, "wide_error": wide,
        })
        if log is not None:
            ref = REFERENCE_TABLES[table].get(N)
            extra = f"  reference IS {ref[0]:.4e} / {ref[1]:.4e}  MC {ref[2]:.4e} / {ref[3]:.4e}" if ref else ""
            log(f"N={N}: IS {is_rep.estimate:.4e} / {is_rep.empirical_rel_error:.4e}  "
                f"MC {mc_rep.estimate:.4e} / {mc_rep.empirical_rel_error:.4e}{extra}")
    return rows


def riccati_rows(cfg: RunConfig, points: int = 101):
    sol = solve_riccati(cfg.lq, cfg.g, s=cfg.s, T=cfg.T)
    d = cfg.lq.dim
    columns = ["t"]
    columns += [f"Lambda_{i}_{j}" for i in range(d) for j in range(d)]
    columns += [f"Gamma_{i}_{j}" for i in range(d) for j in range(d)]
    columns += [f"gamma_{i}" for i in range(d)]
    columns += ["chi", "chi_correction"]
    rows = []
    for t in np.linspace(cfg.s, cfg.T, points):
        L, G, gv, chi, c = sol.coefficients(t)
        row = {"t": t, "chi": chi, "chi_correction": c}
        for i in range(d):
            row[f"gamma_{i}"] = gv[i]
            for j in range(d):
                row[f"Lambda_{i}_{j}"] = L[i, j]
                row[f"Gamma_{i}_{j}"] = G[i, j]
        rows.append(row)
    return rows, columns


def _int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("particle counts must be positive integers")
    return vals


def _samples(text):
    try:
        v = int(float(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer sample count, got {text!r}")
    if v < 2:
        raise argparse.ArgumentTypeError("need at least 2 samples")
    return v


def _dt(text):
    if text.replace(" ", "") == "0.01/N":
        return "rule"
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive number or '0.01/N', got {text!r}")
    if not v > 0:
        raise argparse.ArgumentTypeError("dt must be positive")
    return v


def _workers(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError("workers must be >= 1")
    return v


def _default_workers():
    raw = os.environ.get("WIP_SAMPLER_WORKERS")
    if raw is None:
        return 1
    try:
        return _workers(raw)
    except argparse.ArgumentTypeError as exc:
        raise SystemExit(f"error: WIP_SAMPLER_WORKERS: {exc}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML run configuration")
    common.add_argument("--model", choices=sorted(EXPERIMENTS), help="named example (when no --config)")
    common.add_argument("--n", type=_int_list, metavar="N[,N...]", help="particle counts")
    common.add_argument("--m", type=_samples, metavar="M", help="number of samples")
    common.add_argument("--dt", type=_dt, help="Euler step, or '0.01/N'")
    common.add_argument("--seed", type=int, help="base seed")
    common.add_argument("--policy", metavar="NAME[,NAME...]", help=f"policies: {', '.join(POLICIES)}")
    common.add_argument("--out", metavar="PATH", help="CSV output path (default stdout)")
    common.add_argument("--workers", type=_workers, help="worker processes (default $WIP_SAMPLER_WORKERS or 1)")
    common.add_argument("--print-config", action="store_true", help="print the resolved config as JSON and exit")
    common.add_argument("--no-timing", action="store_true", help="leave wall_time_s empty for reproducible CSV")
    common.add_argument("-q", "--quiet", action="store_true", help="no progress on stderr")

    p = argparse.ArgumentParser(prog="mfis", description="Importance sampling for weakly interacting diffusions.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="run the configured experiment")
    r.add_argument("--refine", type=float, metavar="TOL",
                   help="halve dt until successive estimates differ relatively by < TOL")
    r.add_argument("--samples-out", metavar="PATH", help="per-sample CSV (single N and policy only)")
    t = sub.add_parser("table", parents=[common], help="IS vs MC comparison table")
    t.add_argument("table", type=int, choices=sorted(TABLE_EXPERIMENT))
    d = sub.add_parser("riccati-dump", parents=[common], help="Riccati coefficients on a grid")
    d.add_argument("--points", type=int, default=101)
    g = sub.add_parser("girsanov-check", parents=[common], help="controlled vs tilted second moment")
    g.add_argument("--tilted-policy", help="policy for the tilted run (test hook for mismatches)")
    sub.add_parser("small-noise-check", parents=[common], help="particle vs aggregated small-noise IS")
    return p


def resolve_config(args) -> RunConfig:
    if args.config and args.model:
        raise ConfigError("--model", "cannot be combined with --config; set [model] name instead")
    if args.config:
        cfg = load_config(args.config)
    else:
        default = "example_4_1" if args.command == "small-noise-check" else "sec_5_1"
        cfg = parse_config({"model": {"name": args.model or default}}, source="<defaults>")
    if args.n is not None:
        cfg.n_list = args.n
    if args.m is not None:
        cfg.n_samples = args.m
    if args.dt is not None:
        cfg.dt = None if args.dt == "rule" else args.dt
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be non-negative")
        cfg.seed = args.seed
    if args.policy is not None:
        names = [p.strip() for p in args.policy.split(",") if p.strip()]
        bad = [p for p in names if p not in POLICIES]
        if bad or not names:
            raise ConfigError("--policy", f"unknown policy {bad[0] if bad else ''!r}; choose from {', '.join(POLICIES)}")
        cfg.policies = names
    if args.out is not None:
        cfg.csv_path = args.out
    if getattr(args, "samples_out", None):
        cfg.samples_csv = args.samples_out
    if args.no_timing:
        cfg.timing = False
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    try:
        workers = args.workers if args.workers is not None else _default_workers()
        if args.command == "table":
            return _cmd_table(args, workers, log)
        cfg = resolve_config(args)
        if args.print_config:
            d = cfg.as_dict()
            d["workers"] = workers
            print(json.dumps(d, indent=2, sort_keys=True))
            return 0
        if args.command == "run":
            if args.refine is not None and not args.refine > 0:
                raise ConfigError("--refine", "tolerance must be positive")
            rows = run_rows(cfg, workers, refine=args.refine, log=log)
            write_csv(rows, RUN_COLUMNS, cfg.csv_path)
            return 0
        if args.command == "riccati-dump":
            if not isinstance(cfg.g, Quadratic):
                raise ConfigError("[g]", "riccati-dump needs a quadratic terminal functional")
            rows, columns = riccati_rows(cfg, args.points)
            write_csv(rows, columns, cfg.csv_path)
            return 0
        if args.command == "girsanov-check":
            return _cmd_girsanov(args, cfg, workers)
        if args.command == "small-noise-check":
            return _cmd_small_noise(cfg, workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SimulationError, ArithmeticError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


def _is_policy(cfg: RunConfig, args) -> str:
    if args.policy is None:
        non_zero = [p for p in cfg.policies if p != "zero"]
        return non_zero[0] if non_zero else "zero"
    return cfg.policies[0]


def _cmd_table(args, workers, log):
    if args.print_config:
        exp = get_experiment(TABLE_EXPERIMENT[args.table])
        cfg = parse_config({"model": {"name": exp.name}}, source="<defaults>")
        cfg.n_list = args.n or DEFAULT_TABLE_N
        cfg.n_samples = args.m or cfg.n_samples
        d = cfg.as_dict()
        d["workers"] = workers
        print(json.dumps(d, indent=2, sort_keys=True))
        return 0
    dt = None if args.dt in (None, "rule") else args.dt
    rows = table_rows(args.table, args.n or DEFAULT_TABLE_N, args.m or 100_000, dt,
                      seed=args.seed or 0, workers=workers, log=log)
    columns = TABLE_COLUMNS if args.table == 1 else [c for c in TABLE_COLUMNS if c != "exact_value"]
    write_csv(rows, columns, args.out)
    return 0


def _cmd_girsanov(args, cfg: RunConfig, workers):
    name = _is_policy(cfg, args)
    N = cfg.n_list[0]
    M = args.m if args.m is not None else (cfg.n_samples if args.config else 10_000)
    sim = SimConfig(N, M, cfg.s, cfg.T, cfg.dt_for(N), cfg.seed, cfg.y)
    policy = make_policy(name, cfg.lq, cfg.g, T=cfg.T, s=cfg.s)
    tilted = None
    if args.tilted_policy:
        tilted = make_policy(args.tilted_policy, cfg.lq, cfg.g, T=cfg.T, s=cfg.s)
    rep = girsanov_check(lq_to_model(cfg.lq), policy, cfg.g, sim, workers=workers, tilted_policy=tilted)
    print(f"{cfg.model_name or 'model'} N={N} M={M} policy={name}: {rep.summary()}")
    return 0 if rep.passed else 1


def _cmd_small_noise(cfg: RunConfig, workers):
    N = cfg.n_list[0]
    M = cfg.n_samples
    sim = SimConfig(N, M, cfg.s, cfg.T, cfg.dt_for(N), cfg.seed, cfg.y)
    ok = True
    for name in cfg.policies:
        policy = make_policy(name, cfg.lq, cfg.g, T=cfg.T, s=cfg.s)
        a, b = small_noise_cross_check(cfg.lq, cfg.g, sim, policy, workers=workers)
        agree = agree_within(a, b)
        ok &= agree
        print(f"{name}: particle {a.estimate:.10e} +- {a.se_estimate:.2e}  "
              f"aggregated {b.estimate:.10e} +- {b.se_estimate:.2e}  {'agree' if agree else 'DISAGREE'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
