"""Quadratic benchmark: importance sampling against plain Monte Carlo.

The quadratic terminal cost on a mean-repelling system (B = -1, Bbar = 2,
sigma = 0.5) has an exact answer from the Riccati system. The LQ-optimal
control is the exact zero-variance control of the continuous problem, so
the importance sampling error comes only from time discretisation, while
the plain Monte Carlo error grows exponentially with N.

Run ``python3 demos/lq_benchmark.py`` (about a minute).
"""

import argparse

from mfis import (
    SimConfig,
    ZeroControl,
    aggregate,
    exact_mc_relative_error,
    exact_value,
    get_experiment,
    lq_to_model,
    make_policy,
    simulate,
    solve_riccati,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--m", type=int, default=20_000, help="samples per run")
    parser.add_argument("--n", type=int, nargs="+", default=[5, 10])
    args = parser.parse_args()

    e = get_experiment("sec_5_1")
    model = lq_to_model(e.lq)
    sol = solve_riccati(e.lq, e.g)
    policy = make_policy("lq_optimal", e.lq, e.g)

    print(f"{'N':>3} {'exact':>12} {'IS':>12} {'IS rel err':>11} {'MC':>12} {'MC rel err':>11} {'MC exact':>9}")
    for N in args.n:
        cfg = SimConfig(N, args.m, y=e.y)
        is_rep = aggregate(simulate(model, policy, e.g, cfg))
        mc_rep = aggregate(simulate(model, ZeroControl(), e.g, cfg))
        rho = exact_mc_relative_error(e.lq, e.g, N, 0.0, e.y)
        print(f"{N:>3} {exact_value(sol, N, 0.0, e.y):12.5e} {is_rep.estimate:12.5e} "
              f"{is_rep.empirical_rel_error:11.4f} {mc_rep.estimate:12.5e} {mc_rep.empirical_rel_error:11.4f} {rho:9.4f}")

    print("\nPlain MC relative error from the exact moments, per sample:")
    for N in (5, 10, 20, 40, 80):
        print(f"  N={N:>3}: {exact_mc_relative_error(e.lq, e.g, N, 0.0, e.y):.4g}")


if __name__ == "__main__":
    main()
