"""Nonsmooth costs: |mean| and mean of |x|.

No closed form exists here. The sign controls come from smooth
subsolutions of the HJB equation, and the check is that importance sampling
and plain Monte Carlo agree while the relative error drops several-fold.

Run ``python3 demos/nonsmooth.py`` (a couple of minutes at the defaults).
"""

import argparse

from mfis import SimConfig, ZeroControl, aggregate, get_experiment, lq_to_model, make_policy, simulate
from mfis.estimators import agree_within


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--m", type=int, default=20_000)
    parser.add_argument("--n", type=int, default=5)
    args = parser.parse_args()

    for name, pol_name in (("abs_outside", "sign_outside"), ("abs_inside", "sign_inside")):
        e = get_experiment(name)
        model = lq_to_model(e.lq)
        cfg = SimConfig(args.n, args.m, y=e.y)
        is_rep = aggregate(simulate(model, make_policy(pol_name, e.lq, e.g), e.g, cfg))
        mc_rep = aggregate(simulate(model, ZeroControl(), e.g, cfg))
        print(f"{e.description}")
        print(f"  {pol_name:>12}: {is_rep.estimate:.5e}  rel err {is_rep.empirical_rel_error:.4f}")
        print(f"  {'zero':>12}: {mc_rep.estimate:.5e}  rel err {mc_rep.empirical_rel_error:.4f}")
        print(f"  error ratio {mc_rep.empirical_rel_error / is_rep.empirical_rel_error:.1f}, "
              f"agree within 3 SE: {agree_within(is_rep, mc_rep)}\n")


if __name__ == "__main__":
    main()
