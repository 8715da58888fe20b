"""Internal consistency checks that need no reference numbers.

1. Girsanov: the second moment estimated from the controlled run matches
   the one estimated from a run under the tilted drift.
2. Small noise: for mean-only costs, the aggregated one-dimensional process
   gives the same estimator as the full particle system.
3. Discretisation: the LQ-optimal relative error shrinks with the step.

Run ``python3 demos/checks.py``.
"""

from mfis import (
    SimConfig,
    aggregate,
    get_experiment,
    girsanov_check,
    lq_to_model,
    make_policy,
    simulate,
    small_noise_cross_check,
)


def main():
    for name, pol in (("sec_5_1", "lq_optimal"), ("abs_inside", "sign_inside")):
        e = get_experiment(name)
        rep = girsanov_check(lq_to_model(e.lq), make_policy(pol, e.lq, e.g), e.g, SimConfig(5, 10_000, y=e.y))
        print(f"Girsanov {name}/{pol}: {rep.summary()}")

    e = get_experiment("example_4_1")
    particle, aggregated = small_noise_cross_check(
        e.lq, e.g, SimConfig(8, 5000, dt=0.005, y=e.y), make_policy("zero", e.lq, e.g))
    print(f"small noise: particle {particle.estimate:.6g}, aggregated {aggregated.estimate:.6g}")

    e = get_experiment("sec_5_1")
    model = lq_to_model(e.lq)
    pol = make_policy("lq_optimal", e.lq, e.g)
    for dt in (0.004, 0.002, 0.001):
        rep = aggregate(simulate(model, pol, e.g, SimConfig(5, 5000, dt=dt, y=e.y)))
        print(f"dt={dt}: LQ-optimal rel err {rep.empirical_rel_error:.4f}")


if __name__ == "__main__":
    main()
