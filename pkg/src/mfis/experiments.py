"""Named experiment set-ups and the policy factory used by the CLI and demos."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controls import (
    ControlPolicy,
    LQOptimalControl,
    SignInsideControl,
    SignOutsideControl,
    ZeroControl,
)
from .measures import AbsOfMean, MeanOfAbs, Quadratic, TerminalFunctional
from .models import LQModel
from .riccati import DEFAULT_STEPS, solve_riccati

__all__ = [
    "Experiment",
    "EXPERIMENTS",
    "POLICIES",
    "get_experiment",
    "make_policy",
    "REFERENCE_TABLES",
    "TABLE_EXPERIMENT",
]


@dataclass(frozen=True)
class Experiment:
    name: str
    lq: LQModel
    g: TerminalFunctional
    y: float
    T: float = 1.0
    s: float = 0.0
    policies: tuple = ("zero",)
    description: str = ""


def _quad(P2=0.0, p1=0.0, Pbar2=0.0, p2=0.0):
    return Quadratic(np.array([[P2]]), np.array([p1]), np.array([[Pbar2]]), p2)


EXPERIMENTS = {
    e.name: e
    for e in (
        Experiment(
            "example_4_1",
            LQModel.scalar(B=1.0, Bbar=-1.0, sigma=0.5),
            _quad(p1=1.0),
            y=0.1,
            policies=("zero", "lq_optimal"),
            description="drift x - mean, G = mean; zero-variance IS",
        ),
        Experiment(
            "example_4_2",
            LQModel.scalar(B=-1.0, Bbar=0.0, sigma=1.0),
            _quad(P2=1.0),
            y=0.5,
            policies=("zero", "lq_optimal"),
            description="independent OU particles, G = mean of z^2",
        ),
        Experiment(
            "sec_5_1",
            LQModel.scalar(B=-1.0, Bbar=2.0, sigma=0.5),
            _quad(P2=1.0),
            y=0.2,
            policies=("zero", "lq_optimal"),
            description="LQ benchmark with exact value, G = mean of z^2",
        ),
        Experiment(
            "abs_outside",
            LQModel.scalar(B=-1.0, Bbar=2.0, sigma=0.5),
            AbsOfMean(),
            y=0.4,
            policies=("zero", "sign_outside"),
            description="G = |mean|",
        ),
        Experiment(
            "abs_inside",
            LQModel.scalar(B=-1.0, Bbar=2.0, sigma=0.5),
            MeanOfAbs(),
            y=0.4,
            policies=("zero", "sign_inside"),
            description="G = mean |z|",
        ),
    )
}

POLICIES = ("zero", "lq_optimal", "sign_outside", "sign_inside")

# table number -> experiment
TABLE_EXPERIMENT = {1: "sec_5_1", 2: "abs_outside", 3: "abs_inside"}

# Reference rows: N -> (IS estimate, IS rel err, MC estimate, MC rel err[, exact])
REFERENCE_TABLES = {
    1: {
        5: (2.3816e-1, 3.4601e-2, 2.3807e-1, 1.0380, 2.3747e-1),
        10: (8.2550e-2, 2.7101e-2, 8.2551e-2, 1.5721, 8.2412e-2),
        15: (2.8641e-2, 2.4001e-2, 2.8661e-2, 2.1957, 2.8600e-2),
        20: (9.9373e-3, 2.2369e-2, 9.9165e-3, 2.9589, 9.9254e-3),
        25: (3.4486e-3, 2.1310e-2, 3.4824e-3, 3.9086, 3.4445e-3),
        30: (1.1968e-3, 2.0550e-2, 1.1951e-1, 5.1415, 1.1954e-3),
        50: (1.7361e-5, 1.8934e-2, 1.7569e-5, 14.5202, 1.7339e-5),
        80: (3.0339e-8, 1.8003e-2, 3.2426e-8, 74.1871, 3.0289e-8),
    },
    2: {
        5: (2.6644e-2, 3.7070e-1, 2.6653e-2, 2.9930),
        10: (9.0804e-4, 3.1427e-1, 9.2009e-4, 12.8032),
        15: (3.0269e-5, 2.6350e-1, 3.0645e-5, 53.9410),
        20: (9.9533e-7, 2.2227e-1, 1.0625e-6, 337.0401),
        25: (3.2471e-8, 1.8900e-1, 3.5791e-8, 561.9164),
        30: (1.0537e-9, 1.6154e-1, 1.2253e-9, 1016.1656),
    },
    3: {
        5: (2.1355e-2, 4.7870e-1, 2.1382e-2, 2.3263),
        10: (5.6703e-4, 6.0605e-1, 5.6806e-4, 6.6374),
        15: (1.5087e-5, 7.2452e-1, 1.5040e-5, 17.3337),
        20: (4.0157e-7, 8.3416e-1, 4.1260e-7, 51.1058),
        25: (1.0687e-8, 9.4327e-1, 1.0296e-8, 97.8820),
        30: (2.8470e-10, 1.0524, 2.8800e-10, 280.5945),
    },
}


def get_experiment(name: str) -> Experiment:
    try:
        return EXPERIMENTS[name]
    except KeyError:
        raise KeyError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}") from None


def _scalar(a, what):
    a = np.asarray(a, dtype=float)
    if a.size != 1:
        raise ValueError(f"{what} needs a one-dimensional model")
    return float(a.reshape(-1)[0])


def make_policy(name: str, lq: LQModel, g: TerminalFunctional, T: float = 1.0, s: float = 0.0,
                n_steps: int = DEFAULT_STEPS) -> ControlPolicy:
    """Build a policy by name for the given model and terminal functional."""
    if name == "zero":
        return ZeroControl()
    if name == "lq_optimal":
        if not isinstance(g, Quadratic):
            raise ValueError("lq_optimal needs a quadratic terminal functional")
        return LQOptimalControl(solve_riccati(lq, g, s=s, T=T, n_steps=n_steps))
    if name in ("sign_outside", "sign_inside"):
        cls = SignOutsideControl if name == "sign_outside" else SignInsideControl
        return cls(_scalar(lq.B, name), _scalar(lq.Bbar, name), _scalar(lq.sigma, name), float(T))
    raise ValueError(f"unknown policy {name!r}; choose from {POLICIES}")
