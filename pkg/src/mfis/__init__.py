"""Importance sampling for weakly interacting diffusions.

Estimates E[exp(-N G(mu_T^N))] for N-particle systems by standard Monte Carlo
and by importance sampling with controls built from (sub)solutions of the
HJB equation on Wasserstein space, with exact Riccati oracles in the
linear-quadratic case.
"""

from .controls import (
    ControlPolicy,
    CustomControl,
    LQOptimalControl,
    SignInsideControl,
    SignOutsideControl,
    ZeroControl,
    control_value,
)
from .estimators import (
    EstimatorReport,
    GirsanovReport,
    aggregate,
    aggregate_log_values,
    girsanov_check,
    log_efficiency_diagnostic,
    small_noise_cross_check,
)
from .experiments import EXPERIMENTS, get_experiment, make_policy
from .measures import AbsOfMean, EmpiricalMeasure, MeanOfAbs, Quadratic, TerminalFunctional, evaluate_G, mean
from .models import LQModel, ModelSpec, lq_to_model
from .riccati import (
    RiccatiBlowupError,
    RiccatiSolution,
    exact_mc_relative_error,
    exact_value,
    hjb_residual,
    log_exact_value,
    psi_value,
    solve_riccati,
)
from .sde import SampleBatch, SampleRecord, SimConfig, SimulationError, simulate, simulate_sample, simulate_tilted_sample

__version__ = "0.1.0"
