"""Aggregation of sample records into estimates and relative-error diagnostics.

Everything is computed from the per-sample log-values

    l_j = -N G(mu_T^j) + log Z_j,

with log-sum-exp, since e^{-N G} and the Girsanov products routinely leave
the double range at the particle counts of interest.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .controls import ControlPolicy
from .measures import Quadratic, TerminalFunctional
from .models import LQModel, lq_to_model
from .rng import standard_normals
from .sde import SampleBatch, SimConfig, simulate

__all__ = [
    "EstimatorReport",
    "GirsanovReport",
    "aggregate",
    "aggregate_log_values",
    "log_mean_exp",
    "log_mean_se",
    "log_efficiency_diagnostic",
    "small_noise_cross_check",
    "simulate_aggregated",
    "girsanov_check",
    "agree_within",
]


@dataclass(frozen=True)
class EstimatorReport:
    """Aggregated Monte Carlo summary.

    ``estimate`` is the sample mean of e^{l_j}; ``second_moment_ratio`` is
    R~ = mean(e^{2 l}) / estimate^2 and ``empirical_rel_error`` is
    sqrt(R~ - 1). Standard errors use the normal approximation and the delta
    method.
    """

    estimate: float
    log_estimate: float
    empirical_rel_error: float
    second_moment_ratio: float
    work_metric: float
    n_valid: int
    n_particles: int
    log_second_moment: float
    se_estimate: float
    se_log_estimate: float
    se_rel_error: float
    exact_value: Optional[float] = None
    exact_rel_error: Optional[float] = None

    @property
    def rel_error_to_exact(self) -> Optional[float]:
        """|estimate / exact - 1|, if an exact value is attached."""
        if self.exact_value is None:
            return None
        return abs(np.expm1(self.log_estimate - np.log(self.exact_value)))

    def with_exact(self, exact_value: Optional[float], exact_rel_error: Optional[float] = None):
        return replace(self, exact_value=exact_value, exact_rel_error=exact_rel_error)

    def summary(self) -> str:
        lines = [
            f"N={self.n_particles}  M={self.n_valid}",
            f"estimate      {self.estimate:.6e} +- {self.se_estimate:.2e}",
            f"rel. error    {self.empirical_rel_error:.6e} +- {self.se_rel_error:.2e}",
            f"R~            {self.second_moment_ratio:.6e}",
            f"T(N)          {self.work_metric:.6e}",
        ]
        if self.exact_value is not None:
            lines.append(f"exact value   {self.exact_value:.6e}")
        if self.exact_rel_error is not None:
            lines.append(f"exact rel err {self.exact_rel_error:.6e}")
        return "\n".join(lines)


def log_mean_exp(ell) -> float:
    ell = np.asarray(ell, dtype=float)
    return float(logsumexp(ell) - np.log(ell.size))


def log_mean_se(ell) -> float:
    """Delta-method standard error of log(mean(e^ell))."""
    ell = np.asarray(ell, dtype=float)
    w = np.exp(ell - ell.max())
    mu = w.mean()
    return float(w.std(ddof=1) / (np.sqrt(ell.size) * mu))


def _rel_error_se(ell, R_minus_1):
    # delta method for sqrt(m2/m1^2 - 1) with (w, w^2) sample covariance
    M = ell.size
    w = np.exp(ell - ell.max())
    m1, m2 = w.mean(), (w * w).mean()
    f = np.sqrt(max(R_minus_1, 0.0))
    if f == 0.0:
        return 0.0 if np.all(w == w[0]) else float("nan")
    grad = np.array([-m2 / (m1**3 * f), 1.0 / (2.0 * m1**2 * f)])
    cov = np.cov(np.vstack([w, w * w]), ddof=1)
    return float(np.sqrt(max(grad @ cov @ grad, 0.0) / M))


def aggregate_log_values(ell, N: int) -> EstimatorReport:
    """Build a report from per-sample log-values ``ell``.

    Raises
    ------
    ValueError
        If fewer than two finite values are given.
    """
    ell = np.asarray(ell, dtype=float).reshape(-1)
    ell = ell[np.isfinite(ell)]
    if ell.size < 2:
        raise ValueError(f"need at least 2 valid samples, got {ell.size}")
    M = ell.size
    log_m1 = float(logsumexp(ell) - np.log(M))
    log_m2 = float(logsumexp(2.0 * ell) - np.log(M))
    # R - 1 from centred weights: exact zero for constant samples, and no
    # cancellation between log m2 and 2 log m1
    w = np.exp(ell - ell.max())
    wbar = w.mean()
    R_minus_1 = float(np.mean((w - wbar) ** 2) / wbar**2)
    log_R = float(np.log1p(R_minus_1))
    rho = float(np.sqrt(max(R_minus_1, 0.0)))
    se_log = log_mean_se(ell)
    est = float(np.exp(log_m1))
    return EstimatorReport(
        estimate=est,
        log_estimate=log_m1,
        empirical_rel_error=rho,
        second_moment_ratio=float(np.exp(log_R)),
        work_metric=N * R_minus_1,
        n_valid=M,
        n_particles=int(N),
        log_second_moment=log_m2,
        se_estimate=est * se_log,
        se_log_estimate=se_log,
        se_rel_error=_rel_error_se(ell, R_minus_1),
    )


def aggregate(records, N: Optional[int] = None) -> EstimatorReport:
    """Aggregate a :class:`SampleBatch` or a list of ``SampleRecord``.

    Invalid records are excluded. For a batch ``N`` defaults to its particle
    count.
    """
    if isinstance(records, SampleBatch):
        if N is not None and N != records.n_particles:
            raise ValueError(f"N={N} does not match batch particle count {records.n_particles}")
        if records.valid.sum() == 0:
            raise ValueError("all records are invalid")
        return aggregate_log_values(records.log_values(), records.n_particles)
    if N is None:
        raise TypeError("N is required when aggregating a list of records")
    records = list(records)
    if len(records) < 2:
        raise ValueError(f"need at least 2 records, got {len(records)}")
    ell = [-N * r.g_terminal + r.log_weight for r in records if r.valid]
    if not ell:
        raise ValueError("all records are invalid")
    return aggregate_log_values(ell, N)


def log_efficiency_diagnostic(report, N: Optional[int] = None) -> float:
    """-(1/N) log R~; close to 0 for a log-efficient scheme.

    ``report`` may also be a bare second-moment ratio.
    """
    if isinstance(report, EstimatorReport):
        R = report.second_moment_ratio
        N = report.n_particles if N is None else N
    else:
        R = float(report)
        if N is None:
            raise TypeError("N is required when passing a bare ratio")
    return -np.log(R) / N


def agree_within(a: EstimatorReport, b: EstimatorReport, k: float = 3.0, rtol: float = 1e-10) -> bool:
    """True if the estimates differ by at most ``k`` combined standard errors.

    ``rtol`` adds a relative floor so that two zero-variance estimators equal
    up to rounding also agree.
    """
    scale = max(abs(a.estimate), abs(b.estimate))
    return abs(a.estimate - b.estimate) <= k * np.hypot(a.se_estimate, b.se_estimate) + rtol * scale


def _check_linear_in_mean(lq: LQModel, g):
    if lq.dim != 1:
        raise ValueError("the small-noise cross-check needs d = 1")
    if not isinstance(g, Quadratic):
        raise TypeError("the small-noise cross-check needs G(mu) = p mean(mu) + p2")
    if np.any(g.P2 != 0) or np.any(g.Pbar2 != 0):
        raise ValueError("the small-noise cross-check needs P2 = Pbar2 = 0")


def simulate_aggregated(lq: LQModel, g: TerminalFunctional, cfg: SimConfig, policy: ControlPolicy) -> SampleBatch:
    """Small-noise IS for the one-dimensional mean process.

    dY = [b0 + (B + Bbar) Y + sigma v(t, Y)] dt + (sigma / sqrt(N)) dW, with
    dW = N^{-1/2} sum_i dW^i built from the same per-particle draws as the
    particle run. The log weight is -sqrt(N) int v dW - (N/2) int v^2 dt. The
    control is evaluated on a one-particle ensemble at Y.
    """
    _check_linear_in_mean(lq, g)
    N = cfg.n_particles
    A = float(lq.B[0, 0] + lq.Bbar[0, 0])
    b0, sig = float(lq.b0[0]), float(lq.sigma[0])
    steps, times = cfg.step_sizes(), cfg.step_times()
    idx = np.arange(cfg.n_samples)
    Y = np.full(cfg.n_samples, cfg.initial_positions(1).mean())
    logw = np.zeros(cfg.n_samples)
    aux = np.zeros(cfg.n_samples)
    # chunk over samples to bound memory; draws are per-sample so the split is irrelevant
    size = max(1, (1 << 22) // (len(steps) * N))
    for lo in range(0, cfg.n_samples, size):
        sl = slice(lo, min(lo + size, cfg.n_samples))
        Z = standard_normals(cfg.base_seed, idx[sl], len(steps), N, 1)
        y = Y[sl]
        lw = logw[sl]
        a = aux[sl]
        for k, (t, h) in enumerate(zip(times, steps)):
            dWN = Z[:, k, :, 0].sum(axis=1) * np.sqrt(h / N)
            if policy.is_zero:
                v = np.zeros_like(y)
            else:
                v = policy.batch(t, y[:, None, None])[:, 0, 0]
            y = y + (b0 + A * y + sig * v) * h + sig / np.sqrt(N) * dWN
            lw += -np.sqrt(N) * v * dWN - 0.5 * N * v * v * h
            a += N * v * v * h
        Y[sl] = y
    gT = g.evaluate_batch(Y[:, None, None])
    valid = np.isfinite(gT) & np.isfinite(logw)
    return SampleBatch(idx, gT, logw, aux, valid, N)


def small_noise_cross_check(lq: LQModel, g, cfg: SimConfig, policy: ControlPolicy, workers: int = 1):
    """Run the N-particle estimator and the aggregated small-noise estimator.

    Returns ``(particle_report, aggregated_report)``. For a control that
    depends on the particles only through their mean the two runs coincide
    path by path, up to rounding.
    """
    _check_linear_in_mean(lq, g)
    particle = aggregate(simulate(lq_to_model(lq), policy, g, cfg, workers=workers))
    agg = aggregate(simulate_aggregated(lq, g, cfg, policy))
    return particle, agg


@dataclass(frozen=True)
class GirsanovReport:
    """Second moment estimated from the controlled run (weight Z^2) and from the tilted run."""

    log_m2_controlled: float
    se_controlled: float
    log_m2_tilted: float
    se_tilted: float
    n_samples: int
    k: float = 3.0

    @property
    def difference(self) -> float:
        return self.log_m2_controlled - self.log_m2_tilted

    @property
    def combined_se(self) -> float:
        return float(np.hypot(self.se_controlled, self.se_tilted))

    @property
    def passed(self) -> bool:
        return abs(self.difference) <= self.k * self.combined_se

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"{verdict}  log m2 controlled {self.log_m2_controlled:.6f} +- {self.se_controlled:.2e}  "
            f"tilted {self.log_m2_tilted:.6f} +- {self.se_tilted:.2e}  "
            f"diff {self.difference:.3e} (limit {self.k * self.combined_se:.3e})"
        )


def girsanov_check(model, policy, g, cfg: SimConfig, *, workers: int = 1, tilted_policy=None, k: float = 3.0):
    """Compare E[e^{-2NG} Z^2] under the controlled law with E[e^{-2NG + int|v|^2}] under the tilted law.

    Both runs share the sample streams. ``tilted_policy`` replaces the control
    of the tilted run and exists to check that a mismatch is detected.
    """
    ctrl = simulate(model, policy, g, cfg, workers=workers)
    tilt = simulate(model, policy if tilted_policy is None else tilted_policy, g, cfg, tilted=True, workers=workers)
    ell_c = 2.0 * ctrl.log_values()
    ell_t = tilt.log_values()
    return GirsanovReport(
        log_mean_exp(ell_c),
        log_mean_se(ell_c),
        log_mean_exp(ell_t),
        log_mean_se(ell_t),
        cfg.n_samples,
        k,
    )
