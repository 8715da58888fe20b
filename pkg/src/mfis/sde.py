"""Euler-Maruyama simulation of controlled particle systems with Girsanov weights.

A sample is a full N-particle path driven by the Gaussian stream of its
index. Samples are simulated in fixed-size chunks (the chunk size depends
only on the problem shape), so records are identical however the chunks are
spread over worker processes.
"""

from __future__ import annotations

import csv
import multiprocessing as mp
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .controls import ControlPolicy
from .measures import TerminalFunctional
from .models import ModelSpec
from .rng import standard_normals

__all__ = [
    "SimConfig",
    "SampleRecord",
    "SampleBatch",
    "SimulationError",
    "simulate",
    "simulate_sample",
    "simulate_tilted_sample",
    "simulate_paths",
    "chunk_size",
]

_CHUNK_FLOATS = 1 << 22
MAX_INVALID_FRACTION = 1e-3


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Run parameters. ``dt=None`` selects the 0.01/N rule.

    ``y`` is either one position (scalar or d-vector) shared by every
    particle, or an (N, d) array.
    """

    n_particles: int
    n_samples: int
    s: float = 0.0
    T: float = 1.0
    dt: Optional[float] = None
    base_seed: int = 0
    y: object = 0.0

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0 <= self.s < self.T:
            raise ValueError(f"need 0 <= s < T, got s={self.s}, T={self.T}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def step(self) -> float:
        return 0.01 / self.n_particles if self.dt is None else float(self.dt)

    def step_sizes(self) -> np.ndarray:
        """Uniform steps of size ``step`` plus a shorter final step if needed."""
        h = self.step
        span = self.T - self.s
        n = int(np.floor(span / h + 1e-9))
        rest = span - n * h
        steps = np.full(n, h)
        if rest > 1e-9 * h:
            steps = np.append(steps, rest)
        return steps

    def step_times(self) -> np.ndarray:
        """Left endpoints of the Euler steps."""
        h = self.step
        n = len(self.step_sizes())
        return self.s + h * np.arange(n)

    def initial_positions(self, d: int) -> np.ndarray:
        y = np.asarray(self.y, dtype=float)
        N = self.n_particles
        if y.size == d:
            return np.broadcast_to(y.reshape(1, d), (N, d)).copy()
        y = y.reshape(y.shape[0], -1) if y.ndim else y
        if y.shape != (N, d):
            raise ValueError(f"y must be a single {d}-vector or an ({N}, {d}) array, got {np.shape(self.y)}")
        return y.copy()


@dataclass(frozen=True)
class SampleRecord:
    sample_index: int
    g_terminal: float
    log_weight: float
    aux_sq_control_integral: float
    valid: bool = True


@dataclass
class SampleBatch:
    """Records of many samples stored column-wise."""

    sample_index: np.ndarray
    g_terminal: np.ndarray
    log_weight: np.ndarray
    aux_sq_control_integral: np.ndarray
    valid: np.ndarray
    n_particles: int
    tilted: bool = False

    def __len__(self):
        return len(self.sample_index)

    @property
    def n_invalid(self) -> int:
        return int((~self.valid).sum())

    def __getitem__(self, k) -> SampleRecord:
        return SampleRecord(
            int(self.sample_index[k]),
            float(self.g_terminal[k]),
            float(self.log_weight[k]),
            float(self.aux_sq_control_integral[k]),
            bool(self.valid[k]),
        )

    def records(self) -> Iterator[SampleRecord]:
        for k in range(len(self)):
            yield self[k]

    def log_values(self) -> np.ndarray:
        """Per-sample log of the estimator summand, valid samples only.

        Controlled runs give -N g + log Z; tilted runs give -2N g + int |v|^2,
        the Girsanov-equivalent second-moment summand.
        """
        factor = 2.0 if self.tilted else 1.0
        v = self.valid
        return -factor * self.n_particles * self.g_terminal[v] + self.log_weight[v]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_index", "g_terminal", "log_weight"])
            for j, g, lw in zip(self.sample_index, self.g_terminal, self.log_weight):
                w.writerow([int(j), f"{g:.17g}", f"{lw:.17g}"])

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        return cls(
            np.concatenate([p.sample_index for p in parts]),
            np.concatenate([p.g_terminal for p in parts]),
            np.concatenate([p.log_weight for p in parts]),
            np.concatenate([p.aux_sq_control_integral for p in parts]),
            np.concatenate([p.valid for p in parts]),
            parts[0].n_particles,
            parts[0].tilted,
        )


def _apply_diffusion(sig, w):
    # sig: (d, m) constant or (M, N, d, m); w: (M, N, m)
    if sig.ndim == 2:
        if sig.shape[1] == 1:
            return w * sig[:, 0]
        return w @ sig.T
    return np.einsum("abij,abj->abi", sig, w)


def _run(model, policy, g, cfg, indices, tilted=False, check_bounds=False, keep_paths=False):
    steps = cfg.step_sizes()
    times = cfg.step_times()
    N, d, m = cfg.n_particles, model.dim_d, model.dim_m
    if policy.dim_m != m and not policy.is_zero:
        raise ValueError(f"control dimension {policy.dim_m} != noise dimension {m}")
    # step-major copy so each step reads one contiguous block
    Z = np.ascontiguousarray(np.moveaxis(standard_normals(cfg.base_seed, indices, len(steps), N, m), 1, 0))
    M = Z.shape[1]
    X = np.broadcast_to(cfg.initial_positions(d), (M, N, d)).copy()
    logw = np.zeros(M)
    aux = np.zeros(M)
    paths = [X.copy()] if keep_paths else None
    sign = -1.0 if tilted else 1.0
    with np.errstate(all="ignore"):
        for k, (t, h) in enumerate(zip(times, steps)):
            dW = Z[k] * np.sqrt(h)
            b = model.batch_drift(X)
            sig = np.asarray(model.batch_diffusion(X), dtype=float)
            noise = _apply_diffusion(sig, dW)
            if policy.is_zero:
                X = X + b * h + noise
            else:
                v = policy.batch(t, X)
                vv = np.einsum("abj,abj->a", v, v)
                if check_bounds:
                    bnd = policy.bound(t)
                    if bnd is not None and np.any(np.abs(v) > bnd * (1 + 1e-12)):
                        raise SimulationError(f"control exceeds its declared bound {bnd} at t={t}")
                X = X + (b + sign * _apply_diffusion(sig, v)) * h + noise
                if tilted:
                    logw += vv * h
                else:
                    logw += -np.einsum("abj,abj->a", v, dW) - 0.5 * vv * h
                aux += vv * h
            if keep_paths:
                paths.append(X.copy())
        gT = np.asarray(g.evaluate_batch(X), dtype=float) if g is not None else np.zeros(M)
    valid = np.isfinite(gT) & np.isfinite(logw) & np.all(np.isfinite(X), axis=(1, 2))
    batch = SampleBatch(np.asarray(indices, dtype=np.int64), gT, logw, aux, valid, N, tilted)
    if keep_paths:
        return batch, np.stack(paths, axis=1)
    return batch


def chunk_size(cfg: SimConfig, m: int = 1) -> int:
    per_sample = len(cfg.step_sizes()) * cfg.n_particles * m
    return max(1, _CHUNK_FLOATS // per_sample)


_JOB = None


def _run_chunk(bounds):
    model, policy, g, cfg, tilted, check_bounds = _JOB
    lo, hi = bounds
    return _run(model, policy, g, cfg, np.arange(lo, hi), tilted, check_bounds)


def simulate(
    model: ModelSpec,
    policy: ControlPolicy,
    g: TerminalFunctional,
    cfg: SimConfig,
    *,
    tilted: bool = False,
    workers: int = 1,
    check_bounds: bool = False,
) -> SampleBatch:
    """Simulate samples ``0 .. n_samples-1``.

    ``tilted=True`` runs the dynamics with drift b - sigma v and accumulates
    +int sum_i |v_i|^2 dt as log weight instead of the log Girsanov factor.

    Raises
    ------
    SimulationError
        If more than 0.1% of the samples produce non-finite values.
    """
    global _JOB
    size = chunk_size(cfg, model.dim_m)
    bounds = [(lo, min(lo + size, cfg.n_samples)) for lo in range(0, cfg.n_samples, size)]
    _JOB = (model, policy, g, cfg, tilted, check_bounds)
    try:
        if workers > 1 and len(bounds) > 1:
            ctx = mp.get_context("fork")
            with ctx.Pool(min(workers, len(bounds))) as pool:
                parts = pool.map(_run_chunk, bounds, chunksize=1)
        else:
            parts = [_run_chunk(b) for b in bounds]
    finally:
        _JOB = None
    batch = SampleBatch.concat(parts)
    if batch.n_invalid > MAX_INVALID_FRACTION * cfg.n_samples:
        raise SimulationError(
            f"{batch.n_invalid} of {cfg.n_samples} samples are non-finite "
            f"(limit {MAX_INVALID_FRACTION:.1%})"
        )
    return batch


def simulate_sample(model, policy, g, cfg: SimConfig, sample_index: int) -> SampleRecord:
    """One controlled sample; returns (G at T, log Girsanov weight, int |v|^2)."""
    if not 0 <= sample_index < cfg.n_samples:
        raise IndexError(f"sample_index {sample_index} outside [0, {cfg.n_samples})")
    return _run(model, policy, g, cfg, [sample_index])[0]


def simulate_tilted_sample(model, policy, g, cfg: SimConfig, sample_index: int) -> SampleRecord:
    """One sample of the system with drift b - sigma v; log weight is +int sum |v|^2 dt."""
    if not 0 <= sample_index < cfg.n_samples:
        raise IndexError(f"sample_index {sample_index} outside [0, {cfg.n_samples})")
    return _run(model, policy, g, cfg, [sample_index], tilted=True)[0]


def simulate_paths(model, policy, cfg: SimConfig, sample_indices, g=None, tilted=False):
    """Full trajectories for a few samples.

    Returns ``(times, paths, batch)`` with ``paths`` of shape
    (len(sample_indices), n_steps + 1, N, d). Uncontrolled and controlled
    runs with the same seed share their noise.
    """
    batch, paths = _run(model, policy, g, cfg, list(sample_indices), tilted, keep_paths=True)
    times = np.concatenate([[cfg.s], cfg.s + np.cumsum(cfg.step_sizes())])
    return times, paths, batch
