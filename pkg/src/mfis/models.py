"""Drift and diffusion coefficients of weakly interacting particle systems."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .measures import EmpiricalMeasure

__all__ = ["ModelSpec", "LQModel", "lq_to_model"]


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients b(x, mu) and sigma(x, mu) of the N-particle system.

    ``drift(x, mu)`` returns a d-vector and ``diffusion(x, mu)`` a d x m
    matrix for a single particle at ``x`` in the ensemble ``mu``. The
    simulator works on stacked ensembles of shape (M, N, d); supply
    ``drift_batch``/``diffusion_batch`` operating on those for speed.
    Without them the single-particle callables are looped over, which is
    correct but slow.

    ``diffusion_batch`` may return either shape (M, N, d, m) or a constant
    (d, m) array.
    """

    dim_d: int
    dim_m: int
    drift: Callable[[np.ndarray, EmpiricalMeasure], np.ndarray]
    diffusion: Callable[[np.ndarray, EmpiricalMeasure], np.ndarray]
    drift_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    diffusion_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def batch_drift(self, states: np.ndarray) -> np.ndarray:
        if self.drift_batch is not None:
            return self.drift_batch(states)
        out = np.empty_like(states)
        for j, x in enumerate(states):
            mu = EmpiricalMeasure(x)
            for i in range(x.shape[0]):
                out[j, i] = self.drift(x[i], mu)
        return out

    def batch_diffusion(self, states: np.ndarray) -> np.ndarray:
        if self.diffusion_batch is not None:
            return self.diffusion_batch(states)
        M, N, d = states.shape
        out = np.empty((M, N, d, self.dim_m))
        for j, x in enumerate(states):
            mu = EmpiricalMeasure(x)
            for i in range(N):
                out[j, i] = self.diffusion(x[i], mu)
        return out

    def check_finite(self, rng: np.random.Generator, n_particles: int = 4, trials: int = 20):
        """Evaluate the coefficients on random finite ensembles; raise on non-finite output."""
        for _ in range(trials):
            x = rng.normal(size=(n_particles, self.dim_d))
            mu = EmpiricalMeasure(x)
            b = np.asarray(self.drift(x[0], mu), dtype=float)
            s = np.asarray(self.diffusion(x[0], mu), dtype=float)
            if b.shape != (self.dim_d,) or s.shape != (self.dim_d, self.dim_m):
                raise ValueError(
                    f"coefficient shapes {b.shape}, {s.shape} do not match "
                    f"d={self.dim_d}, m={self.dim_m}"
                )
            if not (np.all(np.isfinite(b)) and np.all(np.isfinite(s))):
                raise ValueError("model coefficients returned non-finite values")


@dataclass(frozen=True)
class LQModel:
    """Linear drift b0 + B x + Bbar mean(mu) with constant noise vector sigma (m = 1)."""

    b0: np.ndarray
    B: np.ndarray
    Bbar: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        d = B.shape[0]
        if B.shape != (d, d):
            raise ValueError(f"B must be square, got {B.shape}")
        Bbar = np.atleast_2d(np.asarray(self.Bbar, dtype=float))
        if Bbar.shape != (d, d):
            raise ValueError(f"Bbar must have shape ({d}, {d}), got {Bbar.shape}")
        b0 = np.atleast_1d(np.asarray(self.b0, dtype=float))
        if b0.shape != (d,):
            raise ValueError(f"b0 must have shape ({d},), got {b0.shape}")
        sigma = np.asarray(self.sigma, dtype=float).reshape(-1)
        if sigma.shape != (d,):
            # only m = 1 is supported on the LQ path
            raise ValueError(f"sigma must be a {d}-vector (m=1), got shape {np.shape(self.sigma)}")
        for name, val in (("B", B), ("Bbar", Bbar), ("b0", b0), ("sigma", sigma)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @classmethod
    def scalar(cls, B: float, Bbar: float, sigma: float, b0: float = 0.0) -> "LQModel":
        return cls(np.array([b0]), np.array([[B]]), np.array([[Bbar]]), np.array([sigma]))

    @property
    def dim(self) -> int:
        return self.B.shape[0]

    @property
    def sigma_matrix(self) -> np.ndarray:
        return self.sigma[:, None]


class _LQDrift:
    def __init__(self, lq: LQModel):
        self.lq = lq
        # plain scalars for the d = 1 fast path
        self._scalar = (float(lq.b0[0]), float(lq.B[0, 0]), float(lq.Bbar[0, 0])) if lq.dim == 1 else None

    def __call__(self, x, mu):
        lq = self.lq
        return lq.b0 + lq.B @ np.asarray(x, dtype=float) + lq.Bbar @ mu.mean()

    def batch(self, states):
        lq = self.lq
        m = states.mean(axis=1, keepdims=True)
        if self._scalar is not None:
            b0, B, Bbar = self._scalar
            return (b0 + Bbar * m) + B * states
        return lq.b0 + states @ lq.B.T + m @ lq.Bbar.T


class _ConstDiffusion:
    def __init__(self, sigma: np.ndarray):
        self.sigma = sigma

    def __call__(self, x, mu):
        return self.sigma

    def batch(self, states):
        return self.sigma


def lq_to_model(lq: LQModel) -> ModelSpec:
    drift = _LQDrift(lq)
    diff = _ConstDiffusion(lq.sigma_matrix)
    return ModelSpec(lq.dim, 1, drift, diff, drift.batch, diff.batch)
