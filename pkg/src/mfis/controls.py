"""Feedback controls v_i^N(t, x_1, ..., x_N) that tilt the particle dynamics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .riccati import RiccatiSolution

__all__ = [
    "ControlPolicy",
    "ZeroControl",
    "LQOptimalControl",
    "SignOutsideControl",
    "SignInsideControl",
    "CustomControl",
    "control_value",
]


class ControlPolicy:
    """Base class. ``batch(t, states)`` maps (M, N, d) ensembles to (M, N, m) controls."""

    dim_m: int = 1
    is_zero = False

    def batch(self, t: float, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def value(self, t: float, i: int, state) -> np.ndarray:
        x = np.asarray(state, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if not 0 <= i < x.shape[0]:
            raise IndexError(f"particle index {i} out of range for N={x.shape[0]}")
        return self.batch(t, x[None])[0, i]

    def bound(self, t: float) -> Optional[float]:
        """Upper bound on |v| over all states at time ``t``, or None if unknown."""
        return None


def control_value(policy: ControlPolicy, t: float, i: int, state) -> np.ndarray:
    return policy.value(t, i, state)


@dataclass(frozen=True)
class ZeroControl(ControlPolicy):
    """v = 0; the importance sampler reduces to plain Monte Carlo."""

    dim_m: int = 1
    is_zero = True

    def batch(self, t, states):
        return np.zeros(states.shape[:2] + (self.dim_m,))

    def bound(self, t):
        return 0.0


@dataclass(frozen=True)
class LQOptimalControl(ControlPolicy):
    """v_i = -sigma'[2 Lambda x_i + 2 (Gamma - Lambda) mean + gamma] from a Riccati solve."""

    solution: RiccatiSolution

    def batch(self, t, states):
        L, G, gv, _, _ = self.solution.coefficients(t)
        d = L.shape[0]
        if states.shape[-1] != d:
            raise ValueError(f"state dimension {states.shape[-1]} != model dimension {d}")
        m = states.mean(axis=1, keepdims=True)
        p = 2.0 * states @ L.T + 2.0 * m @ (G - L).T + gv
        return -(p @ self.solution.lq.sigma)[..., None]


def _sign_check(states):
    if states.shape[-1] != 1:
        raise ValueError("sign controls are defined for d = 1 only")


@dataclass(frozen=True)
class SignOutsideControl(ControlPolicy):
    """Control for G = |mean|: v = -sigma e^{(B+Bbar)(T-t)} sign(mean), same for every particle."""

    B: float
    Bbar: float
    sigma: float
    T: float

    def batch(self, t, states):
        _sign_check(states)
        m = states[..., 0].mean(axis=1, keepdims=True)
        v = -self.sigma * np.exp((self.B + self.Bbar) * (self.T - t)) * np.sign(m)
        return np.broadcast_to(v, states.shape[:2])[..., None].copy()

    def bound(self, t):
        return abs(self.sigma) * np.exp((self.B + self.Bbar) * (self.T - t))


@dataclass(frozen=True)
class SignInsideControl(ControlPolicy):
    """Control for G = mean |z|.

    v_i = -sigma [e^{B(T-t)} sign(x_i) + (e^{(B+Bbar)(T-t)} - e^{B(T-t)}) mean_j sign(x_j)]
    """

    B: float
    Bbar: float
    sigma: float
    T: float

    def batch(self, t, states):
        _sign_check(states)
        tau = self.T - t
        local = np.exp(self.B * tau)
        glob = np.exp((self.B + self.Bbar) * tau)
        sg = np.sign(states[..., 0])
        v = local * sg + (glob - local) * sg.mean(axis=1, keepdims=True)
        return (-self.sigma * v)[..., None]

    def bound(self, t):
        tau = self.T - t
        return 2.0 * abs(self.sigma) * max(np.exp(self.B * tau), np.exp((self.B + self.Bbar) * tau))


@dataclass(frozen=True)
class CustomControl(ControlPolicy):
    """User-supplied control.

    ``fn(t, i, state)`` returns an m-vector for particle ``i`` of an (N, d)
    state. An optional vectorised ``batch_fn(t, states)`` is used by the
    simulator when given. The engine never clips; a custom control must be
    bounded for the Girsanov weights to be valid.
    """

    fn: Callable
    batch_fn: Optional[Callable] = None
    dim_m: int = 1
    bound_fn: Optional[Callable[[float], float]] = None

    def batch(self, t, states):
        if self.batch_fn is not None:
            return np.asarray(self.batch_fn(t, states), dtype=float)
        M, N, _ = states.shape
        out = np.empty((M, N, self.dim_m))
        for j in range(M):
            for i in range(N):
                out[j, i] = self.fn(t, i, states[j])
        return out

    def value(self, t, i, state):
        x = np.asarray(state, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return np.atleast_1d(np.asarray(self.fn(t, i, x), dtype=float))

    def bound(self, t):
        return None if self.bound_fn is None else self.bound_fn(t)
