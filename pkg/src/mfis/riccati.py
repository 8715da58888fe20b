"""Riccati system of the linear-quadratic HJB equation on Wasserstein space.

For a linear drift, constant noise and a quadratic terminal functional the
value function is

    Psi(t, mu) = int z'Lambda z dmu + m'(Gamma - Lambda) m + gamma.m + chi,

where m is the mean of mu, and the coefficients solve a backward system of
Riccati ODEs. The finite-N value Phi^N differs from Psi only by
``chi_correction / N``, so one solve serves every particle count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import EmpiricalMeasure, Quadratic, TerminalFunctional
from .models import LQModel, lq_to_model

__all__ = [
    "RiccatiBlowupError",
    "RiccatiSolution",
    "solve_riccati",
    "psi_value",
    "exact_value",
    "log_exact_value",
    "exact_mc_relative_error",
    "hjb_residual",
    "DEFAULT_STEPS",
]

DEFAULT_STEPS = 10_000
_BLOWUP = 1e150


class RiccatiBlowupError(ArithmeticError):
    """The backward integration left the finite range (finite-time blowup)."""

    def __init__(self, time):
        super().__init__(f"Riccati solution blew up near t={time:.6g}")
        self.time = time


@dataclass(frozen=True)
class RiccatiSolution:
    """Backward solution on a uniform ascending grid ``t_grid`` covering [s, T].

    ``chi_correction[k]`` is int_{t_k}^T sigma'(Gamma - Lambda)sigma dtau.
    """

    t_grid: np.ndarray
    Lambda: np.ndarray
    Gamma: np.ndarray
    gamma: np.ndarray
    chi: np.ndarray
    chi_correction: np.ndarray
    lq: LQModel
    g: Quadratic

    @property
    def s(self) -> float:
        return float(self.t_grid[0])

    @property
    def T(self) -> float:
        return float(self.t_grid[-1])

    @property
    def step(self) -> float:
        return float(self.t_grid[1] - self.t_grid[0])

    def coefficients(self, t: float):
        """(Lambda, Gamma, gamma, chi, chi_correction) linearly interpolated at ``t``."""
        s, T = self.s, self.T
        tol = 1e-12 * max(1.0, abs(T))
        if t < s - tol or t > T + tol:
            raise ValueError(f"t={t} outside the solution interval [{s}, {T}]")
        n = len(self.t_grid) - 1
        u = (min(max(t, s), T) - s) / self.step
        k = min(int(np.floor(u)), n - 1)
        w = u - k
        if w < 1e-12:
            w = 0.0

        def lerp(a):
            return a[k] if w == 0.0 else (1.0 - w) * a[k] + w * a[k + 1]

        return (
            lerp(self.Lambda),
            lerp(self.Gamma),
            lerp(self.gamma),
            float(lerp(self.chi)),
            float(lerp(self.chi_correction)),
        )


def _rhs(state, lq: LQModel, ss: np.ndarray):
    """Time derivative of (Lambda, Gamma, gamma, chi, c) along forward time."""
    L, G, gam, _chi, _c = state
    B = lq.B
    A = lq.B + lq.Bbar
    sig = lq.sigma
    dL = -(L @ B + B.T @ L - 2.0 * L @ ss @ L.T)
    dG = -(G @ A + A.T @ G - 2.0 * G @ ss @ G.T)
    dgam = -(A.T @ gam - 2.0 * G @ ss @ gam + 2.0 * G @ lq.b0)
    dchi = 0.5 * gam @ ss @ gam - gam @ lq.b0 - sig @ L @ sig
    dc = -(sig @ (G - L) @ sig)
    return dL, dG, dgam, dchi, dc


def _axpy(state, h, deriv):
    return tuple(x + h * dx for x, dx in zip(state, deriv))


def solve_riccati(
    lq: LQModel,
    g: TerminalFunctional,
    s: float = 0.0,
    T: float = 1.0,
    n_steps: int = DEFAULT_STEPS,
) -> RiccatiSolution:
    """Integrate the LQ Riccati system backward from ``T`` to ``s`` with classical RK4.

    Raises
    ------
    TypeError
        If ``g`` is not a :class:`Quadratic` functional.
    RiccatiBlowupError
        If the solution overflows before reaching ``s``.
    """
    if not isinstance(g, Quadratic):
        raise TypeError(f"the Riccati solver needs a Quadratic functional, got {type(g).__name__}")
    if not T > s:
        raise ValueError(f"need T > s, got s={s}, T={T}")
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    d = lq.dim
    if g.dim != d:
        raise ValueError(f"functional dimension {g.dim} does not match model dimension {d}")

    h = (T - s) / n_steps
    t_grid = s + h * np.arange(n_steps + 1)
    t_grid[-1] = T

    if d == 1:
        Lam, Gam, gam, chi, cc = _integrate_scalar(lq, g, t_grid, h)
    else:
        Lam, Gam, gam, chi, cc = _integrate(lq, g, t_grid, h)

    return RiccatiSolution(t_grid, Lam, Gam, gam, chi, cc, lq, g)


def _integrate(lq, g, t_grid, h):
    n_steps = len(t_grid) - 1
    d = lq.dim
    ss = np.outer(lq.sigma, lq.sigma)
    Lam = np.empty((n_steps + 1, d, d))
    Gam = np.empty((n_steps + 1, d, d))
    gam = np.empty((n_steps + 1, d))
    chi = np.empty(n_steps + 1)
    cc = np.empty(n_steps + 1)

    state = (g.P2.copy(), g.P2 + g.Pbar2, g.p1.copy(), g.p2, 0.0)
    Lam[-1], Gam[-1], gam[-1], chi[-1], cc[-1] = state

    with np.errstate(over="raise", invalid="raise"):
        for k in range(n_steps, 0, -1):
            try:
                k1 = _rhs(state, lq, ss)
                k2 = _rhs(_axpy(state, -0.5 * h, k1), lq, ss)
                k3 = _rhs(_axpy(state, -0.5 * h, k2), lq, ss)
                k4 = _rhs(_axpy(state, -h, k3), lq, ss)
                state = tuple(
                    x - h / 6.0 * (a + 2.0 * b + 2.0 * c + e)
                    for x, a, b, c, e in zip(state, k1, k2, k3, k4)
                )
            except FloatingPointError:
                raise RiccatiBlowupError(t_grid[k]) from None
            L, G, gv, ch, c = state
            L = 0.5 * (L + L.T)
            G = 0.5 * (G + G.T)
            state = (L, G, gv, ch, c)
            big = max(np.abs(L).max(), np.abs(G).max(), np.abs(gv).max(), abs(ch), abs(c))
            if not np.isfinite(big) or big > _BLOWUP:
                raise RiccatiBlowupError(t_grid[k - 1])
            Lam[k - 1], Gam[k - 1], gam[k - 1], chi[k - 1], cc[k - 1] = state

    return Lam, Gam, gam, chi, cc


def _integrate_scalar(lq, g, t_grid, h):
    # d = 1 with plain floats; numpy call overhead dominates tiny matrices
    n_steps = len(t_grid) - 1
    B = float(lq.B[0, 0])
    A = B + float(lq.Bbar[0, 0])
    b0 = float(lq.b0[0])
    s2 = float(lq.sigma[0]) ** 2

    def f(L, G, gv):
        return (
            -(2.0 * B * L - 2.0 * s2 * L * L),
            -(2.0 * A * G - 2.0 * s2 * G * G),
            -(A * gv - 2.0 * s2 * G * gv + 2.0 * G * b0),
            0.5 * s2 * gv * gv - gv * b0 - s2 * L,
            -s2 * (G - L),
        )

    out = np.empty((5, n_steps + 1))
    L = float(g.P2[0, 0])
    G = L + float(g.Pbar2[0, 0])
    gv = float(g.p1[0])
    ch = g.p2
    c = 0.0
    out[:, -1] = (L, G, gv, ch, c)
    hh = 0.5 * h
    for k in range(n_steps, 0, -1):
        try:
            a = f(L, G, gv)
            b = f(L - hh * a[0], G - hh * a[1], gv - hh * a[2])
            e = f(L - hh * b[0], G - hh * b[1], gv - hh * b[2])
            q = f(L - h * e[0], G - h * e[1], gv - h * e[2])
        except OverflowError:
            raise RiccatiBlowupError(t_grid[k]) from None
        w = h / 6.0
        L -= w * (a[0] + 2.0 * b[0] + 2.0 * e[0] + q[0])
        G -= w * (a[1] + 2.0 * b[1] + 2.0 * e[1] + q[1])
        gv -= w * (a[2] + 2.0 * b[2] + 2.0 * e[2] + q[2])
        ch -= w * (a[3] + 2.0 * b[3] + 2.0 * e[3] + q[3])
        c -= w * (a[4] + 2.0 * b[4] + 2.0 * e[4] + q[4])
        big = max(abs(L), abs(G), abs(gv), abs(ch), abs(c))
        if not big < _BLOWUP:
            raise RiccatiBlowupError(t_grid[k - 1])
        out[:, k - 1] = (L, G, gv, ch, c)
    return (
        out[0].reshape(-1, 1, 1).copy(),
        out[1].reshape(-1, 1, 1).copy(),
        out[2].reshape(-1, 1).copy(),
        out[3].copy(),
        out[4].copy(),
    )


def _psi_parts(sol, t, x):
    L, G, gv, ch, c = sol.coefficients(t)
    m = x.mean(axis=0)
    val = np.einsum("ni,ij,nj->n", x, L, x).mean() + m @ (G - L) @ m + gv @ m + ch
    return val, c


def psi_value(sol: RiccatiSolution, t: float, mu: EmpiricalMeasure) -> float:
    """Limit value function Psi(t, mu) evaluated from the interpolated coefficients."""
    if mu.dim != sol.lq.dim:
        raise ValueError(f"measure dimension {mu.dim} does not match model dimension {sol.lq.dim}")
    return float(_psi_parts(sol, t, mu.positions)[0])


def _initial_positions(y, N, d):
    y = np.asarray(y, dtype=float)
    if y.ndim == 0 or y.size == d:
        return np.broadcast_to(y.reshape(1, d), (N, d)).copy()
    y = y.reshape(len(y), -1)
    if y.shape != (N, d):
        raise ValueError(f"initial positions must have shape ({N}, {d}), got {y.shape}")
    return y


def log_exact_value(sol: RiccatiSolution, N: int, s: float, y) -> float:
    """log E[exp(-N G(mu_T^N))] = -N Phi^N(s, mu_y) for an LQ system started at ``y``."""
    x = _initial_positions(y, N, sol.lq.dim)
    psi, c = _psi_parts(sol, s, x)
    return float(-N * psi - c)


def exact_value(sol: RiccatiSolution, N: int, s: float, y) -> float:
    return float(np.exp(log_exact_value(sol, N, s, y)))


def exact_mc_relative_error(
    lq: LQModel,
    g: Quadratic,
    N: int,
    s: float,
    y,
    M: int = 1,
    T: float = 1.0,
    n_steps: int = DEFAULT_STEPS,
) -> float:
    """Relative error of the plain Monte Carlo estimator with ``M`` samples.

    Uses the exact first moment of exp(-N G) and the exact first moment of
    exp(-2N G) (every coefficient of G doubled).
    """
    log1 = log_exact_value(solve_riccati(lq, g, s, T, n_steps), N, s, y)
    log2 = log_exact_value(solve_riccati(lq, g.scaled(2.0), s, T, n_steps), N, s, y)
    log_ratio = log2 - 2.0 * log1
    if log_ratio < -1e-12:
        raise ArithmeticError(
            f"second moment below squared mean (log ratio {log_ratio:.3e}); "
            "Riccati solutions are inconsistent"
        )
    return float(np.sqrt(np.expm1(max(log_ratio, 0.0)) / M))


def hjb_residual(sol: RiccatiSolution, t: float, mu: EmpiricalMeasure) -> float:
    """d/dt Psi - H0(mu, d_mu Psi, d_z d_mu Psi) at (t, mu).

    The Hamiltonian is assembled atom by atom from the model drift and the
    analytic Lions derivatives; the time derivative is a centred difference
    with the grid spacing as step.
    """
    h = sol.step
    if t - h < sol.s - 1e-12 or t + h > sol.T + 1e-12:
        raise ValueError(
            f"t={t} is within one grid step ({h:.3g}) of [{sol.s}, {sol.T}]; "
            "the centred difference needs t-h and t+h in range"
        )
    x = mu.positions
    if x.shape[1] != sol.lq.dim:
        raise ValueError("measure dimension does not match the model")
    dpsi_dt = (_psi_parts(sol, t + h, x)[0] - _psi_parts(sol, t - h, x)[0]) / (2.0 * h)

    L, G, gv, _, _ = sol.coefficients(t)
    m = x.mean(axis=0)
    p = 2.0 * x @ L.T + 2.0 * (G - L) @ m + gv  # Lions derivative at each atom
    hess = 2.0 * L
    model = lq_to_model(sol.lq)
    b = model.batch_drift(x[None])[0]
    sig = sol.lq.sigma_matrix
    ss = sig @ sig.T
    sp = p @ sig
    integrand = (
        np.einsum("ni,ni->n", b, p)
        - 0.5 * np.einsum("nk,nk->n", sp, sp)
        + 0.5 * np.sum(ss * hess)
    )
    H0 = -integrand.mean()
    return float(dpsi_dt - H0)
