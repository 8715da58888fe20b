"""Empirical measures of particle ensembles and terminal functionals on them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EmpiricalMeasure",
    "TerminalFunctional",
    "Quadratic",
    "AbsOfMean",
    "MeanOfAbs",
    "mean",
    "evaluate_G",
]

_SYM_TOL = 1e-12


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform empirical measure (1/N) sum_i delta_{x_i}.

    Parameters
    ----------
    positions : array_like, shape (N, d) or (N,)
        Particle positions; row ``i`` is particle ``i``. A 1-d input is read
        as N scalar particles.
    """

    positions: np.ndarray

    def __post_init__(self):
        x = np.array(self.positions, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"positions must have shape (N, d) with N, d >= 1, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("positions must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "positions", x)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def mean(self) -> np.ndarray:
        return self.positions.mean(axis=0)


def mean(mu: EmpiricalMeasure) -> np.ndarray:
    """Integral of the identity against ``mu``, a d-vector."""
    return mu.mean()


class TerminalFunctional:
    """Base class for G: P(R^d) -> R evaluated on empirical measures.

    Subclasses implement :meth:`evaluate_batch` on stacked ensembles of shape
    (M, N, d); :meth:`__call__` is the single-measure entry point.
    """

    dim: int | None = None

    def evaluate_batch(self, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_dim(self, d: int):
        if self.dim is not None and d != self.dim:
            raise ValueError(
                f"{type(self).__name__} expects state dimension {self.dim}, got {d}"
            )

    def __call__(self, mu: EmpiricalMeasure) -> float:
        self._check_dim(mu.dim)
        return float(self.evaluate_batch(mu.positions[None])[0])


def _as_matrix(a, d=None) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if d is not None and a.shape[0] != d:
        raise ValueError(f"expected a {d}x{d} matrix, got shape {a.shape}")
    return a


def _looks_psd(a: np.ndarray) -> bool:
    # Cheap necessary conditions: nonnegative diagonal and 2x2 principal minors.
    diag = np.diag(a)
    if np.any(diag < -_SYM_TOL):
        return False
    minors = np.outer(diag, diag) - a * a.T
    return bool(np.all(minors >= -1e-10 * max(1.0, np.abs(a).max() ** 2)))


@dataclass(frozen=True)
class Quadratic(TerminalFunctional):
    """G(mu) = int z'P2 z + p1.z dmu + m'Pbar2 m + p2, with m the mean of mu.

    ``check_psd=False`` skips the diagonal/minor PSD heuristic; symmetry is
    always enforced.
    """

    P2: np.ndarray
    p1: np.ndarray
    Pbar2: np.ndarray
    p2: float = 0.0
    check_psd: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        P2 = _as_matrix(self.P2)
        d = P2.shape[0]
        Pbar2 = _as_matrix(self.Pbar2, d)
        p1 = np.atleast_1d(np.asarray(self.p1, dtype=float))
        if p1.shape != (d,):
            raise ValueError(f"p1 must have shape ({d},), got {p1.shape}")
        for name, a in (("P2", P2), ("Pbar2", Pbar2)):
            if np.abs(a - a.T).max() > _SYM_TOL:
                raise ValueError(f"{name} must be symmetric")
            if self.check_psd and not _looks_psd(a):
                raise ValueError(f"{name} is not positive semidefinite")
        object.__setattr__(self, "P2", P2)
        object.__setattr__(self, "Pbar2", Pbar2)
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "p2", float(self.p2))

    @property
    def dim(self) -> int:
        return self.P2.shape[0]

    @classmethod
    def zeros(cls, d: int = 1) -> "Quadratic":
        return cls(np.zeros((d, d)), np.zeros(d), np.zeros((d, d)), 0.0)

    def scaled(self, factor: float) -> "Quadratic":
        """The functional ``factor * G``; every coefficient is scaled."""
        return Quadratic(
            factor * self.P2, factor * self.p1, factor * self.Pbar2, factor * self.p2,
            check_psd=self.check_psd,
        )

    def evaluate_batch(self, states):
        x = np.asarray(states, dtype=float)
        self._check_dim(x.shape[-1])
        quad = np.einsum("mni,ij,mnj->mn", x, self.P2, x).mean(axis=1)
        lin = (x @ self.p1).mean(axis=1)
        m = x.mean(axis=1)
        return quad + lin + np.einsum("mi,ij,mj->m", m, self.Pbar2, m) + self.p2


@dataclass(frozen=True)
class AbsOfMean(TerminalFunctional):
    """G(mu) = |int z mu(dz)| on the real line."""

    dim = 1

    def evaluate_batch(self, states):
        x = np.asarray(states, dtype=float)
        self._check_dim(x.shape[-1])
        return np.abs(x[..., 0].mean(axis=1))


@dataclass(frozen=True)
class MeanOfAbs(TerminalFunctional):
    """G(mu) = int |z| mu(dz) on the real line."""

    dim = 1

    def evaluate_batch(self, states):
        x = np.asarray(states, dtype=float)
        self._check_dim(x.shape[-1])
        return np.abs(x[..., 0]).mean(axis=1)


def evaluate_G(g: TerminalFunctional, mu: EmpiricalMeasure) -> float:
    return g(mu)
