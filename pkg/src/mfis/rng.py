"""Reproducible Gaussian increments keyed by (seed, sample index).

Each sample owns one Philox stream whose key is ``(base_seed, sample_index)``.
Normals are drawn step-major, then particle, then noise component, so a
sample's increments never depend on which other samples are drawn with it or
on how samples are split over workers.
"""

from __future__ import annotations

import numpy as np

__all__ = ["sample_generator", "standard_normals"]

_MASK64 = (1 << 64) - 1


def sample_generator(base_seed: int, sample_index: int) -> np.random.Generator:
    key = np.array([int(base_seed) & _MASK64, int(sample_index) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def standard_normals(base_seed: int, sample_indices, n_steps: int, n_particles: int, m: int = 1):
    """Array of shape (len(sample_indices), n_steps, n_particles, m) of N(0, 1) draws."""
    idx = np.asarray(sample_indices, dtype=np.int64).reshape(-1)
    out = np.empty((idx.size, n_steps, n_particles, m))
    for row, j in enumerate(idx):
        sample_generator(base_seed, j).standard_normal(out=out[row].reshape(-1))
    return out
