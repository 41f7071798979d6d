"""Spectral truncation of the state space, time grid, and seeded Wiener noise."""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .validation import check_positive_int


@dataclass(frozen=True, eq=False)
class GalerkinSpace:
    """Leading eigenmodes of a diagonal, self-adjoint generator.

    The generator acts as ``(A v)_k = eigenvalues[k] * v_k`` so the semigroup
    and its adjoint coincide: ``S(t) = S*(t) = diag(exp(eigenvalues * t))``.
    """

    eigenvalues: np.ndarray
    n_control: int
    n_noise: int

    def __post_init__(self):
        lam = np.array(self.eigenvalues, dtype=float).reshape(-1)
        if lam.size < 1:
            raise ValueError("need at least one retained eigenmode")
        if not np.all(np.isfinite(lam)):
            raise ValueError("eigenvalues must be finite")
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        check_positive_int(self.n_control, "n_control")
        check_positive_int(self.n_noise, "n_noise")

    @classmethod
    def half_laplacian(cls, n_state: int, n_control: int | None = None,
                       n_noise: int | None = None) -> "GalerkinSpace":
        """Fourier truncation of ``A = 1/2 Laplacian``: ``lambda_k = -k^2 / 2``."""
        check_positive_int(n_state, "n_state")
        k = np.arange(1, n_state + 1, dtype=float)
        return cls(-0.5 * k**2, n_control or n_state, n_noise or n_state)

    @property
    def n_state(self) -> int:
        return self.eigenvalues.size

    def semigroup(self, t: float) -> np.ndarray:
        """Diagonal of ``S(t)``."""
        if t < 0:
            raise ValueError(f"semigroup time must be nonnegative, got {t}")
        return np.exp(self.eigenvalues * t)


def semigroup_apply(space: GalerkinSpace, t: float, v) -> np.ndarray:
    """Apply ``S(t)`` (equivalently ``S*(t)``) along the last axis of ``v``."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1:] != (space.n_state,):
        raise ValueError(
            f"state vector has trailing dimension {v.shape[-1:]}, expected {space.n_state}")
    return space.semigroup(t) * v


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n_steps: int

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        check_positive_int(self.n_steps, "n_steps")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.horizon, self.n_steps * factor)


@dataclass(frozen=True, eq=False)
class NoiseEnsemble:
    """Wiener increments indexed ``(path, step, mode)``, each ``N(0, dt)``."""

    seed: int
    increments: np.ndarray = field(repr=False)
    dt: float = 1.0

    def __post_init__(self):
        inc = np.ascontiguousarray(self.increments, dtype=float)
        if inc.ndim != 3:
            raise ValueError("increments must be indexed (path, step, mode)")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[1]

    @property
    def n_noise(self) -> int:
        return self.increments.shape[2]

    @cached_property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.increments.tobytes()).hexdigest()[:16]

    def coarsen(self, factor: int = 2) -> "NoiseEnsemble":
        """Sum consecutive increments; the coarse ensemble lives on the same Brownian paths."""
        if self.n_steps % factor:
            raise ValueError(f"{self.n_steps} steps not divisible by {factor}")
        p, n, d = self.increments.shape
        coarse = self.increments.reshape(p, n // factor, factor, d).sum(axis=2)
        return NoiseEnsemble(self.seed, coarse, self.dt * factor)

    def refine(self, seed: int | None = None) -> "NoiseEnsemble":
        """Halve the step by Brownian-bridge sampling of each increment's midpoint.

        ``refine().coarsen()`` reproduces this ensemble (up to rounding), so
        coarse and fine grids see the same Brownian paths.
        """
        seed = self.seed + 1 if seed is None else seed
        p, n, d = self.increments.shape
        xi = np.empty_like(self.increments)
        for path in range(p):
            xi[path] = _path_normals(seed, path, n, d)
        # the bridge midpoint deviation has variance dt/4, independent of the increment
        half = 0.5 * self.increments
        dev = 0.5 * np.sqrt(self.dt) * xi
        fine = np.stack([half + dev, half - dev], axis=2).reshape(p, 2 * n, d)
        return NoiseEnsemble(seed, fine, self.dt / 2)

    def scaled(self, factor: float) -> "NoiseEnsemble":
        return NoiseEnsemble(self.seed, factor * self.increments, self.dt)


def _path_normals(seed: int, path: int, n_steps: int, n_noise: int) -> np.ndarray:
    # Philox keyed by (seed, path): each path's stream is independent of chunking
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, path], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key)).standard_normal((n_steps, n_noise))


def sample_noise(space: GalerkinSpace, grid: TimeGrid, n_paths: int, seed: int,
                 n_workers: int = 1) -> NoiseEnsemble:
    """Draw a reproducible ensemble of truncated cylindrical Wiener increments."""
    check_positive_int(n_paths, "n_paths")
    check_positive_int(n_workers, "n_workers")
    out = np.empty((n_paths, grid.n_steps, space.n_noise))
    scale = np.sqrt(grid.dt)

    def fill(paths):
        for p in paths:
            out[p] = scale * _path_normals(seed, p, grid.n_steps, space.n_noise)

    chunks = np.array_split(np.arange(n_paths), n_workers)
    if n_workers == 1:
        fill(chunks[0])
    else:
        with ThreadPoolExecutor(n_workers) as pool:
            list(pool.map(fill, chunks))
    return NoiseEnsemble(int(seed), out, grid.dt)


def replace_future(noise: NoiseEnsemble, other: NoiseEnsemble, step: int) -> NoiseEnsemble:
    """Keep increments before ``step`` and take the rest from ``other``."""
    inc = np.array(noise.increments)
    inc[:, step:] = other.increments[:, step:]
    return NoiseEnsemble(noise.seed, inc, noise.dt)


__all__ = [
    "GalerkinSpace", "TimeGrid", "NoiseEnsemble", "semigroup_apply", "sample_noise",
    "replace_future",
]
