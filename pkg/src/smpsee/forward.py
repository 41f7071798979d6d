"""Exponential Euler simulation of the controlled forward equation in mild form."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .hamiltonian import apply_jacobian
from .galerkin import GalerkinSpace, NoiseEnsemble, TimeGrid
from .problem import ProblemSpec


class NonFiniteStateError(FloatingPointError):
    def __init__(self, path: int, step: int):
        super().__init__(f"state became non-finite on path {path} at step {step}")
        self.path = path
        self.step = step


@dataclass(frozen=True, eq=False)
class ControlProcess:
    """Piecewise-constant control, ``values[path, step]`` holds on ``[t_i, t_{i+1})``.

    A deterministic control stores a single path (leading axis of length 1)
    that is broadcast over every noise path.
    """

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3:
            raise ValueError("control values must be indexed (path, step, coordinate)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: TimeGrid, value) -> "ControlProcess":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(np.broadcast_to(value, (grid.n_steps, value.size)))

    @classmethod
    def zeros(cls, grid: TimeGrid, n_control: int) -> "ControlProcess":
        return cls(np.zeros((grid.n_steps, n_control)))

    @property
    def deterministic(self) -> bool:
        return self.values.shape[0] == 1

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    @property
    def n_control(self) -> int:
        return self.values.shape[2]

    def at(self, step: int, n_paths: int | None = None) -> np.ndarray:
        v = self.values[:, step]
        if n_paths is not None and v.shape[0] == 1:
            v = np.repeat(v, n_paths, axis=0)
        return v

    def paths(self, idx) -> "ControlProcess":
        return self if self.deterministic else ControlProcess(self.values[idx])

    def __add__(self, other: "ControlProcess") -> "ControlProcess":
        return ControlProcess(self.values + other.values)

    def __sub__(self, other: "ControlProcess") -> "ControlProcess":
        return ControlProcess(self.values - other.values)

    def refine(self, factor: int = 2) -> "ControlProcess":
        """Same piecewise-constant path on a grid ``factor`` times finer."""
        return ControlProcess(np.repeat(self.values, factor, axis=1))

    def scale(self, c: float) -> "ControlProcess":
        return ControlProcess(c * self.values)

    def is_admissible(self, spec: ProblemSpec, atol: float = 1e-12) -> bool:
        return spec.admissible.contains(self.values, atol)

    def l2_norm(self, grid: TimeGrid) -> float:
        """Time-L2 norm, averaged over paths for random controls."""
        return float(np.sqrt(np.mean(np.sum(self.values**2, axis=(1, 2))) * grid.dt))


@dataclass(frozen=True, eq=False)
class StateEnsemble:
    """Forward paths ``states[path, step]`` together with the noise that drove them."""

    states: np.ndarray = field(repr=False)
    grid: TimeGrid
    noise: NoiseEnsemble = field(repr=False)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.states[:, -1]


def _check_aligned(spec, space, grid, control, noise):
    if (spec.n_state, spec.n_control, spec.n_noise) != (
            space.n_state, space.n_control, space.n_noise):
        raise ValueError("problem and Galerkin space dimensions disagree")
    if noise.n_steps != grid.n_steps or control.n_steps != grid.n_steps:
        raise ValueError("control, noise and grid must share the number of steps")
    if not np.isclose(noise.dt, grid.dt):
        raise ValueError(f"noise step {noise.dt} does not match grid step {grid.dt}")
    if noise.n_noise != space.n_noise or control.n_control != space.n_control:
        raise ValueError("control or noise dimension mismatch")
    if not control.deterministic and control.values.shape[0] != noise.n_paths:
        raise ValueError("random control must have one path per noise path")


def _run_chunks(fn, n_paths: int, n_workers: int):
    chunks = np.array_split(np.arange(n_paths), max(1, min(n_workers, n_paths)))
    if len(chunks) == 1:
        return fn(chunks[0])
    with ThreadPoolExecutor(len(chunks)) as pool:
        return np.concatenate(list(pool.map(fn, chunks)), axis=0)


def integrate_forward(spec: ProblemSpec, space: GalerkinSpace, grid: TimeGrid,
                      control: ControlProcess, noise: NoiseEnsemble,
                      n_workers: int = 1) -> StateEnsemble:
    """Integrate ``X_{i+1} = S(dt) [X_i + dt b(X_i, nu_i) + sigma(X_i, nu_i) dW_i]``.

    Paths are independent, so they are split into ``n_workers`` chunks; the
    result does not depend on the chunking.
    """
    _check_aligned(spec, space, grid, control, noise)
    S = space.semigroup(grid.dt)
    dt = grid.dt

    def chunk(idx):
        dW = noise.increments[idx]
        ctrl = control.paths(idx)
        X = np.empty((idx.size, grid.n_steps + 1, space.n_state))
        X[:, 0] = spec.x0
        for i in range(grid.n_steps):
            x, nu = X[:, i], ctrl.at(i, idx.size)
            sig_dw = apply_jacobian(spec.diffusion(x, nu), dW[:, i])
            X[:, i + 1] = S * (x + dt * spec.drift(x, nu) + sig_dw)
            bad = ~np.isfinite(X[:, i + 1]).all(axis=1)
            if bad.any():
                raise NonFiniteStateError(int(idx[np.argmax(bad)]), i + 1)
        return X

    return StateEnsemble(_run_chunks(chunk, noise.n_paths, n_workers), grid, noise)


def perturbed_pair(spec: ProblemSpec, space: GalerkinSpace, grid: TimeGrid,
                   star: ControlProcess, direction: ControlProcess, eps: float,
                   noise: NoiseEnsemble, n_workers: int = 1):
    """Simulate ``nu*`` and ``nu* + eps nu`` on the same noise paths."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")
    if not (star + direction).is_admissible(spec):
        raise ValueError("nu* + nu is not admissible")
    x_star = integrate_forward(spec, space, grid, star, noise, n_workers)
    x_eps = integrate_forward(spec, space, grid, star + direction.scale(eps), noise, n_workers)
    return x_star, x_eps
