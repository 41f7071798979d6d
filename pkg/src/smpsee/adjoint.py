"""Backward recursion for the adjoint equation with regression-based conditional expectations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .forward import ControlProcess, StateEnsemble
from .galerkin import GalerkinSpace, TimeGrid
from .hamiltonian import grad_x_hamiltonian
from .problem import LqSpec, ProblemSpec
from .regression import RegressionBasis, conditional_expectation, cross_validated_se

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AdjointPair:
    """``Y[path, step]`` on all ``N + 1`` grid points, ``Z[path, step]`` on the ``N`` intervals.

    ``costate[:, i] = E[S*(dt) Y_{i+1} | F_i]`` is the multiplier paired with
    the control held on ``[t_i, t_{i+1})``; it differs from ``Y_i`` by
    ``dt * grad_x H``. ``noise_floor`` is the declared threshold below which ``|Z|`` counts as
    regression noise (3 x cross-validated standard error), or ``None`` when
    it was not estimated.
    """

    Y: np.ndarray = field(repr=False)
    Z: np.ndarray = field(repr=False)
    grid: TimeGrid
    costate: np.ndarray = field(repr=False, default=None)
    noise_floor: float | None = None
    degrees: tuple = ()

    def __post_init__(self):
        if self.costate is None:
            object.__setattr__(self, "costate", self.Y[:, :-1])

    @property
    def z_max(self) -> float:
        return float(np.max(np.abs(self.Z))) if self.Z.size else 0.0


def _abort_nonfinite(arr, step, what):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite {what} at step {step}")


def solve_bsee(spec: ProblemSpec, space: GalerkinSpace, grid: TimeGrid,
               ensemble: StateEnsemble, control: ControlProcess,
               basis: RegressionBasis | None = None, *,
               estimate_noise_floor: bool = False) -> AdjointPair:
    """Solve the adjoint equation backward from ``Y_N = grad phi(X_N)``.

    For ``i = N-1, ..., 0``, with ``G = S*(dt) Y_{i+1}``::

        Yhat_i = E[G | X_i]
        Z_i    = E[(G - Yhat_i) dW_i^T | X_i] / dt
        Y_i    = Yhat_i + dt * grad_x H(X_i, nu_i, Yhat_i, Z_i)

    Centering ``G`` by ``Yhat_i`` leaves the conditional expectation for
    ``Z_i`` unchanged but removes most of its sampling variance.
    """
    basis = basis if basis is not None else RegressionBasis()
    X = ensemble.states
    dW = ensemble.noise.increments
    P, N, dt = X.shape[0], grid.n_steps, grid.dt
    S = space.semigroup(dt)
    Y = np.empty((P, N + 1, space.n_state))
    Z = np.empty((P, N, space.n_state, space.n_noise))
    Y_hat = np.empty((P, N, space.n_state))
    Y[:, N] = spec.terminal_grad(X[:, N])
    _abort_nonfinite(Y[:, N], N, "terminal gradient")
    degrees, floor = [], 0.0
    for i in range(N - 1, -1, -1):
        x, nu = X[:, i], control.at(i, P)
        G = S * Y[:, i + 1]
        y_hat, deg = conditional_expectation(x, G, basis)
        mart = (G - y_hat)[:, :, None] * dW[:, i][:, None, :]
        z_fit, deg_z = conditional_expectation(x, mart, basis)
        Z[:, i] = z_fit / dt
        Y_hat[:, i] = y_hat
        Y[:, i] = y_hat + dt * grad_x_hamiltonian(spec, x, nu, y_hat, Z[:, i])
        _abort_nonfinite(Y[:, i], i, "Y")
        _abort_nonfinite(Z[:, i], i, "Z")
        degrees.append(deg)
        if estimate_noise_floor:
            floor = max(floor, 3.0 * cross_validated_se(x, mart, basis) / dt)
    return AdjointPair(Y, Z, grid, Y_hat, floor if estimate_noise_floor else None,
                       tuple(reversed(degrees)))


def solve_bsee_lq_explicit(lq: LqSpec, space: GalerkinSpace, grid: TimeGrid,
                           ensemble: StateEnsemble,
                           basis: RegressionBasis | None = None, *,
                           estimate_noise_floor: bool = False) -> AdjointPair:
    """Closed-form adjoint for linear dynamics whose driver ignores ``(Y, Z)``.

    ``Y(t) = E[S*(T - t) grad phi(X_T) | F_t]`` and ``Z(t) = S*(T - t) R(t)``
    with ``R`` the martingale-representation integrand of ``grad phi(X_T)``.
    For a linear terminal cost both are deterministic and exact; otherwise the
    conditional expectations are regressed directly on the terminal value.
    """
    if not isinstance(lq, LqSpec):
        raise TypeError("solve_bsee_lq_explicit requires an LqSpec")
    basis = basis if basis is not None else RegressionBasis()
    X = ensemble.states
    dW = ensemble.noise.increments
    P, N, dt = X.shape[0], grid.n_steps, grid.dt
    t = grid.points
    Y = np.empty((P, N + 1, space.n_state))
    Z = np.zeros((P, N, space.n_state, space.n_noise))
    G = lq.terminal_grad(X[:, N])
    Y[:, N] = G
    if lq.rho is not None:
        for i in range(N):
            Y[:, i] = space.semigroup(grid.horizon - t[i]) * lq.rho
        return AdjointPair(Y, Z, grid, noise_floor=0.0 if estimate_noise_floor else None)
    floor = 0.0
    for i in range(N):
        target = space.semigroup(grid.horizon - t[i]) * G
        Y[:, i], _ = conditional_expectation(X[:, i], target, basis)
        mart = (target - Y[:, i])[:, :, None] * dW[:, i][:, None, :]
        Z[:, i] = conditional_expectation(X[:, i], mart, basis)[0] / dt
        if estimate_noise_floor:
            floor = max(floor, 3.0 * cross_validated_se(X[:, i], mart, basis) / dt)
    return AdjointPair(Y, Z, grid, noise_floor=floor if estimate_noise_floor else None)
