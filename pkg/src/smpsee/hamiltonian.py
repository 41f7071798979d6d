"""Hamiltonian ``l + <b, y> + <sigma, z>_2``, its gradients, and the Monte Carlo cost."""

from __future__ import annotations

import numpy as np

from .problem import ProblemSpec


def _batched(x, nu, y=None, z=None):
    single = np.ndim(x) == 1
    out = [np.atleast_2d(np.asarray(x, dtype=float)), np.atleast_2d(np.asarray(nu, dtype=float))]
    if y is not None:
        out.append(np.atleast_2d(np.asarray(y, dtype=float)))
    if z is not None:
        z = np.asarray(z, dtype=float)
        out.append(z[None] if z.ndim == 2 else z)
    return single, out


def _unbatch(single, value):
    return value[0] if single else value


def _contract(jac, w):
    """Transposed Jacobian applied to ``w``: ``out[p, j] = sum jac[p, ..., j] w[p, ...]``."""
    P = jac.shape[0]
    return (w.reshape(P, 1, -1) @ jac.reshape(P, -1, jac.shape[-1]))[:, 0]


def apply_jacobian(jac, v):
    """``out[p, ...] = sum_j jac[p, ..., j] v[p, j]``."""
    P = jac.shape[0]
    return (jac.reshape(P, -1, jac.shape[-1]) @ v[:, :, None]).reshape(jac.shape[:-1])


def hamiltonian(spec: ProblemSpec, x, nu, y, z):
    """Evaluate the Hamiltonian; ``z`` pairs with ``sigma`` through the Frobenius product."""
    single, (x, nu, y, z) = _batched(x, nu, y, z)
    val = (spec.running_cost(x, nu)
           + np.einsum("pk,pk->p", spec.drift(x, nu), y)
           + np.einsum("pkd,pkd->p", spec.diffusion(x, nu), z))
    return _unbatch(single, val)


def grad_x_hamiltonian(spec: ProblemSpec, x, nu, y, z):
    """``l_x + b_x^T y + sigma_x^T z`` with ``(sigma_x^T z)_j = sum_km dsigma_km/dx_j z_km``."""
    single, (x, nu, y, z) = _batched(x, nu, y, z)
    val = (spec.cost_x(x, nu) + _contract(spec.drift_x(x, nu), y)
           + _contract(spec.diffusion_x(x, nu), z))
    return _unbatch(single, val)


def grad_nu_hamiltonian(spec: ProblemSpec, x, nu, y, z, *, include_diffusion: bool = True):
    """``l_nu + b_nu^T y + sigma_nu^T z``.

    ``include_diffusion=False`` drops the ``sigma_nu^T z`` term; it exists only
    for fault injection.
    """
    single, (x, nu, y, z) = _batched(x, nu, y, z)
    val = spec.cost_nu(x, nu) + _contract(spec.drift_nu(x, nu), y)
    if include_diffusion:
        val = val + _contract(spec.diffusion_nu(x, nu), z)
    return _unbatch(single, val)


def pathwise_cost(spec: ProblemSpec, grid, ensemble, control) -> np.ndarray:
    """Left-point quadrature of the running cost plus terminal cost, one value per path."""
    X = ensemble.states
    total = np.zeros(X.shape[0])
    for i in range(grid.n_steps):
        total += spec.running_cost(X[:, i], control.at(i, X.shape[0])) * grid.dt
    return total + spec.terminal_cost(X[:, -1])


def evaluate_cost(spec: ProblemSpec, grid, ensemble, control) -> tuple[float, float]:
    """Monte Carlo estimate of the cost functional and its standard error."""
    vals = pathwise_cost(spec, grid, ensemble, control)
    return mean_and_se(vals)


def mean_and_se(vals) -> tuple[float, float]:
    vals = np.asarray(vals, dtype=float)
    if vals.size < 2 or np.ptp(vals) == 0:
        return float(vals[0]) if vals.size else 0.0, 0.0
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size))
