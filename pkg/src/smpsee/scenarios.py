"""Shipped control problems on the half-Laplacian Fourier truncation."""

from __future__ import annotations

import numpy as np

from .galerkin import GalerkinSpace
from .problem import UNCONSTRAINED, ProblemSpec, make_lq_spec

SCENARIOS = ("lq-linear-phi", "lq-quadratic-phi", "tanh-drift")


def _logcosh(u):
    return np.logaddexp(u, -u) - np.log(2.0)


def _sech2(u):
    return 1.0 / np.cosh(u) ** 2


def benchmark_operators(n_state: int, n_control: int, n_noise: int):
    """``B = id`` and ``D nu = <nu, h> Q^{1/2}`` with ``h_j = 1/j`` and ``Q = diag(1/k^2)``."""
    B = np.eye(n_state, n_control)
    h = 1.0 / np.arange(1, n_control + 1)
    sqrt_q = 1.0 / np.arange(1, min(n_state, n_noise) + 1)
    D = np.zeros((n_state, n_noise, n_control))
    for k, s in enumerate(sqrt_q):
        D[k, k] = s * h
    return B, D


def lq_linear_phi(n_state: int = 8, n_control: int | None = None, n_noise: int | None = None,
                  admissible=UNCONSTRAINED, zero_terminal: bool = False):
    """Linear-quadratic problem with terminal cost ``<rho, x>``, ``rho_k = x0_k = 1/k``."""
    space = GalerkinSpace.half_laplacian(n_state, n_control, n_noise)
    B, D = benchmark_operators(space.n_state, space.n_control, space.n_noise)
    k = np.arange(1, n_state + 1)
    rho = np.zeros(n_state) if zero_terminal else 1.0 / k
    spec = make_lq_spec(B, D, x0=1.0 / k, rho=rho, admissible=admissible, name="lq-linear-phi")
    return spec, space


def lq_quadratic_phi(n_state: int = 4, n_control: int | None = None, n_noise: int | None = None,
                     admissible=UNCONSTRAINED, zero_terminal: bool = False):
    """Same dynamics with ``phi(x) = |x|^2 / 2``; the adjoint then carries a nonzero ``Z``."""
    space = GalerkinSpace.half_laplacian(n_state, n_control, n_noise)
    B, D = benchmark_operators(space.n_state, space.n_control, space.n_noise)
    k = np.arange(1, n_state + 1)
    w = 0.0 if zero_terminal else 1.0
    spec = make_lq_spec(
        B, D, x0=1.0 / k,
        terminal_cost=lambda x: 0.5 * w * np.einsum("pk,pk->p", x, x),
        terminal_grad=lambda x: w * x,
        admissible=admissible, name="lq-quadratic-phi")
    return spec, space


def tanh_drift(n_state: int = 4, n_control: int | None = None, n_noise: int | None = None,
               admissible=UNCONSTRAINED, zero_terminal: bool = False,
               coupling: float = 0.25, diffusion=(0.3, 0.2, 0.4), state_cost: float = 0.5):
    """Nonlinear problem with bounded, globally Lipschitz coefficients.

    ``b(x, nu) = tanh(K x + B nu)``, ``sigma(x, nu) = diag(s0 + s1 tanh(x) + s2 tanh(B nu))``,
    ``l(x, nu) = |nu|^2 + a sum log cosh x_k`` and ``phi(x) = sum log cosh(x_k - c_k)``.
    """
    space = GalerkinSpace.half_laplacian(n_state, n_control, n_noise)
    n, m, d = space.n_state, space.n_control, space.n_noise
    K = 0.5 * np.eye(n) + coupling * (np.eye(n, k=1) + np.eye(n, k=-1))
    B = np.eye(n, m)
    s0, s1, s2 = diffusion
    r = min(n, d)
    diag = np.arange(r)
    target = 0.8 * (-1.0) ** np.arange(n)
    wt = 0.0 if zero_terminal else 1.0

    def drift(x, nu):
        return np.tanh(x @ K.T + nu @ B.T)

    def drift_x(x, nu):
        return _sech2(x @ K.T + nu @ B.T)[:, :, None] * K

    def drift_nu(x, nu):
        return _sech2(x @ K.T + nu @ B.T)[:, :, None] * B

    def diffusion_fn(x, nu):
        out = np.zeros((x.shape[0], n, d))
        out[:, diag, diag] = s0 + s1 * np.tanh(x[:, :r]) + s2 * np.tanh((nu @ B.T)[:, :r])
        return out

    def diffusion_x(x, nu):
        out = np.zeros((x.shape[0], n, d, n))
        out[:, diag, diag, diag] = s1 * _sech2(x[:, :r])
        return out

    def diffusion_nu(x, nu):
        out = np.zeros((x.shape[0], n, d, m))
        out[:, diag, diag, :] = (s2 * _sech2((nu @ B.T)[:, :r]))[:, :, None] * B[:r]
        return out

    spec = ProblemSpec(
        n_state=n, n_control=m, n_noise=d,
        drift=drift,
        diffusion=diffusion_fn,
        running_cost=lambda x, nu: (np.einsum("pm,pm->p", nu, nu)
                                    + state_cost * _logcosh(x).sum(axis=1)),
        terminal_cost=lambda x: wt * _logcosh(x - target).sum(axis=1),
        drift_x=drift_x,
        drift_nu=drift_nu,
        diffusion_x=diffusion_x,
        diffusion_nu=diffusion_nu,
        cost_x=lambda x, nu: state_cost * np.tanh(x),
        cost_nu=lambda x, nu: 2.0 * nu,
        terminal_grad=lambda x: wt * np.tanh(x - target),
        x0=np.full(n, 0.5), admissible=admissible, name="tanh-drift",
    )
    return spec, space


def build(name: str, **kwargs) -> tuple[ProblemSpec, GalerkinSpace]:
    builders = {"lq-linear-phi": lq_linear_phi, "lq-quadratic-phi": lq_quadratic_phi,
                "tanh-drift": tanh_drift}
    if name not in builders:
        raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return builders[name](**kwargs)
