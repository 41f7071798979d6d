"""Control problem data: coefficients, their derivatives, and the admissible set.

All coefficient callables are batched over a leading path axis. With ``P``
paths, ``n`` state modes, ``m`` control coordinates and ``d`` noise modes:

=================  =====================  ==================
callable           arguments              returns
=================  =====================  ==================
``drift``          x (P, n), nu (P, m)    (P, n)
``diffusion``      x, nu                  (P, n, d)
``running_cost``   x, nu                  (P,)
``terminal_cost``  x                      (P,)
``drift_x``        x, nu                  (P, n, n)
``drift_nu``       x, nu                  (P, n, m)
``diffusion_x``    x, nu                  (P, n, d, n)
``diffusion_nu``   x, nu                  (P, n, d, m)
``cost_x``         x, nu                  (P, n)
``cost_nu``        x, nu                  (P, m)
``terminal_grad``  x                      (P, n)
=================  =====================  ==================

Jacobians put the differentiation index last.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .validation import check_vector


@dataclass(frozen=True)
class Unconstrained:
    """``U`` is the whole control space."""

    def project(self, nu):
        return np.asarray(nu, dtype=float)

    def contains(self, nu, atol: float = 0.0) -> bool:
        return bool(np.all(np.isfinite(nu)))


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float).reshape(-1)
        hi = np.array(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("box bounds must have the same length")
        if np.any(lo > hi):
            raise ValueError("box requires lo <= hi coordinatewise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def project(self, nu):
        return np.clip(np.asarray(nu, dtype=float), self.lo, self.hi)

    def contains(self, nu, atol: float = 0.0) -> bool:
        nu = np.asarray(nu)
        return bool(np.all(nu >= self.lo - atol) and np.all(nu <= self.hi + atol))

    def vertices(self) -> np.ndarray:
        m = self.lo.size
        corners = (np.arange(2**m)[:, None] >> np.arange(m)) & 1
        return np.where(corners.astype(bool), self.hi, self.lo)


UNCONSTRAINED = Unconstrained()


@dataclass(frozen=True, eq=False, kw_only=True)
class ProblemSpec:
    """Coefficient bundle of a controlled evolution equation plus its cost."""

    n_state: int
    n_control: int
    n_noise: int
    drift: Callable
    diffusion: Callable
    running_cost: Callable
    terminal_cost: Callable
    drift_x: Callable
    drift_nu: Callable
    diffusion_x: Callable
    diffusion_nu: Callable
    cost_x: Callable
    cost_nu: Callable
    terminal_grad: Callable
    x0: np.ndarray
    admissible: Unconstrained | Box = UNCONSTRAINED
    name: str = "problem"

    def __post_init__(self):
        object.__setattr__(self, "x0", check_vector(self.x0, self.n_state, "x0"))
        if isinstance(self.admissible, Box) and self.admissible.lo.size != self.n_control:
            raise ValueError("box dimension does not match n_control")

    def with_admissible(self, admissible) -> "ProblemSpec":
        return replace(self, admissible=admissible)


@dataclass(frozen=True, eq=False, kw_only=True)
class LqSpec(ProblemSpec):
    """Linear dynamics ``dX = (AX + B nu) dt + (D nu) dW`` with cost ``|nu|^2 + phi(X_T)``.

    ``D`` is stored as an ``(n, d, m)`` tensor so ``D nu = D @ nu``. When
    ``rho`` is set the terminal cost is ``<rho, x>``.
    """

    B: np.ndarray
    D: np.ndarray
    rho: np.ndarray | None = None


def project_onto_U(spec: ProblemSpec, nu) -> np.ndarray:
    """Euclidean projection onto the admissible set (identity when unconstrained)."""
    return spec.admissible.project(nu)


def make_lq_spec(B, D, x0, rho=None, terminal_cost=None, terminal_grad=None,
                 admissible=UNCONSTRAINED, name: str = "lq") -> LqSpec:
    """Build an :class:`LqSpec`.

    Pass ``rho`` for a linear terminal cost, or both ``terminal_cost`` and
    ``terminal_grad`` for a nonlinear one.
    """
    B = np.array(B, dtype=float)
    D = np.array(D, dtype=float)
    n, m = B.shape
    if D.ndim != 3 or D.shape[0] != n or D.shape[2] != m:
        raise ValueError(f"D must have shape ({n}, d, {m}), got {D.shape}")
    d = D.shape[1]
    D_flat = D.reshape(n * d, m)
    if rho is not None:
        rho = check_vector(rho, n, "rho")
        terminal_cost = lambda x: x @ rho
        terminal_grad = lambda x: np.broadcast_to(rho, x.shape).copy()
    elif terminal_cost is None or terminal_grad is None:
        raise ValueError("give rho or both terminal_cost and terminal_grad")

    def zeros(*trail):
        return lambda x, nu: np.broadcast_to(np.zeros(trail), (x.shape[0],) + trail)

    return LqSpec(
        n_state=n, n_control=m, n_noise=d,
        drift=lambda x, nu: nu @ B.T,
        diffusion=lambda x, nu: (nu @ D_flat.T).reshape(x.shape[0], n, d),
        running_cost=lambda x, nu: np.einsum("pm,pm->p", nu, nu),
        terminal_cost=terminal_cost,
        drift_x=zeros(n, n),
        drift_nu=lambda x, nu: np.broadcast_to(B, (x.shape[0], n, m)),
        diffusion_x=zeros(n, d, n),
        diffusion_nu=lambda x, nu: np.broadcast_to(D, (x.shape[0], n, d, m)),
        cost_x=zeros(n),
        cost_nu=lambda x, nu: 2.0 * nu,
        terminal_grad=terminal_grad,
        x0=x0, admissible=admissible, name=name,
        B=B, D=D, rho=rho,
    )


# --- derivative self-test -------------------------------------------------

@dataclass
class SelfTestReport:
    errors: dict[str, float]
    tol: float
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {"errors": self.errors, "tol": self.tol, "failures": self.failures,
                "passed": self.passed}


def _central_jacobian(f, arg, h):
    """Central differences of ``f`` w.r.t. a single (1, k) argument; index appended last."""
    k = arg.shape[1]
    cols = []
    for j in range(k):
        e = np.zeros_like(arg)
        e[0, j] = h
        cols.append((f(arg + e) - f(arg - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def _rel_err(analytic, numeric) -> float:
    diff = np.linalg.norm(np.ravel(analytic - numeric))
    scale = max(np.linalg.norm(np.ravel(analytic)), np.linalg.norm(np.ravel(numeric)), 1.0)
    return float(diff / scale)


def derivative_selftest(spec: ProblemSpec, n_samples: int = 100, seed: int = 0,
                        tol: float = 1e-6, h: float = 1e-5) -> SelfTestReport:
    """Compare every declared derivative with central differences at random points.

    Relative error is ``|analytic - fd| / max(|analytic|, |fd|, 1)``; for
    small derivatives this degrades to an absolute error, which keeps
    identically-zero Jacobians testable. Also checks both Hamiltonian
    gradients. Failures are reported, never raised.
    """
    from .hamiltonian import grad_nu_hamiltonian, grad_x_hamiltonian, hamiltonian

    rng = np.random.default_rng(seed)
    n, m, d = spec.n_state, spec.n_control, spec.n_noise
    worst = dict.fromkeys(["drift_x", "drift_nu", "diffusion_x", "diffusion_nu", "cost_x",
                           "cost_nu", "terminal_grad", "grad_x_hamiltonian",
                           "grad_nu_hamiltonian"], 0.0)
    for _ in range(n_samples):
        x = rng.standard_normal((1, n))
        nu = rng.standard_normal((1, m))
        y = rng.standard_normal((1, n))
        z = rng.standard_normal((1, n, d))
        checks = {
            "drift_x": (spec.drift_x(x, nu), _central_jacobian(lambda a: spec.drift(a, nu), x, h)),
            "drift_nu": (spec.drift_nu(x, nu),
                         _central_jacobian(lambda a: spec.drift(x, a), nu, h)),
            "diffusion_x": (spec.diffusion_x(x, nu),
                            _central_jacobian(lambda a: spec.diffusion(a, nu), x, h)),
            "diffusion_nu": (spec.diffusion_nu(x, nu),
                             _central_jacobian(lambda a: spec.diffusion(x, a), nu, h)),
            "cost_x": (spec.cost_x(x, nu),
                       _central_jacobian(lambda a: spec.running_cost(a, nu), x, h)),
            "cost_nu": (spec.cost_nu(x, nu),
                        _central_jacobian(lambda a: spec.running_cost(x, a), nu, h)),
            "terminal_grad": (spec.terminal_grad(x),
                              _central_jacobian(spec.terminal_cost, x, h)),
            "grad_x_hamiltonian": (
                grad_x_hamiltonian(spec, x, nu, y, z),
                _central_jacobian(lambda a: hamiltonian(spec, a, nu, y, z), x, h)),
            "grad_nu_hamiltonian": (
                grad_nu_hamiltonian(spec, x, nu, y, z),
                _central_jacobian(lambda a: hamiltonian(spec, x, a, y, z), nu, h)),
        }
        for name, (analytic, numeric) in checks.items():
            worst[name] = max(worst[name], _rel_err(analytic, numeric))
    failures = [k for k, v in worst.items() if not v <= tol]
    return SelfTestReport(worst, tol, failures)
