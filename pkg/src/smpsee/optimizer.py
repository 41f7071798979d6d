"""Projected-gradient search on the Hamiltonian gradient and the maximum-principle certificate."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import quad
from sklearn.base import BaseEstimator

from .adjoint import AdjointPair, solve_bsee
from .forward import ControlProcess, StateEnsemble, integrate_forward
from .galerkin import GalerkinSpace, NoiseEnsemble, TimeGrid
from .hamiltonian import apply_jacobian, grad_nu_hamiltonian, mean_and_se, pathwise_cost
from .problem import Box, LqSpec, ProblemSpec, Unconstrained
from .regression import RegressionBasis

log = logging.getLogger(__name__)

MUTATIONS = ("drop-sigma-nu-term", "flip-adjoint-sign", "published-sign")


@dataclass(frozen=True)
class OptimizerConfig:
    step_size: float = 0.1
    max_iters: int = 200
    grad_tol: float = 1e-6
    armijo: bool = False
    armijo_factor: float = 0.5
    armijo_slope: float = 1e-4
    max_backtracks: int = 12
    noise_sigma: float = 3.0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if not 0 < self.armijo_factor < 1:
            raise ValueError("armijo_factor must lie in (0, 1)")
        if not 0 < self.armijo_slope < 1:
            raise ValueError("armijo_slope must lie in (0, 1)")
        if self.max_backtracks < 0:
            raise ValueError("max_backtracks must be nonnegative")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


@dataclass(frozen=True, eq=False)
class Iterate:
    """Everything evaluated at one control on the fixed noise ensemble."""

    control: ControlProcess
    states: StateEnsemble
    adjoint: AdjointPair
    cost: float
    cost_se: float
    cost_cv: float
    cost_cv_se: float
    grad: np.ndarray = field(repr=False)
    cv_paths: np.ndarray = field(repr=False, default=None)


@dataclass(frozen=True, eq=False)
class StepDiagnostics:
    cost: float
    cost_se: float
    cost_cv: float
    grad_norm: float
    step_size: float
    accepted: bool
    backtracks: int
    new_cost_cv: float
    next: Iterate = field(repr=False)


def _l2_inner(a, b, dt):
    return float(np.mean(np.sum(a * b, axis=(1, 2))) * dt)


def hamiltonian_gradient(spec: ProblemSpec, states: StateEnsemble, control: ControlProcess,
                         adjoint: AdjointPair, *, mutate: str | None = None) -> np.ndarray:
    """Per-path ``grad_nu H`` on each interval, shape ``(P, N, m)``.

    The costate paired with the control on ``[t_i, t_{i+1})`` is
    ``E[S*(dt) Y_{i+1} | F_i]``, which makes this the exact gradient of the
    discretised expected cost.
    """
    X = states.states
    P, N = X.shape[0], control.n_steps
    sign = -1.0 if mutate == "flip-adjoint-sign" else 1.0
    g = np.empty((P, N, control.n_control))
    for i in range(N):
        g[:, i] = grad_nu_hamiltonian(spec, X[:, i], control.at(i, P),
                                      sign * adjoint.costate[:, i], sign * adjoint.Z[:, i],
                                      include_diffusion=(mutate != "drop-sigma-nu-term"))
    return g


def _control_variate(spec, states, control, adjoint):
    """``sum_i <costate_i, sigma(X_i, nu_i) dW_i>``: zero mean, tracks the cost noise."""
    X, dW = states.states, states.noise.increments
    P = X.shape[0]
    out = np.zeros(P)
    for i in range(control.n_steps):
        sig_dw = apply_jacobian(spec.diffusion(X[:, i], control.at(i, P)), dW[:, i])
        out += np.einsum("pk,pk->p", adjoint.costate[:, i], sig_dw)
    return out


def evaluate_iterate(spec: ProblemSpec, space: GalerkinSpace, grid: TimeGrid,
                     control: ControlProcess, noise: NoiseEnsemble,
                     basis: RegressionBasis | None = None, n_workers: int = 1) -> Iterate:
    states = integrate_forward(spec, space, grid, control, noise, n_workers)
    adjoint = solve_bsee(spec, space, grid, states, control, basis)
    costs = pathwise_cost(spec, grid, states, control)
    cost, cost_se = mean_and_se(costs)
    cv_paths = costs - _control_variate(spec, states, control, adjoint)
    cv, cv_se = mean_and_se(cv_paths)
    g = hamiltonian_gradient(spec, states, control, adjoint)
    if control.deterministic:
        g = g.mean(axis=0, keepdims=True)
    return Iterate(control, states, adjoint, cost, cost_se, cv, cv_se, g, cv_paths)


def projected_gradient(spec: ProblemSpec, control: ControlProcess, grad, step_size: float):
    """``(nu - Pi_U(nu - gamma g)) / gamma``; equals ``g`` when ``U`` is the whole space."""
    nu = control.values
    return (nu - spec.admissible.project(nu - step_size * grad)) / step_size


def _grad_norm(spec, grid, it: Iterate, step_size):
    pg = projected_gradient(spec, it.control, it.grad, step_size)
    return float(np.sqrt(_l2_inner(pg, pg, grid.dt)))


def smp_gradient_step(spec: ProblemSpec, space: GalerkinSpace, grid: TimeGrid,
                      control: ControlProcess, noise: NoiseEnsemble,
                      basis: RegressionBasis | None = None,
                      config: OptimizerConfig | None = None, *,
                      step_size: float | None = None, current: Iterate | None = None,
                      n_workers: int = 1) -> tuple[ControlProcess, StepDiagnostics]:
    """One projected step ``nu <- Pi_U(nu - gamma g)`` with optional Armijo backtracking.

    Sufficient decrease is tested on the control-variate cost, with slack of
    ``noise_sigma`` paired standard errors of the per-path cost change: the
    regressed gradient and the sampled cost agree only up to Monte Carlo
    error. If backtracking runs out the control is returned unchanged with
    ``accepted=False``.
    """
    config = config or OptimizerConfig()
    gamma = config.step_size if step_size is None else step_size
    if not control.is_admissible(spec, atol=1e-9):
        raise ValueError("current control is not admissible")
    cur = current if current is not None else evaluate_iterate(
        spec, space, grid, control, noise, basis, n_workers)
    norm = _grad_norm(spec, grid, cur, config.step_size)
    slope = config.armijo_slope if config.armijo else 0.0
    tries = config.max_backtracks + 1 if config.armijo else 1
    for k in range(tries):
        cand_vals = spec.admissible.project(cur.control.values - gamma * cur.grad)
        cand = ControlProcess(cand_vals)
        nxt = evaluate_iterate(spec, space, grid, cand, noise, basis, n_workers)
        slack = config.noise_sigma * mean_and_se(nxt.cv_paths - cur.cv_paths)[1]
        bound = (cur.cost_cv + slack
                 + slope * _l2_inner(cur.grad, cand_vals - cur.control.values, grid.dt))
        if not config.armijo or nxt.cost_cv <= bound + 1e-14 * max(1.0, abs(cur.cost_cv)):
            return cand, StepDiagnostics(cur.cost, cur.cost_se, cur.cost_cv, norm, gamma, True,
                                         k, nxt.cost_cv, nxt)
        gamma *= config.armijo_factor
    log.info("step rejected after %d backtracks (cost %.6g -> %.6g)", tries - 1,
             cur.cost_cv, nxt.cost_cv)
    return cur.control, StepDiagnostics(cur.cost, cur.cost_se, cur.cost_cv, norm, gamma, False,
                                        tries - 1, nxt.cost_cv, cur)


class ProjectedGradientSMP(BaseEstimator):
    """Open-loop projected-gradient descent driven by the adjoint equation.

    ``fit`` leaves ``control_``, ``trace_``, ``n_iter_``, ``converged_`` and
    ``iterate_`` (states, adjoint and costs at ``control_``).
    """

    def __init__(self, step_size=0.1, max_iters=200, grad_tol=1e-6, armijo=False,
                 armijo_factor=0.5, armijo_slope=1e-4, max_backtracks=12, noise_sigma=3.0,
                 degree=2,
                 active_modes=None, n_workers=1):
        self.step_size = step_size
        self.max_iters = max_iters
        self.grad_tol = grad_tol
        self.armijo = armijo
        self.armijo_factor = armijo_factor
        self.armijo_slope = armijo_slope
        self.max_backtracks = max_backtracks
        self.noise_sigma = noise_sigma
        self.degree = degree
        self.active_modes = active_modes
        self.n_workers = n_workers

    def config(self) -> OptimizerConfig:
        return OptimizerConfig(self.step_size, self.max_iters, self.grad_tol, self.armijo,
                               self.armijo_factor, self.armijo_slope, self.max_backtracks,
                               self.noise_sigma)

    def fit(self, spec: ProblemSpec, space: GalerkinSpace, grid: TimeGrid,
            noise: NoiseEnsemble, control0: ControlProcess | None = None):
        cfg = self.config()
        basis = RegressionBasis(self.degree, self.active_modes)
        control = control0 if control0 is not None else ControlProcess.zeros(
            grid, space.n_control)
        if not control.deterministic:
            raise ValueError("the search runs over deterministic (open-loop) controls")
        if not control.is_admissible(spec, atol=1e-9):
            control = ControlProcess(spec.admissible.project(control.values))
        it = evaluate_iterate(spec, space, grid, control, noise, basis, self.n_workers)
        gamma, trace, converged, k = cfg.step_size, [], False, 0
        for k in range(cfg.max_iters + 1):
            norm = _grad_norm(spec, grid, it, cfg.step_size)
            row = {"iter": k, "cost": it.cost, "cost_se": it.cost_se, "cost_cv": it.cost_cv,
                   "grad_norm": norm, "step_size": gamma, "accepted": True, "backtracks": 0}
            trace.append(row)
            if norm <= cfg.grad_tol:
                converged = True
                break
            if k == cfg.max_iters:
                break
            _, diag = smp_gradient_step(spec, space, grid, it.control, noise, basis, cfg,
                                        step_size=gamma, current=it, n_workers=self.n_workers)
            row["backtracks"] = diag.backtracks
            if diag.accepted:
                it = diag.next
                gamma = min(cfg.step_size, diag.step_size / cfg.armijo_factor)
            else:
                row["accepted"] = False
                gamma *= 0.5
                log.info("iteration %d: step rejected, step size halved to %.3g", k, gamma)
        self.control_ = it.control
        self.iterate_ = it
        self.trace_ = trace
        self.n_iter_ = k
        self.converged_ = converged
        return self


def lq_adjoint_direction(lq: LqSpec, space: GalerkinSpace, grid: TimeGrid, rho=None):
    """``B* S*(T - t_i) rho`` on the left grid points, shape ``(N, m)``."""
    rho = lq.rho if rho is None else rho
    t = grid.points[:-1]
    return np.stack([lq.B.T @ (space.semigroup(grid.horizon - s) * rho) for s in t])


def solve_lq_analytic(lq: LqSpec, space: GalerkinSpace, grid: TimeGrid, *,
                      mutate: str | None = None) -> tuple[ControlProcess, float]:
    """Minimiser ``-B* S*(T - t) rho / 2`` and its cost.

    ``J* = <rho, S(T) x0> - (1/4) int |B* S*(T-s) rho|^2``.

    ``mutate="published-sign"`` returns ``+B* S*(T - t) rho / 2`` with its own
    cost ``<rho, S(T) x0> + (3/4) int |...|^2``, for fault-injection runs.
    """
    if not isinstance(lq, LqSpec) or lq.rho is None:
        raise ValueError("closed form needs a linear-quadratic problem with linear terminal cost")
    if not isinstance(lq.admissible, Unconstrained):
        raise ValueError("closed form holds only for an unconstrained control set")
    T, lam = grid.horizon, space.eigenvalues

    def sq(s):
        v = lq.B.T @ (np.exp(lam * (T - s)) * lq.rho)
        return float(v @ v)

    integral, _ = quad(sq, 0.0, T, epsabs=1e-14, epsrel=1e-13, limit=200)
    base = float(lq.rho @ (space.semigroup(T) * lq.x0))
    g = lq_adjoint_direction(lq, space, grid)
    if mutate == "published-sign":
        return ControlProcess(0.5 * g), base + 0.75 * integral
    return ControlProcess(-0.5 * g), base - 0.25 * integral


def make_probes(spec: ProblemSpec, grid: TimeGrid, star: ControlProcess, n_random: int = 100,
                seed: int = 0, scale: float = 1.0) -> np.ndarray:
    """Probe controls ``(K, N, m)``: random points of ``U``, box vertices, coordinate moves."""
    rng = np.random.default_rng(seed)
    centre = star.values.mean(axis=0)
    N, m = centre.shape
    U = spec.admissible
    probes = []
    if isinstance(U, Box):
        probes.append(rng.uniform(U.lo, U.hi, size=(n_random, N, m)))
        if m <= 8:
            probes.append(np.broadcast_to(U.vertices()[:, None, :], (2 ** m, N, m)))
        delta = 0.1 * np.where(U.hi > U.lo, U.hi - U.lo, 0.0)
    else:
        probes.append(centre + scale * rng.standard_normal((n_random, N, m)))
        delta = np.full(m, scale)
    moves = np.concatenate([np.diag(delta), -np.diag(delta)])
    probes.append(U.project(centre[None] + moves[:, None, :]))
    return np.concatenate(probes, axis=0)


@dataclass
class OptimalityCertificate:
    passed: bool
    tol: float
    n_sigma: float
    max_value: float
    max_value_se: float
    grad_l2_norm: float | None
    n_probes: int
    offending: list
    cost: float
    cost_se: float
    grad_norms: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    seed: int | None = None
    config: dict = field(default_factory=dict)
    mutate: str | None = None

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self), default=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def verify_maximum_principle(spec: ProblemSpec, space: GalerkinSpace, grid: TimeGrid,
                             states: StateEnsemble, control: ControlProcess,
                             adjoint: AdjointPair, probes, tol: float, *, n_sigma: float = 3.0,
                             mutate: str | None = None, trace=None, seed: int | None = None,
                             config: dict | None = None,
                             max_offending: int = 20) -> OptimalityCertificate:
    """Check ``E<grad_nu H, nu*(t_i) - nu> <= tol + n_sigma * se`` for every probe and time."""
    probes = np.asarray(probes, dtype=float)
    if probes.ndim == 2:
        probes = probes[None]
    P, N = states.n_paths, grid.n_steps
    g = hamiltonian_gradient(spec, states, control, adjoint, mutate=mutate)
    g_mean = g.mean(axis=0)
    star = control.values
    if control.deterministic:
        diff = star[0][None] - probes                                  # (K, N, m)
        vals = np.einsum("im,kim->ki", g_mean, diff)
        centred = g - g_mean
        cov = np.einsum("pia,pib->iab", centred, centred) / max(P - 1, 1)
        var = np.einsum("kia,iab,kib->ki", diff, cov, diff)
        ses = np.sqrt(np.maximum(var, 0.0) / P)
    else:
        vals = np.empty((len(probes), N))
        ses = np.empty_like(vals)
        for k, pr in enumerate(probes):
            inner = np.einsum("pim,pim->pi", g, star - pr)
            vals[k] = inner.mean(axis=0)
            ses[k] = inner.std(axis=0, ddof=1) / np.sqrt(P) if P > 1 else 0.0
    excess = vals - (tol + n_sigma * ses)
    bad = np.argwhere(excess > 0)
    order = np.argsort(-excess[bad[:, 0], bad[:, 1]]) if len(bad) else []
    t = grid.points
    offending = [{"t": float(t[bad[j, 1]]), "step": int(bad[j, 1]), "probe": int(bad[j, 0]),
                  "value": float(vals[tuple(bad[j])]), "se": float(ses[tuple(bad[j])])}
                 for j in list(order)[:max_offending]]
    grad_l2 = None
    passed = len(bad) == 0
    if isinstance(spec.admissible, Unconstrained):
        grad_l2 = float(np.sqrt(np.sum(g_mean ** 2) * grid.dt))
        passed = passed and grad_l2 <= tol
    kmax = np.unravel_index(np.argmax(vals), vals.shape) if vals.size else None
    costs = pathwise_cost(spec, grid, states, control)
    cost, cost_se = mean_and_se(costs)
    trace = list(trace or [])
    return OptimalityCertificate(
        passed=bool(passed), tol=float(tol), n_sigma=float(n_sigma),
        max_value=float(vals[kmax]) if kmax is not None else 0.0,
        max_value_se=float(ses[kmax]) if kmax is not None else 0.0,
        grad_l2_norm=grad_l2, n_probes=int(len(probes)), offending=offending,
        cost=cost, cost_se=cost_se, grad_norms=[r["grad_norm"] for r in trace],
        trace=trace, seed=seed, config=dict(config or {}), mutate=mutate)
