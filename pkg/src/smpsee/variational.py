"""Variational process and empirical checks of the first-order perturbation estimates.

Every check in this module works on a ladder of perturbation sizes that all
share one noise ensemble (common random numbers), so differences between
rungs measure the perturbation and not sampling noise.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .adjoint import AdjointPair, solve_bsee
from .forward import ControlProcess, StateEnsemble, _run_chunks, integrate_forward
from .galerkin import GalerkinSpace, NoiseEnsemble, TimeGrid
from .hamiltonian import apply_jacobian, hamiltonian, mean_and_se, pathwise_cost
from .problem import LqSpec, ProblemSpec

DEFAULT_EPSILONS = (0.2, 0.1, 0.05, 0.025)


@dataclass(frozen=True)
class PassBands:
    """Acceptance bands of the harness; all overridable from configuration."""

    slope_lo: float = 1.8
    slope_hi: float = 2.2
    decay_factor: float = 0.1
    n_sigma: float = 3.0
    monotone_sigma: float = 2.0
    exact_floor: float = 1e-10
    expansion_factor: float = 0.1
    inequality_factor: float = 0.1


@dataclass(frozen=True, eq=False)
class VariationalEnsemble:
    p: np.ndarray = field(repr=False)
    direction: ControlProcess = field(repr=False)
    star: StateEnsemble = field(repr=False)
    star_control: ControlProcess = field(repr=False)


@dataclass
class RateReport:
    name: str
    epsilons: list
    values: list
    std_errors: list
    slope: float | None
    intercept: float | None
    passed: bool
    criterion: str
    note: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def rows(self) -> list[dict]:
        return [{"epsilon": e, "value": v, "std_error": s, "slope": self.slope,
                 "pass": self.passed}
                for e, v, s in zip(self.epsilons, self.values, self.std_errors)]


@dataclass
class CheckReport:
    name: str
    passed: bool
    details: dict
    note: str = ""

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def integrate_variational(spec: ProblemSpec, space: GalerkinSpace, grid: TimeGrid,
                          star: StateEnsemble, star_control: ControlProcess,
                          direction: ControlProcess, noise: NoiseEnsemble | None = None,
                          n_workers: int = 1) -> VariationalEnsemble:
    """Linearised state ``p`` driven by ``direction`` along the star trajectory.

    ``p_{i+1} = S(dt) [p_i + dt (b_x p_i + b_nu nu_i) + (sigma_x p_i + sigma_nu nu_i) dW_i]``
    with all derivatives at ``(X*_i, nu*_i)`` and ``p_0 = 0``.
    """
    noise = star.noise if noise is None else noise
    if noise.fingerprint != star.noise.fingerprint:
        raise AssertionError("variational process must reuse the star ensemble's noise")
    if direction.n_steps != grid.n_steps or direction.n_control != space.n_control:
        raise ValueError("direction does not match grid/control dimensions")
    S = space.semigroup(grid.dt)
    dt = grid.dt
    X = star.states

    def chunk(idx):
        dW = noise.increments[idx]
        star_c, dir_c = star_control.paths(idx), direction.paths(idx)
        p = np.zeros((idx.size, grid.n_steps + 1, space.n_state))
        for i in range(grid.n_steps):
            x, nu, v, pi = X[idx, i], star_c.at(i, idx.size), dir_c.at(i, idx.size), p[:, i]
            drift = (apply_jacobian(spec.drift_x(x, nu), pi)
                     + apply_jacobian(spec.drift_nu(x, nu), v))
            diff = (apply_jacobian(spec.diffusion_x(x, nu), pi)
                    + apply_jacobian(spec.diffusion_nu(x, nu), v))
            p[:, i + 1] = S * (pi + dt * drift + apply_jacobian(diff, dW[:, i]))
        return p

    p = _run_chunks(chunk, noise.n_paths, n_workers)
    return VariationalEnsemble(p, direction, star, star_control)


def _sup_mean_sq(diff):
    """``sup_i mean_paths |diff_i|^2`` and the standard error at the maximising step."""
    sq = np.sum(diff**2, axis=-1)
    i = int(np.argmax(sq.mean(axis=0)))
    m, se = mean_and_se(sq[:, i])
    return m, se, i


def _fit_slope(eps, vals):
    if np.any(np.asarray(vals) <= 0):
        return None, None
    slope, intercept = np.polyfit(np.log(eps), np.log(vals), 1)
    return float(slope), float(intercept)


class VariationalHarness:
    """Star trajectory, variational process and perturbed trajectories on one noise ensemble.

    Parameters
    ----------
    star_control, direction : ControlProcess
        ``nu*`` and ``nu``; ``nu* + nu`` must be admissible.
    epsilons : sequence of float
        Decreasing ladder in ``(0, 1]`` with at least four rungs.
    """

    def __init__(self, spec: ProblemSpec, space: GalerkinSpace, grid: TimeGrid,
                 star_control: ControlProcess, direction: ControlProcess,
                 noise: NoiseEnsemble, epsilons=DEFAULT_EPSILONS,
                 bands: PassBands | None = None, n_workers: int = 1):
        eps = np.asarray(epsilons, dtype=float)
        if eps.size < 4:
            raise ValueError("an epsilon ladder needs at least 4 points")
        if np.any(np.diff(eps) >= 0) or eps[-1] <= 0 or eps[0] > 1:
            raise ValueError("epsilons must be strictly decreasing within (0, 1]")
        if not (star_control + direction).is_admissible(spec):
            raise ValueError("nu* + nu is not admissible")
        self.spec, self.space, self.grid = spec, space, grid
        self.star_control, self.direction = star_control, direction
        self.noise = noise
        self.epsilons = eps
        self.bands = bands or PassBands()
        self.n_workers = n_workers
        self.star = integrate_forward(spec, space, grid, star_control, noise, n_workers)
        self.variational = integrate_variational(spec, space, grid, self.star, star_control,
                                                 direction, noise, n_workers)
        self._perturbed: dict[float, StateEnsemble] = {}

    @property
    def p(self) -> np.ndarray:
        return self.variational.p

    def control(self, eps: float) -> ControlProcess:
        return self.star_control + self.direction.scale(eps)

    def perturbed(self, eps: float) -> StateEnsemble:
        if eps not in self._perturbed:
            ens = integrate_forward(self.spec, self.space, self.grid, self.control(eps),
                                    self.noise, self.n_workers)
            if ens.noise.fingerprint != self.star.noise.fingerprint:
                raise AssertionError("common random numbers violated")
            self._perturbed[eps] = ens
        return self._perturbed[eps]

    @property
    def exact_linear(self) -> bool:
        return isinstance(self.spec, LqSpec)

    # -- O(eps^2) state perturbation ------------------------------------------------

    def rate(self) -> RateReport:
        b = self.bands
        vals, ses = [], []
        for e in self.epsilons:
            m, se, _ = _sup_mean_sq(self.perturbed(e).states - self.star.states)
            vals.append(m)
            ses.append(se)
        crit = f"slope in [{b.slope_lo}, {b.slope_hi}]"
        if all(v == 0 for v in vals):
            return RateReport("rate_O_eps2", list(self.epsilons), vals, ses, None, None, True,
                              crit, note="all differences are zero; trivially satisfied")
        slope, icpt = _fit_slope(self.epsilons, vals)
        ok = slope is not None and b.slope_lo <= slope <= b.slope_hi
        return RateReport("rate_O_eps2", list(self.epsilons), vals, ses, slope, icpt, ok, crit)

    # -- eta_eps -> 0 -----------------------------------------------------------------

    def eta(self) -> RateReport:
        b = self.bands
        vals, ses = [], []
        for e in self.epsilons:
            eta = (self.perturbed(e).states - self.star.states) / e - self.p
            m, se, _ = _sup_mean_sq(eta)
            vals.append(m)
            ses.append(se)
        slope, icpt = _fit_slope(self.epsilons, vals)
        if all(v == 0 for v in vals):
            return RateReport("eta_vanishes", list(self.epsilons), vals, ses, None, None, True,
                              "eta identically zero", note="trivially satisfied")
        if self.exact_linear:
            scale = max(_sup_mean_sq(self.star.states)[0], np.finfo(float).tiny)
            floor = b.exact_floor * scale
            ok = all(v <= floor for v in vals)
            return RateReport("eta_vanishes", list(self.epsilons), vals, ses, slope, icpt, ok,
                              f"e(eps) <= {b.exact_floor:g} x state scale ({floor:.3e})",
                              note="linear dynamics: eta vanishes up to rounding",
                              extra={"floor": floor})
        steps_ok = [vals[k + 1] <= vals[k] + b.monotone_sigma * np.hypot(ses[k], ses[k + 1])
                    for k in range(len(vals) - 1)]
        decay_ok = vals[-1] <= b.decay_factor * vals[0]
        return RateReport("eta_vanishes", list(self.epsilons), vals, ses, slope, icpt,
                          all(steps_ok) and decay_ok,
                          f"nonincreasing within {b.monotone_sigma:g} sigma and "
                          f"e(eps_min) <= {b.decay_factor:g} e(eps_max)",
                          extra={"steps_ok": steps_ok, "decay_ok": decay_ok})

    # -- first-order expansion of the cost ----------------------------------------

    def _linear_coefficient(self) -> np.ndarray:
        """Per-path ``phi_x(X*_T) p_T + int l_x(X*, nu*) p dt``."""
        spec, X, p, dt = self.spec, self.star.states, self.p, self.grid.dt
        P = X.shape[0]
        lin = np.einsum("pk,pk->p", spec.terminal_grad(X[:, -1]), p[:, -1])
        for i in range(self.grid.n_steps):
            lin += dt * np.einsum("pk,pk->p", spec.cost_x(X[:, i], self.star_control.at(i, P)),
                                  p[:, i])
        return lin

    def _cost_shift(self, eps: float) -> np.ndarray:
        """Per-path ``int l(X*, nu_eps) - l(X*, nu*) dt``, two evaluations of ``l``."""
        spec, X, dt = self.spec, self.star.states, self.grid.dt
        P, ctrl = X.shape[0], self.control(eps)
        out = np.zeros(P)
        for i in range(self.grid.n_steps):
            out += dt * (spec.running_cost(X[:, i], ctrl.at(i, P))
                         - spec.running_cost(X[:, i], self.star_control.at(i, P)))
        return out

    def expansion(self) -> RateReport:
        b = self.bands
        spec, grid = self.spec, self.grid
        j_star = pathwise_cost(spec, grid, self.star, self.star_control)
        lin = self._linear_coefficient()
        coef = abs(float(lin.mean()))
        rems, ses = [], []
        for e in self.epsilons:
            j_eps = pathwise_cost(spec, grid, self.perturbed(e), self.control(e))
            rem = (j_eps - j_star) - e * lin - self._cost_shift(e)
            m, se = mean_and_se(rem)
            rems.append(abs(m))
            ses.append(se)
        eps = self.epsilons
        vals = [r / e for r, e in zip(rems, eps)]
        val_se = [s / e for s, e in zip(ses, eps)]
        slope, icpt = _fit_slope(eps, rems)
        extra = {"linear_coefficient": coef, "remainders": rems,
                 "cost_star": float(j_star.mean())}
        floor = b.exact_floor * max(coef, abs(float(j_star.mean())), 1.0)
        if all(r <= floor for r in rems):
            return RateReport("variational_equation", list(eps), vals, val_se, slope, icpt, True,
                              f"remainder at floating-point floor ({floor:.1e})",
                              note="expansion exact up to rounding", extra=extra)
        decreasing = all(vals[k + 1] < vals[k] for k in range(len(vals) - 1))
        small = vals[-1] <= b.expansion_factor * coef + b.n_sigma * val_se[-1]
        extra.update(decreasing=decreasing, small=small)
        return RateReport("variational_equation", list(eps), vals, val_se, slope, icpt,
                          decreasing and small,
                          f"r/eps decreasing and r(eps_min)/eps_min <= "
                          f"{b.expansion_factor:g} |linear| + {b.n_sigma:g} sigma", extra=extra)

    # -- duality between p and the adjoint -------------------------------------------

    def duality_gap(self, adjoint: AdjointPair, *, drop_sigma_nu: bool = False):
        """Per-path ``<Y_T, p_T>`` and the quadrature of the three right-hand terms."""
        spec, X, p, dt = self.spec, self.star.states, self.p, self.grid.dt
        P = X.shape[0]
        lhs = np.einsum("pk,pk->p", adjoint.Y[:, -1], p[:, -1])
        rhs = np.zeros(P)
        for i in range(self.grid.n_steps):
            x, nu, v = X[:, i], self.star_control.at(i, P), self.direction.at(i, P)
            rhs -= dt * np.einsum("pk,pk->p", spec.cost_x(x, nu), p[:, i])
            rhs += dt * np.einsum("pk,pk->p", apply_jacobian(spec.drift_nu(x, nu), v),
                                  adjoint.Y[:, i])
            if not drop_sigma_nu:
                rhs += dt * np.einsum("pkd,pkd->p", apply_jacobian(spec.diffusion_nu(x, nu), v),
                                      adjoint.Z[:, i])
        return lhs, rhs

    def duality(self, adjoint: AdjointPair, budget: float = 0.0, *,
                mutate: str | None = None) -> CheckReport:
        """``|E<Y_T, p_T> - RHS| <= n_sigma * se + budget``.

        ``se`` is the paired standard error of the per-path difference.
        """
        b = self.bands
        lhs, rhs = self.duality_gap(adjoint, drop_sigma_nu=(mutate == "drop-sigma-nu-term"))
        gap, se = mean_and_se(lhs - rhs)
        l_mean, l_se = mean_and_se(lhs)
        r_mean, r_se = mean_and_se(rhs)
        ok = abs(gap) <= b.n_sigma * se + budget
        return CheckReport("duality", bool(ok), {
            "lhs": l_mean, "rhs": r_mean, "lhs_se": l_se, "rhs_se": r_se, "gap": gap,
            "paired_se": se, "budget": budget, "threshold": b.n_sigma * se + budget,
            "mutate": mutate})

    def duality_budget(self, basis=None, seed: int | None = None) -> float:
        """``|gap(N) - gap(2N)|`` with the fine ensemble bridged from this one."""
        coarse = solve_bsee(self.spec, self.space, self.grid, self.star, self.star_control, basis)
        lhs, rhs = self.duality_gap(coarse)
        fine = VariationalHarness(self.spec, self.space, self.grid.refine(),
                                  self.star_control.refine(), self.direction.refine(),
                                  self.noise.refine(seed), self.epsilons, self.bands,
                                  self.n_workers)
        adj = solve_bsee(self.spec, self.space, fine.grid, fine.star, fine.star_control, basis)
        lhs_f, rhs_f = fine.duality_gap(adj)
        return abs(float(np.mean(lhs - rhs)) - float(np.mean(lhs_f - rhs_f)))

    # -- variational inequality at an optimum ------------------------------------

    def inequality(self, adjoint: AdjointPair, *, optimality_residual: float | None = None,
                   residual_tol: float | None = None) -> CheckReport:
        """LHS(eps) >= -(factor * eps * scale + n_sigma * se) for every rung."""
        b = self.bands
        if (optimality_residual is not None and residual_tol is not None
                and optimality_residual > residual_tol):
            warnings.warn(f"star control optimality residual {optimality_residual:.3e} exceeds "
                          f"{residual_tol:.3e}; the inequality presumes an optimal control",
                          RuntimeWarning, stacklevel=2)
        spec, X, p, dt = self.spec, self.star.states, self.p, self.grid.dt
        P, N = X.shape[0], self.grid.n_steps
        terminal = np.einsum("pk,pk->p", adjoint.Y[:, -1], p[:, -1])
        running = np.zeros(P)
        for i in range(N):
            running += dt * np.einsum("pk,pk->p", spec.cost_x(X[:, i], self.star_control.at(i, P)),
                                      p[:, i])
        scale = abs(float(terminal.mean())) + abs(float(running.mean()))
        lhs_means, lhs_ses, thresholds = [], [], []
        for e in self.epsilons:
            ctrl = self.control(e)
            shift = np.zeros(P)
            for i in range(N):
                x, y, z = X[:, i], adjoint.Y[:, i], adjoint.Z[:, i]
                nu_s, nu_e = self.star_control.at(i, P), ctrl.at(i, P)
                d_h = hamiltonian(spec, x, nu_e, y, z) - hamiltonian(spec, x, nu_s, y, z)
                d_b = spec.drift(x, nu_e) - spec.drift(x, nu_s)
                d_s = spec.diffusion(x, nu_e) - spec.diffusion(x, nu_s)
                shift += dt * (d_h - np.einsum("pk,pk->p", d_b, y)
                               - np.einsum("pkd,pkd->p", d_s, z))
            m, se = mean_and_se(e * terminal + e * running + shift)
            lhs_means.append(m)
            lhs_ses.append(se)
            thresholds.append(-(b.inequality_factor * e * scale + b.n_sigma * se))
        ok = all(m >= t for m, t in zip(lhs_means, thresholds))
        return CheckReport("variational_inequality", bool(ok), {
            "epsilons": list(self.epsilons), "lhs": lhs_means, "lhs_se": lhs_ses,
            "thresholds": thresholds, "scale": scale,
            "optimality_residual": optimality_residual})


# -- functional entry points ------------------------------------------------------------

def check_rate_o_eps2(spec, space, grid, star_control, direction, noise,
                      epsilons=DEFAULT_EPSILONS, bands=None) -> RateReport:
    return VariationalHarness(spec, space, grid, star_control, direction, noise,
                              epsilons, bands).rate()


def check_eta_vanishes(spec, space, grid, star_control, direction, noise,
                       epsilons=DEFAULT_EPSILONS, bands=None) -> RateReport:
    return VariationalHarness(spec, space, grid, star_control, direction, noise,
                              epsilons, bands).eta()


def check_variational_equation(spec, space, grid, star_control, direction, noise,
                               epsilons=DEFAULT_EPSILONS, bands=None) -> RateReport:
    return VariationalHarness(spec, space, grid, star_control, direction, noise,
                              epsilons, bands).expansion()


def check_duality(spec, space, grid, star_control, adjoint, direction, noise,
                  budget: float = 0.0, bands=None, mutate=None) -> CheckReport:
    return VariationalHarness(spec, space, grid, star_control, direction, noise,
                              bands=bands).duality(adjoint, budget, mutate=mutate)


def check_variational_inequality(spec, space, grid, star_control, adjoint, direction, noise,
                                 epsilons=DEFAULT_EPSILONS, bands=None,
                                 **kwargs) -> CheckReport:
    return VariationalHarness(spec, space, grid, star_control, direction, noise,
                              epsilons, bands).inequality(adjoint, **kwargs)
