"""Command-line drivers: ``simulate``, ``adjoint``, ``verify`` and ``optimize``.

Every command is a deterministic function of the configuration file plus
command-line overrides. The exit status is 0 exactly when every check the
command runs passes, 1 when a check fails and 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adjoint import solve_bsee, solve_bsee_lq_explicit
from .config import ConfigError, ScenarioConfig
from .forward import ControlProcess, integrate_forward
from .galerkin import GalerkinSpace, NoiseEnsemble, TimeGrid, sample_noise
from .hamiltonian import evaluate_cost
from .io import write_csv, write_json, write_manifest
from .optimizer import (MUTATIONS, ProjectedGradientSMP, make_probes, solve_lq_analytic,
                        verify_maximum_principle)
from .problem import Box, LqSpec, ProblemSpec, Unconstrained
from .regression import RegressionBasis
from .scenarios import build
from .variational import PassBands, VariationalHarness

log = logging.getLogger("smpsee")


@dataclass
class Setup:
    config: ScenarioConfig
    spec: ProblemSpec
    space: GalerkinSpace
    grid: TimeGrid
    noise: NoiseEnsemble
    basis: RegressionBasis
    workers: int

    @property
    def linear_lq(self) -> bool:
        return (isinstance(self.spec, LqSpec) and self.spec.rho is not None
                and isinstance(self.spec.admissible, Unconstrained))


def make_setup(cfg: ScenarioConfig, workers: int = 1) -> Setup:
    kwargs = {"zero_terminal": cfg.zero_terminal}
    for key in ("n_state", "n_control", "n_noise"):
        if getattr(cfg, key):
            kwargs[key] = getattr(cfg, key)
    spec, space = build(cfg.scenario, **kwargs)
    if cfg.box_lo:
        m = space.n_control
        lo, hi = (np.broadcast_to(np.asarray(v, dtype=float), (m,)) if len(v) in (1, m) else None
                  for v in (cfg.box_lo, cfg.box_hi))
        if lo is None or hi is None:
            raise ConfigError(f"box bounds need 1 or {m} entries")
        try:
            spec = spec.with_admissible(Box(lo, hi))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    grid = TimeGrid(cfg.horizon, cfg.n_steps)
    noise = sample_noise(space, grid, cfg.n_paths, cfg.seed, n_workers=workers)
    if cfg.noise_scale != 1.0:
        noise = noise.scaled(cfg.noise_scale)
    basis = RegressionBasis(cfg.degree, list(cfg.active_modes) or None)
    return Setup(cfg, spec, space, grid, noise, basis, workers)


def _optimizer(s: Setup) -> ProjectedGradientSMP:
    c = s.config
    return ProjectedGradientSMP(step_size=c.step_size, max_iters=c.max_iters, grad_tol=c.grad_tol,
                                armijo=c.armijo, armijo_factor=c.armijo_factor,
                                armijo_slope=c.armijo_slope, degree=c.degree,
                                active_modes=list(c.active_modes) or None, n_workers=s.workers)


def _bands(c: ScenarioConfig) -> PassBands:
    return PassBands(slope_lo=c.slope_lo, slope_hi=c.slope_hi, decay_factor=c.decay_factor,
                     n_sigma=c.n_sigma, monotone_sigma=c.monotone_sigma,
                     expansion_factor=c.expansion_factor, inequality_factor=c.inequality_factor)


def _state_cols(prefix, n):
    return [f"{prefix}_{k + 1}" for k in range(n)]


def _starting_control(s: Setup) -> ControlProcess:
    zero = np.zeros((s.grid.n_steps, s.space.n_control))
    return ControlProcess(s.spec.admissible.project(zero))


# -- commands ------------------------------------------------------------------------

def cmd_simulate(s: Setup, out: Path) -> int:
    control = _starting_control(s)
    ens = integrate_forward(s.spec, s.space, s.grid, control, s.noise, s.workers)
    t = s.grid.points
    rows = ([p, i, t[i], *ens.states[p, i]] for p in range(ens.n_paths)
            for i in range(s.grid.n_steps + 1))
    path = write_csv(out / "states.csv", ["path", "step", "t", *_state_cols("x", s.space.n_state)],
                     rows)
    write_manifest(out, "simulate", s.config, [path])
    return 0


def _rel_dev(a, b):
    scale = float(np.max(np.abs(b))) if b.size else 0.0
    diff = float(np.max(np.abs(a - b))) if a.size else 0.0
    return diff / scale if scale > 0 else diff


def cmd_adjoint(s: Setup, out: Path) -> int:
    control = _starting_control(s)
    ens = integrate_forward(s.spec, s.space, s.grid, control, s.noise, s.workers)
    adj = solve_bsee(s.spec, s.space, s.grid, ens, control, s.basis, estimate_noise_floor=True)
    explicit = (solve_bsee_lq_explicit(s.spec, s.space, s.grid, ens, s.basis)
                if isinstance(s.spec, LqSpec) else None)
    n, d, N = s.space.n_state, s.space.n_noise, s.grid.n_steps
    t = s.grid.points
    n_csv = s.config.adjoint_csv_paths or ens.n_paths
    z_cols = [f"z_{k + 1}_{j + 1}" for k in range(n) for j in range(d)]

    def adj_rows():
        for p in range(min(n_csv, ens.n_paths)):
            for i in range(N + 1):
                z = adj.Z[p, i].ravel() if i < N else [None] * (n * d)
                yield [p, i, t[i], *adj.Y[p, i], *z]

    outputs = [write_csv(out / "adjoint.csv", ["path", "step", "t", *_state_cols("y", n), *z_cols],
                         adj_rows())]
    analytic = None
    if isinstance(s.spec, LqSpec) and s.spec.rho is not None:
        analytic = np.stack([s.space.semigroup(s.grid.horizon - ti) * s.spec.rho for ti in t])
    dev_rows, worst = [], 0.0
    for i in range(N + 1):
        row = [i, t[i]]
        row.append(_rel_dev(adj.Y[:, i], explicit.Y[:, i]) if explicit is not None else None)
        if analytic is not None:
            dev = _rel_dev(adj.Y[:, i], analytic[i][None])
            worst = max(worst, dev)
            row.append(dev)
        else:
            row.append(None)
        row.append(float(np.max(np.abs(adj.Z[:, i]))) if i < N else None)
        row.append(float(np.max(np.abs(explicit.Z[:, i]))) if explicit is not None and i < N
                   else None)
        dev_rows.append(row)
    outputs.append(write_csv(out / "adjoint_deviation.csv",
                             ["step", "t", "y_rel_dev_explicit", "y_rel_dev_analytic",
                              "z_max", "z_max_explicit"], dev_rows))
    checks = {}
    if analytic is not None:
        checks["y_matches_analytic"] = worst <= 1e-6
        checks["z_within_noise_floor"] = adj.z_max <= adj.noise_floor
    report = {"noise_floor": adj.noise_floor, "z_max": adj.z_max,
              "z_exceeds_floor": adj.z_max > adj.noise_floor,
              "y_max_rel_dev_analytic": worst if analytic is not None else None,
              "regression_degrees": [d_ for d_ in adj.degrees],
              "checks": checks, "passed": all(checks.values())}
    outputs.append(write_json(out / "noise_floor.json", report))
    write_manifest(out, "adjoint", s.config, outputs)
    return 0 if report["passed"] else 1


def perturbation_direction(s: Setup, star: ControlProcess) -> ControlProcess:
    """``a cos(pi j t)`` in coordinate ``j``, clipped so that ``nu* + nu`` stays in ``U``."""
    t = s.grid.points[:-1]
    j = np.arange(1, s.space.n_control + 1)
    raw = s.config.direction_amplitude * np.cos(np.pi * np.outer(t, j))
    base = star.values[0]
    return ControlProcess(s.spec.admissible.project(base + raw) - base)


def _cert_tol(s: Setup, cost: float) -> float:
    scale = abs(solve_lq_analytic(s.spec, s.space, s.grid)[1]) if s.linear_lq else abs(cost)
    return s.config.certificate_tol * max(scale, 1e-12)


def _certificate(s: Setup, est, mutate=None):
    it = est.iterate_
    probes = make_probes(s.spec, s.grid, it.control, s.config.n_probes, s.config.seed)
    return verify_maximum_principle(
        s.spec, s.space, s.grid, it.states, it.control, it.adjoint, probes,
        _cert_tol(s, it.cost), n_sigma=s.config.n_sigma, mutate=mutate, trace=est.trace_,
        seed=s.config.seed, config=s.config.to_dict())


def cmd_verify(s: Setup, out: Path, mutate: str | None = None) -> int:
    est = _optimizer(s).fit(s.spec, s.space, s.grid, s.noise, _starting_control(s))
    it = est.iterate_
    direction = perturbation_direction(s, it.control)
    harness = VariationalHarness(s.spec, s.space, s.grid, it.control, direction, s.noise,
                                 s.config.epsilons, _bands(s.config), s.workers)
    residual = est.trace_[-1]["grad_norm"]
    reports = {
        "rate": harness.rate(),
        "eta": harness.eta(),
        "variational_equation": harness.expansion(),
        "duality": harness.duality(it.adjoint, harness.duality_budget(s.basis), mutate=mutate),
        "variational_inequality": harness.inequality(
            it.adjoint, optimality_residual=residual,
            residual_tol=10 * s.config.grad_tol),
    }
    outputs = [write_json(out / f"{name}.json", r.to_dict()) for name, r in reports.items()]
    outputs.append(write_csv(out / "rate.csv", ["epsilon", "value", "std_error"],
                             ([r["epsilon"], r["value"], r["std_error"]]
                              for r in reports["rate"].rows())))
    cert = _certificate(s, est, mutate)
    outputs.append(write_json(out / "certificate.json", cert.to_dict()))
    summary = [[name, r.passed] for name, r in reports.items()]
    summary.append(["maximum_principle", cert.passed])
    outputs.append(write_csv(out / "summary.csv", ["check", "passed"], summary))
    write_manifest(out, "verify", s.config, outputs, {"mutate": mutate})
    for name, ok in summary:
        log.info("%-24s %s", name, "PASS" if ok else "FAIL")
    return 0 if all(ok for _, ok in summary) else 1


def lq_comparison(s: Setup, control: ControlProcess, mutate: str | None = None) -> dict:
    """Control error against the closed form, and the cost test with its time-step budget."""
    star, j_star = solve_lq_analytic(s.spec, s.space, s.grid,
                                     mutate="published-sign" if mutate == "published-sign"
                                     else None)
    diff = control.values[0] - star.values[0]
    norm = float(np.linalg.norm(star.values[0]))
    rel = float(np.linalg.norm(diff)) / norm if norm > 0 else float(np.linalg.norm(diff))
    ens = integrate_forward(s.spec, s.space, s.grid, control, s.noise, s.workers)
    j_mc, se = evaluate_cost(s.spec, s.grid, ens, control)
    fine_grid = s.grid.refine()
    coarse_star = integrate_forward(s.spec, s.space, s.grid, star, s.noise, s.workers)
    fine_star = integrate_forward(s.spec, s.space, fine_grid, star.refine(), s.noise.refine(),
                                  s.workers)
    budget = abs(evaluate_cost(s.spec, s.grid, coarse_star, star)[0]
                 - evaluate_cost(s.spec, fine_grid, fine_star, star.refine())[0])
    threshold = s.config.n_sigma * se + budget
    return {"star": star, "rel_l2_error": rel, "control_passed": rel <= 0.05,
            "J_star": j_star, "J_mc": j_mc, "J_mc_se": se, "budget": budget,
            "cost_gap": abs(j_mc - j_star), "threshold": threshold,
            "cost_passed": abs(j_mc - j_star) <= threshold, "mutate": mutate}


def cmd_optimize(s: Setup, out: Path, mutate: str | None = None) -> int:
    est = _optimizer(s).fit(s.spec, s.space, s.grid, s.noise, _starting_control(s))
    t = s.grid.points[:-1]
    m = s.space.n_control
    keys = ["iter", "cost", "cost_se", "cost_cv", "grad_norm", "step_size", "accepted",
            "backtracks"]
    outputs = [write_csv(out / "trace.csv", keys, ([r[k] for k in keys] for r in est.trace_)),
               write_csv(out / "control.csv", ["step", "t", *_state_cols("nu", m)],
                         ([i, t[i], *est.control_.values[0, i]] for i in range(s.grid.n_steps)))]
    cert = _certificate(s, est, None if mutate == "published-sign" else mutate)
    outputs.append(write_json(out / "certificate.json", cert.to_dict()))
    ok = cert.passed
    if s.linear_lq:
        cmp_ = lq_comparison(s, est.control_, mutate)
        star = cmp_.pop("star").values[0]
        outputs.append(write_csv(
            out / "analytic_comparison.csv",
            ["step", "t", *_state_cols("nu", m), *_state_cols("nu_analytic", m), "abs_err"],
            ([i, t[i], *est.control_.values[0, i], *star[i],
              float(np.linalg.norm(est.control_.values[0, i] - star[i]))]
             for i in range(s.grid.n_steps))))
        outputs.append(write_json(out / "analytic_comparison.json", cmp_))
        ok = ok and cmp_["control_passed"] and cmp_["cost_passed"]
    write_manifest(out, "optimize", s.config, outputs, {"mutate": mutate})
    log.info("optimizer: %d iterations, converged=%s, certificate %s", est.n_iter_,
             est.converged_, "PASS" if cert.passed else "FAIL")
    return 0 if ok else 1


COMMANDS = {"simulate": cmd_simulate, "adjoint": cmd_adjoint, "verify": cmd_verify,
            "optimize": cmd_optimize}


def _epsilons(text: str):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smpsee", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, help="key = value configuration file")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--epsilons", type=_epsilons, help="comma-separated perturbation ladder")
    parser.add_argument("--mutate", choices=MUTATIONS, help="fault injection")
    parser.add_argument("--paths", type=int, help="Monte Carlo paths")
    parser.add_argument("--steps", type=int, help="time steps")
    parser.add_argument("--max-iters", type=int, help="optimizer iteration cap")
    parser.add_argument("--workers", type=int, default=1,
                        help="threads for path-parallel work (does not change results)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ScenarioConfig.from_file(args.config) if args.config else ScenarioConfig()
        cfg = cfg.override(seed=args.seed, epsilons=args.epsilons, n_paths=args.paths,
                           n_steps=args.steps, max_iters=args.max_iters)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        setup = make_setup(cfg, args.workers)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    args.out.mkdir(parents=True, exist_ok=True)
    fn = COMMANDS[args.command]
    if args.command in ("verify", "optimize"):
        return fn(setup, args.out, args.mutate)
    return fn(setup, args.out)


if __name__ == "__main__":
    sys.exit(main())
