"""Acceptance criteria 1-9; each test records one PASS/FAIL line for the terminal summary."""

import numpy as np
import pytest

from _acceptance import record
from _helpers import cosine_direction
from smpsee.adjoint import solve_bsee
from smpsee.cli import main
from smpsee.forward import ControlProcess, integrate_forward
from smpsee.galerkin import TimeGrid, sample_noise
from smpsee.hamiltonian import evaluate_cost
from smpsee.optimizer import (evaluate_iterate, make_probes, solve_lq_analytic,
                              verify_maximum_principle)
from smpsee.problem import derivative_selftest
from smpsee.regression import RegressionBasis, cross_validated_se
from smpsee.scenarios import SCENARIOS, build
from smpsee.variational import VariationalHarness

EPS = (0.2, 0.1, 0.05, 0.025)


def _harness(name, n_paths, seed=11, n_steps=20):
    spec, space = build(name, n_state=4)
    grid = TimeGrid(1.0, n_steps)
    star = ControlProcess.constant(grid, -0.3 * np.ones(4))
    noise = sample_noise(space, grid, n_paths, seed=seed)
    return VariationalHarness(spec, space, grid, star, cosine_direction(grid, 4), noise, EPS)


def test_criterion_1_lq_optimum(lq_run):
    r = lq_run
    spec, space, grid, noise, est = r["spec"], r["space"], r["grid"], r["noise"], r["est"]
    star, j_star = solve_lq_analytic(spec, space, grid)
    rel = (est.control_ - star).l2_norm(grid) / star.l2_norm(grid)
    j_mc, se = evaluate_cost(spec, grid, est.iterate_.states, est.control_)
    fine = grid.refine()
    j_n = evaluate_cost(spec, grid, integrate_forward(spec, space, grid, star, noise), star)[0]
    j_2n = evaluate_cost(spec, fine, integrate_forward(spec, space, fine, star.refine(),
                                                       noise.refine()), star.refine())[0]
    budget = abs(j_n - j_2n)
    ok = rel <= 0.05 and abs(j_mc - j_star) <= 3 * se + budget and r["seconds"] <= 60
    record(1, ok, f"rel L2 err {rel:.2e}; |J_mc - J*| = {abs(j_mc - j_star):.2e} <= "
                  f"{3 * se + budget:.2e}; {r['seconds']:.1f} s; {est.n_iter_} iterations")
    assert ok


def test_criterion_2_certificate(lq_run, quad_run):
    def certify(run, control, mutate=None):
        spec, space, grid = run["spec"], run["space"], run["grid"]
        it = evaluate_iterate(spec, space, grid, control, run["noise"], RegressionBasis())
        probes = make_probes(spec, grid, control, n_random=100, seed=0)
        tol = 1e-3 * abs(it.cost if run is quad_run else solve_lq_analytic(spec, space, grid)[1])
        return verify_maximum_principle(spec, space, grid, it.states, control, it.adjoint,
                                        probes, tol, mutate=mutate)

    lq, quad = lq_run, quad_run
    at_opt = certify(lq, lq["est"].control_)
    at_zero = certify(lq, ControlProcess.zeros(lq["grid"], 8))
    flipped = certify(lq, lq["est"].control_, mutate="flip-adjoint-sign")
    published = certify(lq, solve_lq_analytic(lq["spec"], lq["space"], lq["grid"],
                                              mutate="published-sign")[0])
    quad_ok = certify(quad, quad["est"].control_)
    quad_drop = certify(quad, quad["est"].control_, mutate="drop-sigma-nu-term")
    ok = (at_opt.passed and not at_zero.passed and not flipped.passed and not published.passed
          and quad_ok.passed and not quad_drop.passed)
    record(2, ok, f"optimum max {at_opt.max_value:.1e} (tol {at_opt.tol:.1e}) pass; "
                  f"nu=0, flip-sign, published-sign, drop-sigma-nu all "
                  f"{'fail' if ok else 'MISMATCH'}")
    assert ok


def test_criterion_3_rate():
    tanh = _harness("tanh-drift", 1000).rate()
    lin = _harness("lq-linear-phi", 1000).rate()
    ok = tanh.passed and lin.slope is not None and abs(lin.slope - 2) <= 1e-3
    record(3, ok, f"tanh slope {tanh.slope:.3f} in [1.8, 2.2]; lq slope {lin.slope:.6f}")
    assert ok


def test_criterion_4_eta():
    tanh = _harness("tanh-drift", 1000).eta()
    lin = _harness("lq-linear-phi", 1000).eta()
    quad = _harness("lq-quadratic-phi", 1000).eta()
    ok = tanh.passed and lin.passed and quad.passed
    record(4, ok, f"tanh e(0.025)/e(0.2) = {tanh.values[-1] / tanh.values[0]:.3f}; "
                  f"lq max e = {max(lin.values + quad.values):.1e}")
    assert ok


def test_criterion_5_expansion():
    reports = {name: _harness(name, 1000).expansion()
               for name in ("tanh-drift", "lq-linear-phi")}
    ok = all(r.passed for r in reports.values())
    tanh = reports["tanh-drift"]
    record(5, ok, f"tanh r/eps {tanh.values[0]:.2e} -> {tanh.values[-1]:.2e} "
                  f"(|linear| {tanh.extra['linear_coefficient']:.2e}); lq: "
                  f"{reports['lq-linear-phi'].note or reports['lq-linear-phi'].criterion}")
    assert ok


def test_criterion_6_duality():
    parts, ok = [], True
    for name in ("tanh-drift", "lq-linear-phi"):
        h = _harness(name, 10_000)
        adj = solve_bsee(h.spec, h.space, h.grid, h.star, h.star_control)
        budget = h.duality_budget()
        good = h.duality(adj, budget)
        bad = h.duality(adj, budget, mutate="drop-sigma-nu-term")
        ok &= good.passed
        if name == "tanh-drift":
            ok &= not bad.passed
        parts.append(f"{name} gap {good.details['gap']:.1e} <= {good.details['threshold']:.1e}, "
                     f"mutant gap {bad.details['gap']:.1e}")
    record(6, ok, "; ".join(parts))
    assert ok


def test_criterion_7_adjoint():
    spec, space = build("lq-linear-phi", n_state=8)
    grid = TimeGrid(1.0, 50)
    control = ControlProcess.constant(grid, 0.1 * np.ones(8))
    ens = integrate_forward(spec, space, grid, control, sample_noise(space, grid, 2000, seed=5))
    adj = solve_bsee(spec, space, grid, ens, control, estimate_noise_floor=True)
    worst = max(np.max(np.abs(adj.Y[:, i] - space.semigroup(1 - t) * spec.rho))
                / np.max(np.abs(space.semigroup(1 - t) * spec.rho))
                for i, t in enumerate(grid.points))
    # nonzero Z: the quadratic-terminal adjoint with an independent cross-validation
    qspec, qspace = build("lq-quadratic-phi", n_state=4)
    qgrid = TimeGrid(1.0, 20)
    qctrl = ControlProcess.constant(qgrid, [0.5, -0.3, 0.2, 0.1])
    qens = integrate_forward(qspec, qspace, qgrid, qctrl, sample_noise(qspace, qgrid, 2000, 5))
    qadj = solve_bsee(qspec, qspace, qgrid, qens, qctrl, estimate_noise_floor=True)
    S, dt, basis = qspace.semigroup(qgrid.dt), qgrid.dt, RegressionBasis()
    cv = max(cross_validated_se(qens.states[:, i],
                                ((S * qadj.Y[:, i + 1] - qadj.costate[:, i])[:, :, None]
                                 * qens.noise.increments[:, i][:, None, :]), basis) / dt
             for i in range(qgrid.n_steps))
    ok = (worst <= 1e-6 and adj.noise_floor is not None and adj.z_max <= adj.noise_floor
          and qadj.noise_floor is not None and qadj.noise_floor <= 3 * cv * (1 + 1e-9))
    record(7, ok, f"max rel Y err {worst:.1e}; lq z_max {adj.z_max:.1e} <= floor "
                  f"{adj.noise_floor:.1e}; quadratic floor {qadj.noise_floor:.3f}, 3 x CV error "
                  f"{3 * cv:.3f}")
    assert ok


def test_criterion_8_derivatives():
    reports = {name: derivative_selftest(build(name)[0], n_samples=100, seed=1)
               for name in SCENARIOS}
    ok = all(r.passed for r in reports.values())
    worst = max(max(r.errors.values()) for r in reports.values())
    record(8, ok, f"worst relative error {worst:.1e} over {len(reports)} scenarios")
    assert ok


@pytest.mark.filterwarnings("ignore:star control optimality residual")
def test_criterion_9_reproducibility(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("scenario = tanh-drift\nn_state = 3\nn_steps = 10\nn_paths = 200\n"
                   "max_iters = 10\n")
    ok, detail = True, []
    for command in ("simulate", "adjoint", "optimize", "verify"):
        runs = []
        for tag, workers in (("a", 1), ("b", 1), ("c", 4)):
            out = tmp_path / f"{command}-{tag}"
            main([command, "--config", str(cfg), "--out", str(out), "--workers", str(workers)])
            runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        same = runs[0] == runs[1] == runs[2] and len(runs[0]) > 1
        ok &= same
        detail.append(f"{command} {'identical' if same else 'DIFFERS'}")
    record(9, ok, "; ".join(detail) + " (runs x2, workers 1 and 4)")
    assert ok
