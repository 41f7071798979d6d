from dataclasses import replace

import numpy as np
import pytest

from smpsee.forward import (ControlProcess, NonFiniteStateError, integrate_forward,
                            perturbed_pair)
from smpsee.galerkin import TimeGrid, replace_future, sample_noise
from smpsee.problem import Box
from smpsee.scenarios import build


@pytest.fixture
def lq():
    spec, space = build("lq-linear-phi", n_state=4)
    grid = TimeGrid(1.0, 20)
    return spec, space, grid


def _direct_sum(spec, space, grid, nu, dW):
    """``X_N = S(T) x0 + sum_i S(T - t_i) (dt B nu_i + D nu_i dW_i)`` path by path."""
    T, t = grid.horizon, grid.points
    out = np.tile(space.semigroup(T) * spec.x0, (dW.shape[0], 1))
    for i in range(grid.n_steps):
        kick = grid.dt * spec.B @ nu[i] + np.einsum("kdm,m,pd->pk", spec.D, nu[i], dW[:, i])
        out += space.semigroup(T - t[i]) * kick
    return out


def test_lq_terminal_state_matches_direct_sum(lq):
    spec, space, grid = lq
    rng = np.random.default_rng(0)
    nu = rng.normal(size=(grid.n_steps, 4))
    noise = sample_noise(space, grid, 50, seed=3)
    ens = integrate_forward(spec, space, grid, ControlProcess(nu), noise)
    np.testing.assert_allclose(ens.terminal, _direct_sum(spec, space, grid, nu, noise.increments),
                               rtol=1e-12, atol=1e-14)
    np.testing.assert_array_equal(ens.states[:, 0], np.tile(spec.x0, (50, 1)))


def test_zero_noise_paths_are_identical(lq):
    spec, space, grid = lq
    noise = sample_noise(space, grid, 7, seed=1).scaled(0.0)
    ens = integrate_forward(spec, space, grid, ControlProcess.constant(grid, np.ones(4)), noise)
    assert np.all(ens.states == ens.states[:1])


def test_uncontrolled_lq_is_pure_semigroup(lq):
    spec, space, grid = lq
    noise = sample_noise(space, grid, 3, seed=2)
    ens = integrate_forward(spec, space, grid, ControlProcess.zeros(grid, 4), noise)
    for i, t in enumerate(grid.points):
        np.testing.assert_allclose(ens.states[:, i], np.tile(space.semigroup(t) * spec.x0, (3, 1)),
                                   rtol=1e-13)


def test_mean_state_within_standard_error(lq):
    spec, space, grid = lq
    nu = np.full((grid.n_steps, 4), 0.7)
    noise = sample_noise(space, grid, 4000, seed=11)
    ens = integrate_forward(spec, space, grid, ControlProcess(nu), noise)
    zero = integrate_forward(spec, space, grid, ControlProcess(nu), noise.scaled(0.0))
    se = ens.terminal.std(axis=0, ddof=1) / np.sqrt(4000)
    assert np.all(np.abs(ens.terminal.mean(axis=0) - zero.terminal[0]) <= 4 * se + 1e-15)


def test_adaptedness_future_noise_does_not_change_past():
    spec, space = build("tanh-drift")
    grid = TimeGrid(1.0, 12)
    a = sample_noise(space, grid, 20, seed=0)
    b = replace_future(a, sample_noise(space, grid, 20, seed=1), 5)
    ctrl = ControlProcess.constant(grid, -0.2 * np.ones(4))
    xa = integrate_forward(spec, space, grid, ctrl, a).states
    xb = integrate_forward(spec, space, grid, ctrl, b).states
    np.testing.assert_array_equal(xa[:, :6], xb[:, :6])
    assert not np.allclose(xa[:, 7:], xb[:, 7:])


@pytest.mark.parametrize("workers", [2, 4])
def test_worker_count_does_not_change_states(workers):
    spec, space = build("tanh-drift")
    grid = TimeGrid(1.0, 10)
    noise = sample_noise(space, grid, 33, seed=4)
    ctrl = ControlProcess.constant(grid, 0.1 * np.ones(4))
    a = integrate_forward(spec, space, grid, ctrl, noise)
    b = integrate_forward(spec, space, grid, ctrl, noise, n_workers=workers)
    assert a.states.tobytes() == b.states.tobytes()


def test_random_control_per_path(lq):
    spec, space, grid = lq
    noise = sample_noise(space, grid, 6, seed=0)
    vals = np.random.default_rng(1).normal(size=(6, grid.n_steps, 4))
    ens = integrate_forward(spec, space, grid, ControlProcess(vals), noise)
    for p in range(6):
        single = integrate_forward(spec, space, grid, ControlProcess(vals[p]),
                                   sample_noise(space, grid, 6, seed=0))
        np.testing.assert_allclose(ens.states[p], single.states[p], rtol=1e-13)


def test_alignment_errors(lq):
    spec, space, grid = lq
    noise = sample_noise(space, grid, 4, seed=0)
    with pytest.raises(ValueError):
        integrate_forward(spec, space, grid, ControlProcess.zeros(TimeGrid(1.0, 5), 4), noise)
    with pytest.raises(ValueError):
        integrate_forward(spec, space, grid, ControlProcess.zeros(grid, 3), noise)
    with pytest.raises(ValueError):
        integrate_forward(spec, space, TimeGrid(2.0, 20), ControlProcess.zeros(grid, 4), noise)
    with pytest.raises(ValueError):
        integrate_forward(spec, space, grid, ControlProcess(np.zeros((3, 20, 4))), noise)


def test_nonfinite_state_is_reported():
    spec, space = build("lq-linear-phi", n_state=2)
    bad = replace(spec, drift=lambda x, nu: np.where(x > 0.3, np.inf, 0.0))
    grid = TimeGrid(1.0, 5)
    with pytest.raises(NonFiniteStateError) as info:
        integrate_forward(bad, space, grid, ControlProcess.zeros(grid, 2),
                          sample_noise(space, grid, 3, seed=0))
    assert info.value.step == 1


def test_control_process_helpers():
    grid = TimeGrid(1.0, 4)
    c = ControlProcess.constant(grid, [1.0, -2.0])
    assert c.deterministic and c.n_steps == 4 and c.n_control == 2
    assert c.at(0, 3).shape == (3, 2)
    assert c.refine(2).n_steps == 8
    np.testing.assert_allclose(c.l2_norm(grid), np.sqrt(5.0))
    np.testing.assert_array_equal((c - c.scale(0.5)).values, c.scale(0.5).values)
    with pytest.raises(ValueError):
        ControlProcess(np.zeros(3))
    with pytest.raises(ValueError):
        c.values[0, 0, 0] = 3.0


def test_perturbed_pair_checks():
    spec, space = build("lq-linear-phi", n_state=2)
    grid = TimeGrid(1.0, 4)
    noise = sample_noise(space, grid, 3, seed=0)
    star, direction = ControlProcess.zeros(grid, 2), ControlProcess.constant(grid, [1.0, 1.0])
    with pytest.raises(ValueError):
        perturbed_pair(spec, space, grid, star, direction, 1.5, noise)
    boxed = spec.with_admissible(Box([-0.5, -0.5], [0.5, 0.5]))
    with pytest.raises(ValueError, match="admissible"):
        perturbed_pair(boxed, space, grid, star, direction, 0.1, noise)
    a, b = perturbed_pair(spec, space, grid, star, direction, 0.0, noise)
    np.testing.assert_array_equal(a.states, b.states)
