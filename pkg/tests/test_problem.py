import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smpsee.problem import (UNCONSTRAINED, Box, LqSpec, derivative_selftest, make_lq_spec,
                            project_onto_U)
from smpsee.scenarios import SCENARIOS, build, benchmark_operators

finite = st.floats(-10, 10, allow_nan=False)


def test_box_projection_clips():
    box = Box([-1.0, 0.0], [1.0, 2.0])
    np.testing.assert_array_equal(box.project(np.array([3.0, -1.0])), [1.0, 0.0])
    assert box.contains(np.array([0.5, 1.0]))
    assert not box.contains(np.array([1.5, 1.0]))


def test_box_validation():
    with pytest.raises(ValueError):
        Box([1.0], [0.0])
    with pytest.raises(ValueError):
        Box([0.0, 0.0], [1.0])


def test_box_vertices():
    v = Box([0.0, -1.0], [1.0, 1.0]).vertices()
    assert v.shape == (4, 2)
    assert {tuple(r) for r in v} == {(0, -1), (0, 1), (1, -1), (1, 1)}


@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite))
def test_box_projection_is_nonexpansive_and_idempotent(a, b):
    box = Box([-1.0, 0.0, -2.0], [1.0, 0.5, 3.0])
    pa, pb = box.project(a), box.project(b)
    assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-12
    np.testing.assert_array_equal(box.project(pa), pa)
    assert box.contains(pa)


@given(arrays(float, 3, elements=finite))
def test_projection_variational_characterisation(a):
    """``<a - Pa, u - Pa> <= 0`` for every ``u`` in the set."""
    box = Box([-1.0, 0.0, -2.0], [1.0, 0.5, 3.0])
    pa = box.project(a)
    for u in box.vertices():
        assert np.dot(a - pa, u - pa) <= 1e-9


def test_unconstrained_projection_is_identity():
    x = np.array([1e6, -3.0])
    np.testing.assert_array_equal(UNCONSTRAINED.project(x), x)
    spec, _ = build("lq-linear-phi", n_state=2)
    np.testing.assert_array_equal(project_onto_U(spec, x), x)


def test_make_lq_spec_shapes():
    B, D = benchmark_operators(3, 2, 3)
    spec = make_lq_spec(B, D, x0=np.ones(3), rho=np.ones(3))
    assert isinstance(spec, LqSpec)
    assert (spec.n_state, spec.n_control, spec.n_noise) == (3, 2, 3)
    x, nu = np.ones((5, 3)), np.ones((5, 2))
    assert spec.drift(x, nu).shape == (5, 3)
    assert spec.diffusion(x, nu).shape == (5, 3, 3)
    assert spec.running_cost(x, nu).shape == (5,)
    np.testing.assert_allclose(spec.diffusion(x, nu), np.einsum("kdm,pm->pkd", D, nu))


def test_make_lq_spec_errors():
    B, D = benchmark_operators(3, 2, 3)
    with pytest.raises(ValueError):
        make_lq_spec(B, D[:, :, :1], x0=np.ones(3), rho=np.ones(3))
    with pytest.raises(ValueError):
        make_lq_spec(B, D, x0=np.ones(3))
    with pytest.raises(ValueError):
        make_lq_spec(B, D, x0=np.ones(3), rho=np.ones(2))


def test_benchmark_operators():
    B, D = benchmark_operators(3, 3, 3)
    np.testing.assert_array_equal(B, np.eye(3))
    # D nu = <nu, h> Q^{1/2} with h_j = 1/j, Q = diag(1/k^2)
    nu = np.array([1.0, 2.0, 3.0])
    dn = np.einsum("kdm,m->kd", D, nu)
    np.testing.assert_allclose(dn, np.dot(nu, [1, 1 / 2, 1 / 3]) * np.diag([1, 1 / 2, 1 / 3]))


@pytest.mark.parametrize("name", SCENARIOS)
def test_derivative_selftest_passes(name):
    spec, _ = build(name)
    report = derivative_selftest(spec, n_samples=100, seed=1)
    assert report.passed, report.failures
    assert set(report.errors) >= {"drift_x", "drift_nu", "diffusion_x", "diffusion_nu",
                                  "cost_x", "cost_nu", "terminal_grad"}


def test_derivative_selftest_catches_wrong_jacobian():
    spec, _ = build("tanh-drift")
    broken = replace(spec, diffusion_nu=lambda x, nu: 0.0 * spec.diffusion_nu(x, nu))
    report = derivative_selftest(broken, n_samples=20)
    assert not report.passed
    assert "diffusion_nu" in report.failures


def test_with_admissible_keeps_type():
    spec, _ = build("lq-linear-phi", n_state=2)
    boxed = spec.with_admissible(Box([-1, -1], [1, 1]))
    assert isinstance(boxed, LqSpec) and isinstance(boxed.admissible, Box)
    assert spec.admissible is UNCONSTRAINED
