"""Stochastic maximum principle toolkit for spectrally truncated stochastic evolution equations."""

__version__ = "0.1.0"

from .adjoint import AdjointPair, solve_bsee, solve_bsee_lq_explicit
from .forward import ControlProcess, NonFiniteStateError, StateEnsemble, integrate_forward
from .galerkin import GalerkinSpace, NoiseEnsemble, TimeGrid, sample_noise, semigroup_apply
from .hamiltonian import (evaluate_cost, grad_nu_hamiltonian, grad_x_hamiltonian, hamiltonian,
                          pathwise_cost)
from .optimizer import (OptimalityCertificate, OptimizerConfig, ProjectedGradientSMP,
                        smp_gradient_step, solve_lq_analytic, verify_maximum_principle)
from .problem import Box, LqSpec, ProblemSpec, Unconstrained, derivative_selftest, make_lq_spec
from .regression import RegressionBasis
from .variational import PassBands, VariationalHarness

__all__ = [
    "AdjointPair", "Box", "ControlProcess", "GalerkinSpace", "LqSpec", "NoiseEnsemble",
    "NonFiniteStateError", "OptimalityCertificate", "OptimizerConfig", "PassBands",
    "ProblemSpec", "ProjectedGradientSMP", "RegressionBasis", "StateEnsemble", "TimeGrid",
    "Unconstrained", "VariationalHarness", "derivative_selftest", "evaluate_cost",
    "grad_nu_hamiltonian", "grad_x_hamiltonian", "hamiltonian", "integrate_forward",
    "make_lq_spec", "pathwise_cost", "sample_noise", "semigroup_apply", "smp_gradient_step",
    "solve_bsee", "solve_bsee_lq_explicit", "solve_lq_analytic", "verify_maximum_principle",
]
