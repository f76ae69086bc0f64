"""Gradient-field scaling limits on the discrete torus.

Gaussian free fields and gradient Gibbs measures on ``(Z / L^N Z)^d``, the
estimators that compare them with their continuum limits, and the scaled PDE
bounds behind the comparison.
"""
__version__ = "0.1.0"

from .errors import EllipticityError, EvenBaseError, GeometryError, SamplerDivergence, SupportOverflowError  # noqa: E402
from .lattice import ScalarField, TorusGeometry, VectorField, adjoint_divergence, gradient, inner_product  # noqa: E402
from .gaussian import Stiffness, assemble_symbol, greens_kernel, log_partition, sample_gff, solve  # noqa: E402
from .gibbs import Potential, hamiltonian, make_potential  # noqa: E402
from .mcmc import Ensemble, MCMCConfig, exact_ensemble, mcmc_sample  # noqa: E402
from .testfunctions import TestFunction, make_test_function  # noqa: E402
from .continuum import RdQuadrature, continuum_rd_covariance, continuum_torus_covariance  # noqa: E402
from .scaling import (  # noqa: E402
    ConvergenceTable,
    StudyConfig,
    covariance_study,
    discrete_quadratic_form,
    estimate_effective_stiffness,
    scaling_limit_study,
)
from .scaledpde import ScaledTorus, kernel_scaling_check, poincare_constant, scaled_solve, sup_bound_check  # noqa: E402
from .norms import RegulatorConfig, field_norm, large_field_regulator, tau  # noqa: E402
