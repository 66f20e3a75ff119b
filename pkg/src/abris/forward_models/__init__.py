"""Benchmark forward models and parameter transforms."""

from abris.forward_models.fem import PoissonMesh, assemble_stiffness, poisson_solve
from abris.forward_models.gaussian import GaussianTarget, gaussian_target_logjoint
from abris.forward_models.kkl import FieldExpansion, field_from_theta, se_kernel_basis
from abris.forward_models.poisson import (
    PoissonProblem,
    generate_observations,
    ground_truth_field,
    poisson_logjoint,
)
from abris.forward_models.transforms import BoundTransform, discrete_transform, tanh_transform
