"""Generalized Poisson calibration benchmark.

A log-coefficient field expanded in a truncated KL basis is calibrated from
noisy nodal observations on one face of the box.
"""

import numpy as np

from abris.errors import InputError
from abris.forward_models.fem import PoissonMesh, poisson_solve
from abris.forward_models.kkl import field_from_theta, se_kernel_basis

_LOG_2PI = np.log(2.0 * np.pi)

TRUTH_CENTER = np.array([0.0, 0.2, 0.2])


def ground_truth_field(mesh_or_points):
    """``20 exp(-4 |x - (0, 0.2, 0.2)|^2)`` at element centers (or at given points)."""
    if isinstance(mesh_or_points, PoissonMesh):
        x = mesh_or_points.element_centers
    else:
        x = np.atleast_2d(np.asarray(mesh_or_points, dtype=float))
    return 20.0 * np.exp(-4.0 * np.sum((x - TRUTH_CENTER) ** 2, axis=1))


def generate_observations(mesh, rng, relative_noise=1e-3):
    """Noisy face observations of the ground-truth solution.

    Returns:
        (y_obs, u_true): The noise standard deviation is ``relative_noise``
        times the mean of ``u_true``.
    """
    u_true = poisson_solve(mesh, ground_truth_field(mesh))
    y_obs = u_true + relative_noise * np.mean(u_true) * rng.standard_normal(u_true.size)
    return y_obs, u_true


def observation_variance(y_obs):
    """Per-node likelihood variance ``(0.01 |y| + 0.01)^2``."""
    return (1e-2 * np.abs(y_obs) + 1e-2) ** 2


class PoissonProblem:
    """Gaussian likelihood on face values with a standard-normal prior on theta.

    Attributes:
        mesh (PoissonMesh): Discretization.
        expansion (FieldExpansion): Field parameterization.
        y_obs (np.ndarray): Observations at the output nodes.
        noise_var (np.ndarray): Likelihood variances.
    """

    def __init__(self, mesh, expansion, y_obs):
        self.mesh = mesh
        self.expansion = expansion
        self.y_obs = np.asarray(y_obs, dtype=float)
        if self.y_obs.shape != mesh.output_nodes.shape:
            raise InputError(f"expected {mesh.output_nodes.size} observations, got {self.y_obs.shape}")
        self.noise_var = observation_variance(self.y_obs)
        self._log_norm = -0.5 * np.sum(np.log(self.noise_var) + _LOG_2PI)

    @classmethod
    def build(cls, rng, n_kkl=20, length_scale=0.3, scaled=True, mesh=None):
        mesh = mesh or PoissonMesh.default()
        expansion = se_kernel_basis(mesh.element_centers, length_scale, n_kkl, scaled)
        y_obs, _ = generate_observations(mesh, rng)
        return cls(mesh, expansion, y_obs)

    @property
    def dim(self):
        return self.expansion.n_terms

    def field(self, theta):
        return field_from_theta(self.expansion, theta)

    def forward(self, theta):
        return poisson_solve(self.mesh, self.field(theta))

    def log_likelihood_from_output(self, u):
        r = self.y_obs - u
        return self._log_norm - 0.5 * np.sum(r * r / self.noise_var)

    def log_likelihood(self, theta):
        return self.log_likelihood_from_output(self.forward(theta))

    @staticmethod
    def log_prior(theta):
        theta = np.asarray(theta, dtype=float)
        return -0.5 * (theta @ theta + theta.size * _LOG_2PI)

    def logjoint(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise InputError(f"expected a parameter vector of length {self.dim}")
        return self.log_likelihood(theta) + self.log_prior(theta)

    def __call__(self, thetas):
        """Log-joint for every row of ``thetas``."""
        return np.array([self.logjoint(t) for t in np.atleast_2d(thetas)])


def poisson_logjoint(theta, y_obs, problem):
    """``ln N(y_obs | M(theta), C) + ln N(theta | 0, I)`` with observations ``y_obs``."""
    if y_obs is not problem.y_obs:
        problem = PoissonProblem(problem.mesh, problem.expansion, y_obs)
    return problem.logjoint(theta)


def save_table(path, array):
    """Write a numeric table, one row per entity, full round-trip precision."""
    np.savetxt(path, np.atleast_1d(array), fmt="%.17g")


def load_table(path):
    return np.loadtxt(path)
