"""Analytic Gaussian target for density-matching studies."""

import numpy as np

from abris.errors import InputError

_LOG_2PI = np.log(2.0 * np.pi)


class GaussianTarget:
    """Normalized diagonal Gaussian used directly as the log-joint.

    Attributes:
        mean (np.ndarray): Target mean.
        cov_diag (np.ndarray): Diagonal of the target covariance.
    """

    def __init__(self, mean, cov_diag):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.cov_diag = np.broadcast_to(np.asarray(cov_diag, dtype=float), self.mean.shape).copy()
        if np.any(~(self.cov_diag > 0.0)):
            raise InputError("target variances must be positive")

    @classmethod
    def standard_match(cls, dim, variance=0.1):
        """Zero-mean isotropic target with the given variance."""
        return cls(np.zeros(dim), np.full(dim, variance))

    @property
    def dim(self):
        return self.mean.size

    def logjoint(self, theta):
        """Log-density at a point (d,) -> float, or at rows of (n, d) -> (n,)."""
        x = np.asarray(theta, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.dim:
            raise InputError(f"expected dimension {self.dim}, got {x.shape[1]}")
        r = x - self.mean
        out = -0.5 * (np.sum(r * r / self.cov_diag, axis=1) + np.sum(np.log(self.cov_diag)) + self.dim * _LOG_2PI)
        return float(out[0]) if single else out

    __call__ = logjoint

    def optimal_params(self):
        """Mean-field parameters ``(mean | log std)`` that match the target exactly."""
        return np.concatenate([self.mean, 0.5 * np.log(self.cov_diag)])


def gaussian_target_logjoint(theta, target):
    return target.logjoint(theta)
