"""Truncated Karhunen-Loeve expansion of a log-coefficient field.

The field lives on element centers. Its basis is the leading eigenvectors of
the squared-exponential Gram matrix, by default scaled by the square root of
their eigenvalues so that a standard-normal coefficient vector gives a field
whose covariance is the truncated kernel.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from abris.errors import InputError, NumericalError

_MAX_EXPONENT = 700.0


class FieldOverflowWarning(RuntimeWarning):
    """The log-field exceeded the representable range and was clamped."""


@dataclass(frozen=True)
class FieldExpansion:
    """Discretized eigenbasis of the SE kernel.

    Attributes:
        centers (np.ndarray): Evaluation points (n_points, dim).
        eigenvalues (np.ndarray): Leading eigenvalues, descending.
        eigenvectors (np.ndarray): Orthonormal eigenvectors (n_points, n_terms).
        length_scale (float): Kernel length scale.
        scaled (bool): Scale basis columns by the root eigenvalue.
    """

    centers: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    length_scale: float
    scaled: bool = True

    @property
    def n_terms(self):
        return self.eigenvalues.size

    @property
    def basis(self):
        if self.scaled:
            return self.eigenvectors * np.sqrt(self.eigenvalues)
        return self.eigenvectors


def se_gram(centers, length_scale):
    """``exp(-|x_a - x_b|^2 / (2 l^2))`` over all pairs of rows of ``centers``."""
    d2 = cdist(centers, centers, "sqeuclidean")
    return np.exp(-d2 / (2.0 * length_scale**2))


def se_kernel_basis(centers, length_scale=0.3, n_kkl=20, scaled=True):
    """Leading ``n_kkl`` eigenpairs of the SE Gram matrix at ``centers``."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if not 1 <= n_kkl <= centers.shape[0]:
        raise InputError(f"n_kkl must be between 1 and {centers.shape[0]}, got {n_kkl}")
    gram = se_gram(centers, length_scale)
    try:
        vals, vecs = np.linalg.eigh(gram)
    except np.linalg.LinAlgError as err:
        raise NumericalError("eigendecomposition of the Gram matrix failed") from err
    order = np.argsort(vals)[::-1][:n_kkl]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    # fix the sign so the largest-magnitude entry of each column is positive
    pivot = vecs[np.argmax(np.abs(vecs), axis=0), np.arange(n_kkl)]
    vecs = vecs * np.where(pivot < 0, -1.0, 1.0)
    return FieldExpansion(centers, vals, vecs, float(length_scale), scaled)


def field_from_theta(expansion, theta):
    """Elementwise ``zeta = exp(basis @ theta)``; accepts (n_terms,) or (n, n_terms)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != expansion.n_terms:
        raise InputError(f"expected {expansion.n_terms} coefficients, got {theta.shape[-1]}")
    log_field = theta @ expansion.basis.T
    if np.any(np.abs(log_field) > _MAX_EXPONENT):
        warnings.warn("log-field clamped to +-700", FieldOverflowWarning, stacklevel=2)
        log_field = np.clip(log_field, -_MAX_EXPONENT, _MAX_EXPONENT)
    return np.exp(log_field)
