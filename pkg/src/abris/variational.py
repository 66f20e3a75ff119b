"""Variational distribution families.

Two families are provided, both parameterized by a flat real vector so that
optimizer state and logs have a stable layout:

* :class:`MeanFieldGaussian` with ``lam = (mu | log_sigma)``
* :class:`GaussianMixture` with ``lam = (logits | mu_1..mu_K | log_sigma_1..log_sigma_K)``

``log_sigma`` is the log standard deviation, so the covariance of a component
is ``diag(exp(2 * log_sigma))``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from abris.errors import InputError, UnsupportedFamilyError

_LOG_2PI = np.log(2.0 * np.pi)


def _as_samples(x, dim):
    """Return ``x`` as an (n, dim) array and whether it was a single point."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[np.newaxis, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise InputError(f"expected samples of dimension {dim}, got shape {np.shape(x)}")
    return x, single


class MeanFieldGaussian:
    """Diagonal Gaussian ``N(mu, diag(exp(2 * log_sigma)))``.

    Attributes:
        dim (int): Dimension of the latent variable.
    """

    name = "meanfield"

    def __init__(self, dim):
        if int(dim) < 1:
            raise InputError(f"dimension must be positive, got {dim}")
        self.dim = int(dim)

    def __repr__(self):
        return f"MeanFieldGaussian(dim={self.dim})"

    def __eq__(self, other):
        return isinstance(other, MeanFieldGaussian) and other.dim == self.dim

    def __hash__(self):
        return hash((self.name, self.dim))

    @property
    def n_params(self):
        return 2 * self.dim

    def split(self, lam):
        """Return ``(mu, log_sigma)`` views into ``lam``."""
        return lam[: self.dim], lam[self.dim :]

    def join(self, mu, log_sigma):
        return np.concatenate([np.ravel(mu), np.ravel(log_sigma)]).astype(float)

    def logpdf(self, lam, x):
        """Log-density at the rows of ``x`` (shape (n, dim)) -> (n,)."""
        mu, log_sigma = self.split(lam)
        z = (x - mu) * np.exp(-log_sigma)
        return -0.5 * np.sum(z * z, axis=1) - np.sum(log_sigma) - 0.5 * self.dim * _LOG_2PI

    def logpdf_many(self, lams, x):
        """Log-density of every row of ``x`` under every row of ``lams`` -> (n, J)."""
        lams = np.atleast_2d(lams)
        mu = lams[:, : self.dim]
        log_sigma = lams[:, self.dim :]
        z = (x[:, np.newaxis, :] - mu[np.newaxis]) * np.exp(-log_sigma)[np.newaxis]
        return (
            -0.5 * np.einsum("njd,njd->nj", z, z)
            - np.sum(log_sigma, axis=1)[np.newaxis]
            - 0.5 * self.dim * _LOG_2PI
        )

    def score(self, lam, x):
        """Gradient of the log-density w.r.t. ``lam`` at the rows of ``x`` -> (n, 2 dim)."""
        mu, log_sigma = self.split(lam)
        inv_var = np.exp(-2.0 * log_sigma)
        diff = x - mu
        return np.hstack([diff * inv_var, diff * diff * inv_var - 1.0])

    def draw(self, lam, n, rng):
        mu, log_sigma = self.split(lam)
        return mu + np.exp(log_sigma) * rng.standard_normal((n, self.dim))

    def fisher_information(self, lam):
        """Diagonal of the Fisher information matrix, length ``2 dim``."""
        _, log_sigma = self.split(lam)
        return np.concatenate([np.exp(-2.0 * log_sigma), np.full(self.dim, 2.0)])

    def initialize(self, rng, mu_range=(-0.1, 0.1), sigma_range=(0.2, 0.4)):
        """Random initial parameters.

        Means are uniform on ``mu_range``, log standard deviations uniform on
        ``[ln sigma_range[0], ln sigma_range[1]]``.
        """
        mu = rng.uniform(*mu_range, size=self.dim)
        log_sigma = rng.uniform(np.log(sigma_range[0]), np.log(sigma_range[1]), size=self.dim)
        return self.join(mu, log_sigma)


class GaussianMixture:
    """Mixture of ``K`` diagonal Gaussians with softmax weights.

    Attributes:
        dim (int): Dimension of the latent variable.
        n_components (int): Number of mixture components ``K``.
    """

    name = "gmm"

    def __init__(self, dim, n_components):
        if int(dim) < 1 or int(n_components) < 1:
            raise InputError("dimension and component count must be positive")
        self.dim = int(dim)
        self.n_components = int(n_components)

    def __repr__(self):
        return f"GaussianMixture(dim={self.dim}, n_components={self.n_components})"

    def __eq__(self, other):
        return (
            isinstance(other, GaussianMixture)
            and other.dim == self.dim
            and other.n_components == self.n_components
        )

    def __hash__(self):
        return hash((self.name, self.dim, self.n_components))

    @property
    def n_params(self):
        return self.n_components * (2 * self.dim + 1)

    def split(self, lam):
        """Return ``(logits (K,), mu (K, d), log_sigma (K, d))``."""
        k, d = self.n_components, self.dim
        logits = lam[:k]
        mu = lam[k : k + k * d].reshape(k, d)
        log_sigma = lam[k + k * d :].reshape(k, d)
        return logits, mu, log_sigma

    def join(self, logits, mu, log_sigma):
        return np.concatenate([np.ravel(logits), np.ravel(mu), np.ravel(log_sigma)]).astype(float)

    def weights(self, lam):
        return softmax(lam[: self.n_components])

    def _component_logpdf(self, lam, x):
        logits, mu, log_sigma = self.split(lam)
        z = (x[:, np.newaxis, :] - mu[np.newaxis]) * np.exp(-log_sigma)[np.newaxis]
        log_norm = -0.5 * np.einsum("nkd,nkd->nk", z, z) - np.sum(log_sigma, axis=1) - 0.5 * self.dim * _LOG_2PI
        log_w = logits - logsumexp(logits)
        return log_norm + log_w

    def logpdf(self, lam, x):
        return logsumexp(self._component_logpdf(lam, x), axis=1)

    def logpdf_many(self, lams, x):
        lams = np.atleast_2d(lams)
        return np.stack([self.logpdf(lam, x) for lam in lams], axis=1)

    def score(self, lam, x):
        """Gradient of the log-density w.r.t. the flat parameters.

        Component blocks are the component scores times the responsibilities;
        the logit block is ``responsibility - weight``.
        """
        logits, mu, log_sigma = self.split(lam)
        joint = self._component_logpdf(lam, x)
        resp = np.exp(joint - logsumexp(joint, axis=1, keepdims=True))
        inv_var = np.exp(-2.0 * log_sigma)
        diff = x[:, np.newaxis, :] - mu[np.newaxis]
        d_mu = resp[:, :, np.newaxis] * diff * inv_var
        d_ls = resp[:, :, np.newaxis] * (diff * diff * inv_var - 1.0)
        d_logits = resp - softmax(logits)
        n = x.shape[0]
        return np.hstack([d_logits, d_mu.reshape(n, -1), d_ls.reshape(n, -1)])

    def draw(self, lam, n, rng):
        _, mu, log_sigma = self.split(lam)
        comp = rng.choice(self.n_components, size=n, p=self.weights(lam))
        return mu[comp] + np.exp(log_sigma[comp]) * rng.standard_normal((n, self.dim))

    def fisher_information(self, lam):
        raise UnsupportedFamilyError("Fisher information is not available for Gaussian mixtures")

    def initialize(self, rng, mu_range=(-0.1, 0.1), sigma_range=(0.2, 0.4)):
        k, d = self.n_components, self.dim
        mu = rng.uniform(*mu_range, size=(k, d))
        log_sigma = rng.uniform(np.log(sigma_range[0]), np.log(sigma_range[1]), size=(k, d))
        return self.join(np.zeros(k), mu, log_sigma)


@dataclass(frozen=True, eq=False)
class VariationalParams:
    """A variational family together with a flat parameter vector.

    Attributes:
        family: :class:`MeanFieldGaussian` or :class:`GaussianMixture`.
        lam (np.ndarray): Flat parameter vector of length ``family.n_params``.
    """

    family: object
    lam: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float).ravel()
        if lam.size != self.family.n_params:
            raise InputError(
                f"{self.family!r} expects {self.family.n_params} parameters, got {lam.size}"
            )
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)

    @property
    def dim(self):
        return self.family.dim

    def with_params(self, lam):
        return VariationalParams(self.family, lam)

    def flatten(self):
        return self.lam.copy()

    def unflatten(self):
        return self.family.split(self.lam)


def mean_field(mu, log_sigma):
    """Build mean-field :class:`VariationalParams` from mean and log std."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    fam = MeanFieldGaussian(mu.size)
    return VariationalParams(fam, fam.join(mu, np.broadcast_to(log_sigma, mu.shape)))


def gaussian_mixture(logits, mu, log_sigma):
    """Build mixture :class:`VariationalParams`; ``mu`` and ``log_sigma`` are (K, d)."""
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    k, d = mu.shape
    fam = GaussianMixture(d, k)
    return VariationalParams(fam, fam.join(logits, mu, np.broadcast_to(log_sigma, mu.shape)))


def _check_finite(q):
    if not np.all(np.isfinite(q.lam)):
        raise InputError("variational parameters must be finite")


def log_density(q, theta):
    """Log-density ``ln q(theta | lam)``.

    Args:
        q (VariationalParams): Variational distribution.
        theta (np.ndarray): A point (d,) or a batch of points (n, d).

    Returns:
        float for a single point, otherwise an array of shape (n,).
    """
    _check_finite(q)
    x, single = _as_samples(theta, q.dim)
    out = q.family.logpdf(q.lam, x)
    return float(out[0]) if single else out


def sample(q, n, rng):
    """Draw ``n`` i.i.d. samples, shape (n, d)."""
    _check_finite(q)
    if int(n) < 1:
        raise InputError(f"sample count must be at least 1, got {n}")
    return q.family.draw(q.lam, int(n), rng)


def score(q, theta):
    """Score function ``grad_lam ln q(theta | lam)``.

    Returns a vector of length ``|lam|`` for a single point, otherwise (n, |lam|).
    """
    _check_finite(q)
    x, single = _as_samples(theta, q.dim)
    out = q.family.score(q.lam, x)
    return out[0] if single else out


def fisher_information(q):
    """Fisher information of a mean-field Gaussian as a dense diagonal matrix."""
    if not isinstance(q.family, MeanFieldGaussian):
        raise UnsupportedFamilyError(f"no Fisher information for {q.family!r}")
    return np.diag(q.family.fisher_information(q.lam))
