"""Score-function ELBO gradient estimation with importance-sampling reuse.

Stored model evaluations are grouped in batches. Every batch remembers the
variational parameters it was drawn from, so the batches together define a
mixture proposal with coefficients proportional to the batch sizes. All
density ratios are formed in log-space.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from abris.errors import InputError, NumericalError, StateError


class EvaluationSets:
    """Batched samples, their log-joint values and the parameters they came from.

    The log-density of every stored sample under every stored snapshot is
    cached, so evaluating the mixture proposal costs nothing beyond a
    log-sum-exp once the batches are in place.

    Attributes:
        family: Variational family shared by all snapshots.
        thetas (list[np.ndarray]): Sample batches, each (N_j, d).
        logjoints (list[np.ndarray]): Log-joint values matching ``thetas``.
        lambdas (list[np.ndarray]): Parameter snapshot per batch.
        tags (list[int]): Iteration at which each batch was drawn.
    """

    def __init__(self, family):
        self.family = family
        self.thetas = []
        self.logjoints = []
        self.lambdas = []
        self.tags = []
        # _log_comp[s, j] = ln q(theta_s | lambda_j) over the concatenated samples
        self._log_comp = np.empty((0, 0))
        self._samples = np.empty((0, family.dim))
        self._logjoint = np.empty(0)

    def __len__(self):
        return len(self.thetas)

    @property
    def n_batches(self):
        return len(self.thetas)

    @property
    def batch_sizes(self):
        return np.array([t.shape[0] for t in self.thetas], dtype=int)

    @property
    def n_samples(self):
        return self._samples.shape[0]

    @property
    def samples(self):
        """All stored samples concatenated in batch order, (M, d)."""
        return self._samples

    @property
    def logjoint(self):
        """All stored log-joint values concatenated in batch order, (M,)."""
        return self._logjoint

    @property
    def log_components(self):
        """Cached ``ln q(theta_s | lambda_j)``, shape (M, n_batches)."""
        return self._log_comp

    def add_batch(self, theta, logjoint, lam, tag=None):
        """Append a batch drawn from the parameters ``lam``."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        logjoint = np.asarray(logjoint, dtype=float).ravel()
        lam = np.array(lam, dtype=float).ravel()
        if theta.shape[1] != self.family.dim:
            raise InputError(f"batch has dimension {theta.shape[1]}, expected {self.family.dim}")
        if theta.shape[0] != logjoint.size:
            raise InputError("every sample needs exactly one log-joint value")
        if lam.size != self.family.n_params:
            raise InputError("snapshot does not match the family")
        if not np.all(np.isfinite(logjoint)):
            raise NumericalError("stored log-joint values must be finite")

        old_under_new = self.family.logpdf(lam, self._samples) if self.n_samples else np.empty(0)
        new_under_all = self.family.logpdf_many(np.array(self.lambdas + [lam]), theta)
        top = np.hstack([self._log_comp, old_under_new[:, np.newaxis]])
        self._log_comp = np.vstack([top, new_under_all])

        self.thetas.append(theta)
        self.logjoints.append(logjoint)
        self.lambdas.append(lam)
        self.tags.append(tag)
        self._samples = np.vstack([self._samples, theta])
        self._logjoint = np.concatenate([self._logjoint, logjoint])

    def drop_oldest(self):
        """Remove the oldest batch from all sets."""
        if not self.thetas:
            raise StateError("no batch to remove")
        n_old = self.thetas[0].shape[0]
        self.thetas.pop(0)
        self.logjoints.pop(0)
        self.lambdas.pop(0)
        self.tags.pop(0)
        self._log_comp = self._log_comp[n_old:, 1:]
        self._samples = self._samples[n_old:]
        self._logjoint = self._logjoint[n_old:]

    def clear(self):
        while self.thetas:
            self.drop_oldest()


@dataclass
class ISWeights:
    """Importance weights of the stored samples w.r.t. the current distribution.

    Attributes:
        weights (np.ndarray): ``q(theta_s | lam_i) / q_is(theta_s)``, shape (M,).
        log_weights (np.ndarray): Natural log of ``weights``.
        log_proposal (np.ndarray): Mixture-proposal log-density per sample.
        log_q (np.ndarray): Current variational log-density per sample.
    """

    weights: np.ndarray
    log_weights: np.ndarray
    log_proposal: np.ndarray
    log_q: np.ndarray

    def __len__(self):
        return self.weights.size


@dataclass
class GradientEstimate:
    """IS score-function ELBO gradient with diagnostics.

    Attributes:
        gradient (np.ndarray): Estimated ELBO gradient, length ``|lam|``.
        n_samples (int): Number of stored samples ``M`` used.
        elbo (float): IS estimate of the ELBO.
        ess (float): Effective sample size of the weights.
        e_is (np.ndarray): IS estimate of the (zero) score expectation.
        baseline (float): Control-variate coefficient that was applied.
        diagnostics (dict): Extra flags, e.g. ``baseline_degenerate``.
    """

    gradient: np.ndarray
    n_samples: int
    elbo: float
    ess: float
    e_is: np.ndarray
    baseline: float
    diagnostics: dict = field(default_factory=dict)


def mixture_coefficients(sets):
    """Relative batch sizes ``|Xi_j| / M``."""
    if sets.n_batches == 0:
        raise StateError("mixture coefficients of empty evaluation sets")
    sizes = sets.batch_sizes
    return sizes / sizes.sum()


def is_weights(q, sets):
    """Importance weights of all stored samples for the current ``q``.

    Args:
        q (VariationalParams): Current variational distribution.
        sets (EvaluationSets): Stored evaluations; defines the proposal.

    Returns:
        ISWeights
    """
    if sets.n_batches == 0:
        raise StateError("importance weights of empty evaluation sets")
    if q.family != sets.family:
        raise InputError(f"family mismatch: {q.family!r} vs {sets.family!r}")
    log_beta = np.log(mixture_coefficients(sets))
    log_proposal = logsumexp(sets.log_components + log_beta, axis=1)
    log_q = q.family.logpdf(q.lam, sets.samples)
    log_w = log_q - log_proposal
    bad = np.flatnonzero(~np.isfinite(log_w))
    if bad.size:
        raise NumericalError(f"non-finite importance weight at sample index {bad[0]}")
    return ISWeights(np.exp(log_w), log_w, log_proposal, log_q)


def ess(weights):
    """Effective sample size ``(sum w)^2 / sum w^2``."""
    w = weights.weights if isinstance(weights, ISWeights) else np.asarray(weights, dtype=float)
    if w.size < 1:
        raise InputError("ESS of an empty weight vector")
    # rescale by the max to avoid overflow in the squares
    peak = np.max(np.abs(w))
    if peak == 0.0:
        raise NumericalError("ESS of all-zero weights is undefined")
    w = w / peak
    return float(np.sum(w) ** 2 / np.sum(w * w))


def score_gradient_raw(q, theta, logjoint):
    """Single-sample score-function term ``score * (ln pi - ln q)``."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    logjoint = np.atleast_1d(np.asarray(logjoint, dtype=float))
    if not np.all(np.isfinite(logjoint)):
        raise InputError("log-joint must be finite")
    s = q.family.score(q.lam, theta)
    out = s * (logjoint - q.family.logpdf(q.lam, theta))[:, np.newaxis]
    return out[0] if out.shape[0] == 1 else out


def _weighted_baseline(scores, gsc, w):
    """Self-normalized weighted ``sum_c Cov(s_c, g_c) / sum_c Var(s_c)``."""
    total = np.sum(w)
    if total <= 0.0:
        return 0.0, True
    wn = w / total
    s_c = scores - wn @ scores
    g_c = gsc - wn @ gsc
    cov = np.sum(wn @ (s_c * g_c))
    var = np.sum(wn @ (s_c * s_c))
    if not var > 0.0:
        return 0.0, True
    return float(cov / var), False


def baseline_coefficient(q, sets, weights=None):
    """Control-variate scale ``a`` estimated from the stored evaluations.

    Returns 0.0 when the weighted score variance vanishes.
    """
    if sets.n_samples < 2:
        raise StateError("baseline coefficient needs at least two stored samples")
    if weights is None:
        weights = is_weights(q, sets)
    scores = q.family.score(q.lam, sets.samples)
    gsc = scores * (sets.logjoint - weights.log_q)[:, np.newaxis]
    return _weighted_baseline(scores, gsc, weights.weights)[0]


def elbo_gradient(q, sets, weights=None, baseline=True):
    """IS-reweighted score-function ELBO gradient with the score as control variate.

    Args:
        q (VariationalParams): Current variational distribution.
        sets (EvaluationSets): Stored evaluations.
        weights (ISWeights, optional): Precomputed weights for ``q``.
        baseline (bool or float): ``True`` estimates ``a`` from the sets,
            ``False`` disables the control variate, a number fixes ``a``.

    Returns:
        GradientEstimate
    """
    if weights is None:
        weights = is_weights(q, sets)
    w = weights.weights
    m = w.size
    scores = q.family.score(q.lam, sets.samples)
    inner = sets.logjoint - weights.log_q
    gsc = scores * inner[:, np.newaxis]

    degenerate = False
    if baseline is True:
        a, degenerate = _weighted_baseline(scores, gsc, w) if m >= 2 else (0.0, True)
    elif baseline is False:
        a = 0.0
    else:
        a = float(baseline)

    e_is = (w @ scores) / m
    grad = (w @ gsc) / m - a * e_is
    if not np.all(np.isfinite(grad)):
        raise NumericalError("ELBO gradient estimate is not finite")
    return GradientEstimate(
        gradient=grad,
        n_samples=m,
        elbo=float(w @ inner / m),
        ess=ess(weights),
        e_is=e_is,
        baseline=a,
        diagnostics={"baseline_degenerate": degenerate},
    )


def score_error_is(q, sets, weights=None):
    """IS estimate ``(1/M) sum_s w_s score(theta_s)`` of the zero score mean."""
    if weights is None:
        weights = is_weights(q, sets)
    scores = q.family.score(q.lam, sets.samples)
    return (weights.weights @ scores) / weights.weights.size


def score_error_ref(q, n, rng):
    """Plain MC estimate of the score mean from ``n`` fresh draws; no model calls."""
    if int(n) < 1:
        raise InputError("reference estimate needs at least one draw")
    x = q.family.draw(q.lam, int(n), rng)
    return np.mean(q.family.score(q.lam, x), axis=0)


def a_norm(v, A=None):
    """``sqrt(v^T A^-1 v)`` for a positive diagonal ``A`` (vector of its diagonal).

    ``A=None`` means the identity.
    """
    v = np.asarray(v, dtype=float)
    if A is None:
        return float(np.sqrt(v @ v))
    A = np.asarray(A, dtype=float)
    if A.ndim == 2:
        A = np.diag(A)
    if np.any(~(A > 0.0)):
        raise NumericalError("A-norm needs a positive diagonal")
    return float(np.sqrt(np.sum(v * v / A)))
