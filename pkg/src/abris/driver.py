"""The importance-sampling enhanced BBVI loop with adaptive batch acquisition.

Every iteration first decides, in a short sampling loop, whether the stored
evaluations still give a usable gradient estimate. New forward-model batches
are only drawn when the effective sample size has collapsed, when the IS
estimate of the (known, zero) score mean is worse than a plain MC estimate
from fresh draws, or periodically. The stored batches form a moving window of
at most ``m`` batches.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from abris.errors import BudgetExhausted, ConfigError, ModelEvaluationError, NumericalError
from abris.estimators import (
    EvaluationSets,
    a_norm,
    elbo_gradient,
    ess,
    is_weights,
    score_error_ref,
)
from abris.optimizer import DampingSchedule, damping
from abris.variational import GaussianMixture, MeanFieldGaussian

_logger = logging.getLogger(__name__)


@dataclass
class AbrisConfig:
    """Settings of the sampling loop and the outer iteration.

    Attributes:
        batch_size (int): Samples per model batch ``N``.
        window (int): Maximum number of stored batches ``m``. ``0`` selects plain
            BBVI: a fresh batch every iteration and no reuse.
        n_periodic (int): Force a batch every ``n_periodic`` iterations.
        alpha_sc (float or None): Scale of the score criterion; ``None`` picks
            1.0 for mean-field and 2.0 for mixtures.
        max_iterations (int): Iteration limit.
        max_model_calls (int): Model-call budget.
        use_ess_criterion (bool): Enable the ESS test.
        use_score_criterion (bool): Enable the score-mean test.
        criterion_damping (DampingSchedule): Damping of the FIM used as the
            norm matrix in the score test (mean-field only).
        baseline (bool): Use the score function as control variate.
        max_retries (int): Redraw attempts for failed model evaluations.
    """

    batch_size: int = 8
    window: int = 10
    n_periodic: int = 50
    alpha_sc: float = None
    max_iterations: int = 150_000
    max_model_calls: int = 1_000_000
    use_ess_criterion: bool = True
    use_score_criterion: bool = True
    criterion_damping: DampingSchedule = field(default_factory=DampingSchedule)
    baseline: bool = True
    max_retries: int = 10

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.window < 0:
            raise ConfigError("window must be >= 0")
        if self.n_periodic < 1:
            raise ConfigError("n_periodic must be >= 1")
        if self.alpha_sc is not None and not self.alpha_sc > 0:
            raise ConfigError("alpha_sc must be > 0")

    @property
    def plain(self):
        return self.window == 0

    def score_scale(self, family):
        if self.alpha_sc is not None:
            return self.alpha_sc
        return 2.0 if isinstance(family, GaussianMixture) else 1.0


@dataclass
class IterationRecord:
    """Log entry of one outer iteration."""

    iteration: int
    rounds: int
    new_calls: int
    cumulative_calls: int
    ess: float
    e_is_norm: float
    e_ref_norm: float
    ess_triggered: bool
    score_triggered: bool
    periodic_triggered: bool
    elbo: float
    lam: np.ndarray
    batch_tags: tuple = ()
    batch_sizes: tuple = ()

    def as_dict(self):
        return {
            "iteration": self.iteration,
            "cumulative_calls": self.cumulative_calls,
            "new_calls": self.new_calls,
            "rounds": self.rounds,
            "ess": self.ess,
            "e_is_norm": self.e_is_norm,
            "e_ref_norm": self.e_ref_norm,
            "flags": {
                "ess": self.ess_triggered,
                "score": self.score_triggered,
                "periodic": self.periodic_triggered,
            },
            "elbo": self.elbo,
        }


@dataclass
class SamplingInfo:
    """What happened inside one call of :func:`update_sets`."""

    rounds: int = 0
    calls: int = 0
    ess: float = float("nan")
    e_is_norm: float = float("nan")
    e_ref_norm: float = float("nan")
    ess_triggered: bool = False
    score_triggered: bool = False
    periodic_triggered: bool = False
    weights: object = None


@dataclass
class AbrisResult:
    """Outcome of :func:`run`.

    ``status`` is one of ``converged``, ``max_iterations``,
    ``budget_exhausted`` or ``diverged``.
    """

    q: object
    records: list
    status: str
    total_calls: int

    def __iter__(self):
        return iter((self.q, self.records))


@dataclass(frozen=True)
class ConvergenceRule:
    """Stopping rule.

    ``kind="relative-parameter-error"`` stops once
    ``|lam - reference| / |reference| < tol``. ``kind="budget-only"`` never
    reports convergence by itself; the run stops on its iteration or call limits.
    """

    kind: str = "budget-only"
    reference: np.ndarray = None
    tol: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("relative-parameter-error", "budget-only"):
            raise ConfigError(f"unknown convergence rule {self.kind!r}")
        if self.kind == "relative-parameter-error" and self.reference is None:
            raise ConfigError("relative-parameter-error needs a reference parameter vector")


def convergence_check(q, rule, calls=0, iteration=0, max_model_calls=None, max_iterations=None):
    """True once ``q`` satisfies ``rule`` (or a budget is used up for budget-only)."""
    if rule.kind == "relative-parameter-error":
        ref = np.asarray(rule.reference, dtype=float)
        return bool(np.linalg.norm(q.lam - ref) < rule.tol * np.linalg.norm(ref))
    out_of_calls = max_model_calls is not None and calls >= max_model_calls
    out_of_iterations = max_iterations is not None and iteration >= max_iterations
    return out_of_calls or out_of_iterations


def draw_batch(q, n, model, rng, max_retries=10):
    """Draw ``n`` samples from ``q`` and evaluate the model on them.

    Samples with a non-finite log-joint are redrawn, up to ``max_retries``
    times.

    Returns:
        (theta, logjoint, calls) where ``calls`` counts every evaluation.
    """
    theta = q.family.draw(q.lam, n, rng)
    phi = np.array(model(theta), dtype=float).ravel()
    calls = n
    bad = np.flatnonzero(~np.isfinite(phi))
    for _ in range(max_retries):
        if bad.size == 0:
            break
        theta[bad] = q.family.draw(q.lam, bad.size, rng)
        phi[bad] = np.asarray(model(theta[bad]), dtype=float).ravel()
        calls += bad.size
        bad = bad[~np.isfinite(phi[bad])]
    if bad.size:
        raise ModelEvaluationError(
            f"model failed on {bad.size} samples after {max_retries} retries", rows=bad
        )
    return theta, phi, calls


def _norm_matrix(q, i, config):
    if isinstance(q.family, MeanFieldGaussian):
        return q.family.fisher_information(q.lam) + damping(i, config.criterion_damping)
    return None


def _check_sets(q, sets, config, ref_rng, A, info):
    """Evaluate the ESS and score criteria. Empty sets always trigger."""
    n = config.batch_size
    if sets.n_batches == 0:
        info.weights = None
        return True, True
    w = is_weights(q, sets)
    info.weights = w
    info.ess = ess(w)
    ess_bad = info.ess <= n
    score_bad = False
    if config.use_score_criterion:
        scores = q.family.score(q.lam, sets.samples)
        e_is = (w.weights @ scores) / w.weights.size
        e_ref = score_error_ref(q, n, ref_rng)
        info.e_is_norm = a_norm(e_is, A)
        info.e_ref_norm = a_norm(e_ref, A)
        score_bad = info.e_is_norm > config.score_scale(q.family) * info.e_ref_norm
    return ess_bad and config.use_ess_criterion, score_bad


def update_sets(i, q, sets, config, model, rng, ref_rng=None, calls_so_far=0):
    """Run the sampling loop of iteration ``i`` (1-based) and update ``sets`` in place.

    Args:
        i (int): Outer iteration index, starting at 1.
        q (VariationalParams): Current variational distribution.
        sets (EvaluationSets): Stored evaluations, modified in place.
        config (AbrisConfig): Loop settings.
        model (callable): Maps an (n, d) array to n log-joint values.
        rng (np.random.Generator): Stream for new model samples.
        ref_rng (np.random.Generator, optional): Stream for the reference
            score estimate; defaults to ``rng``.
        calls_so_far (int): Calls already spent, for the budget check.

    Returns:
        (sets, calls_made, info)

    Raises:
        BudgetExhausted: A batch would exceed ``config.max_model_calls``.
    """
    ref_rng = rng if ref_rng is None else ref_rng
    n = config.batch_size
    if config.plain:
        m_eff, periodic = 1, True
    else:
        m_eff, periodic = min(config.window, i), i % config.n_periodic == 0
    A = _norm_matrix(q, i, config)
    info = SamplingInfo(periodic_triggered=periodic)

    for _ in range(m_eff):
        if periodic:
            # sampling is forced; criteria are still evaluated for the log unless plain
            if not config.plain:
                ess_bad, score_bad = _check_sets(q, sets, config, ref_rng, A, info)
                info.ess_triggered |= ess_bad
                info.score_triggered |= score_bad
        else:
            ess_bad, score_bad = _check_sets(q, sets, config, ref_rng, A, info)
            info.ess_triggered |= ess_bad
            info.score_triggered |= score_bad
            if not (ess_bad or score_bad):
                break
        if calls_so_far + info.calls + n > config.max_model_calls:
            raise BudgetExhausted(f"next batch would exceed {config.max_model_calls} model calls")
        theta, phi, calls = draw_batch(q, n, model, rng, config.max_retries)
        info.calls += calls
        info.rounds += 1
        info.weights = None
        sets.add_batch(theta, phi, q.lam, tag=i)
        while sets.n_samples > m_eff * n:
            sets.drop_oldest()
        periodic = False
    return sets, info.calls, info


def run(
    model,
    q_init,
    config,
    optimizer,
    rng,
    ref_rng=None,
    convergence=None,
    callback=None,
):
    """Optimize the ELBO with importance-sampling reuse of model evaluations.

    Args:
        model (callable): Maps an (n, d) array to n log-joint values.
        q_init (VariationalParams): Starting distribution.
        config (AbrisConfig): Loop settings.
        optimizer (StochasticOptimizer): Update pipeline; its state is reset.
        rng (np.random.Generator): Stream for model samples.
        ref_rng (np.random.Generator, optional): Stream for reference estimates.
        convergence (ConvergenceRule, optional): Stopping rule; budget-only if omitted.
        callback (callable, optional): Called with each :class:`IterationRecord`.

    Returns:
        AbrisResult
    """
    convergence = convergence or ConvergenceRule()
    q = q_init
    sets = EvaluationSets(q.family)
    optimizer.reset(q.lam.size)
    records = []
    total = 0
    status = "max_iterations"
    tags, sizes = (), ()

    for i in range(1, config.max_iterations + 1):
        try:
            _, calls, info = update_sets(i, q, sets, config, model, rng, ref_rng, total)
        except BudgetExhausted:
            status = "budget_exhausted"
            break
        total += calls
        if calls:
            tags, sizes = tuple(sets.tags), tuple(int(s) for s in sets.batch_sizes)

        est = elbo_gradient(q, sets, weights=info.weights, baseline=config.baseline)
        try:
            q_new = optimizer.step(q, est.gradient, i)
        except NumericalError:
            q_new = q.with_params(np.full_like(q.lam, np.nan))
        diverged = not np.all(np.isfinite(q_new.lam))

        record = IterationRecord(
            iteration=i,
            rounds=info.rounds,
            new_calls=calls,
            cumulative_calls=total,
            ess=est.ess,
            e_is_norm=info.e_is_norm,
            e_ref_norm=info.e_ref_norm,
            ess_triggered=info.ess_triggered,
            score_triggered=info.score_triggered,
            periodic_triggered=info.periodic_triggered,
            elbo=est.elbo,
            lam=q_new.lam,
            batch_tags=tags,
            batch_sizes=sizes,
        )
        records.append(record)
        if callback is not None:
            callback(record)
        if diverged:
            _logger.warning("variational parameters became non-finite at iteration %d", i)
            status = "diverged"
            break
        q = q_new
        if convergence.kind != "budget-only" and convergence_check(q, convergence):
            status = "converged"
            break

    return AbrisResult(q, records, status, total)
