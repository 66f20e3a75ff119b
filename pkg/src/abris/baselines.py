"""Sampling baselines: random-walk Metropolis-Hastings and adaptive-tempering SMC.

Both count every evaluation of the model so they can be compared with the
variational methods on a model-call axis. Models are batch callables mapping
an (n, d) array to n values.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from abris.errors import ConfigError, InputError, TemperingError


def _eval_one(model, theta):
    return float(np.asarray(model(theta[np.newaxis, :]), dtype=float).ravel()[0])


@dataclass
class MhConfig:
    """Random-walk Metropolis-Hastings settings.

    Attributes:
        n_steps (int): Total chain length, burn-in included.
        i_tune (int): Tuning interval in steps.
        band (tuple): Target acceptance band.
        initial_scale (float): Initial proposal standard deviation.
        burn_in (float): Fraction of the chain discarded.
        scale_up (float): Scale multiplier when acceptance is above the band.
        scale_down (float): Scale multiplier when acceptance is below the band.
    """

    n_steps: int = 10_000
    i_tune: int = 100
    band: tuple = (0.2, 0.5)
    initial_scale: float = 0.1
    burn_in: float = 0.5
    scale_up: float = 1.5
    scale_down: float = 0.67

    def __post_init__(self):
        lo, hi = self.band
        if not 0.0 < lo < hi < 1.0:
            raise ConfigError("acceptance band must lie inside (0, 1)")
        if not 0.0 <= self.burn_in < 1.0:
            raise ConfigError("burn-in fraction must be in [0, 1)")
        if self.n_steps < 1 or self.i_tune < 1 or not self.initial_scale > 0:
            raise ConfigError("n_steps, i_tune and initial_scale must be positive")


@dataclass
class MhResult:
    """Chain output.

    Attributes:
        chain (np.ndarray): Every state including burn-in, (n_steps + 1, d).
        samples (np.ndarray): Post-burn-in states.
        acceptance (np.ndarray): Acceptance rate of each tuning window.
        scales (np.ndarray): Proposal scale used in each tuning window.
        calls (int): Model evaluations, one per proposal plus the start.
        call_index (np.ndarray): Cumulative calls after each chain state.
    """

    chain: np.ndarray
    samples: np.ndarray
    acceptance: np.ndarray
    scales: np.ndarray
    calls: int
    call_index: np.ndarray

    def __iter__(self):
        return iter((self.samples, self.acceptance, self.calls))


def mh_accept(log_ratio, u):
    """Accept when ``u < min(1, exp(log_ratio))`` for a symmetric proposal."""
    return bool(np.log(u) < min(0.0, log_ratio))


def mh_run(model, config, rng, x0=None, dim=None):
    """Random-walk Metropolis-Hastings with an isotropic Gaussian proposal.

    The proposal scale is multiplied by ``scale_up`` or ``scale_down`` after
    every ``i_tune`` steps whose acceptance rate left the band.

    Args:
        model (callable): Log-target on a batch of points.
        config (MhConfig): Chain settings.
        rng (np.random.Generator): Random stream.
        x0 (np.ndarray, optional): Start; a standard-normal draw of size ``dim`` if omitted.
        dim (int, optional): Dimension when ``x0`` is omitted.
    """
    if x0 is None:
        if dim is None:
            raise InputError("mh_run needs a start point or a dimension")
        x0 = rng.standard_normal(dim)
    x = np.array(x0, dtype=float)
    d = x.size
    logp = _eval_one(model, x)
    calls = 1
    scale = config.initial_scale

    chain = np.empty((config.n_steps + 1, d))
    chain[0] = x
    rates, scales = [], []
    accepted_in_window = 0
    for step in range(1, config.n_steps + 1):
        prop = x + scale * rng.standard_normal(d)
        logp_prop = _eval_one(model, prop)
        calls += 1
        if np.isfinite(logp_prop) and mh_accept(logp_prop - logp, rng.uniform()):
            x, logp = prop, logp_prop
            accepted_in_window += 1
        chain[step] = x
        if step % config.i_tune == 0:
            rate = accepted_in_window / config.i_tune
            rates.append(rate)
            scales.append(scale)
            if rate > config.band[1]:
                scale *= config.scale_up
            elif rate < config.band[0]:
                scale *= config.scale_down
            accepted_in_window = 0

    start = int(config.burn_in * (config.n_steps + 1))
    return MhResult(
        chain=chain,
        samples=chain[start:],
        acceptance=np.array(rates),
        scales=np.array(scales),
        calls=calls,
        call_index=np.arange(1, config.n_steps + 2),
    )


@dataclass
class SmcConfig:
    """Adaptive-tempering SMC settings.

    Attributes:
        n_particles (int): Number of particles.
        n_rejuvenation (int): MH moves per particle after each tempering step.
        ess_threshold (float): Target ESS fraction for tempering and resampling.
        max_stages (int): Safety cap on tempering steps.
    """

    n_particles: int = 1000
    n_rejuvenation: int = 10
    ess_threshold: float = 0.5
    max_stages: int = 1000

    def __post_init__(self):
        if self.n_particles < 2:
            raise ConfigError("SMC needs at least two particles")
        if not 0.0 < self.ess_threshold <= 1.0:
            raise ConfigError("ESS threshold must lie in (0, 1]")
        if self.n_rejuvenation < 0:
            raise ConfigError("n_rejuvenation must be non-negative")


@dataclass
class ParticleCloud:
    """Weighted particles at tempering exponent ``gamma``.

    Attributes:
        particles (np.ndarray): (n, d).
        weights (np.ndarray): Normalized weights.
        gamma (float): Current tempering exponent.
        loglik (np.ndarray): Cached log-likelihood per particle.
    """

    particles: np.ndarray
    weights: np.ndarray
    gamma: float = 0.0
    loglik: np.ndarray = None

    @property
    def n(self):
        return self.particles.shape[0]

    def ess(self):
        return float(1.0 / np.sum(self.weights**2))

    def mean(self):
        return self.weights @ self.particles

    def cov(self):
        return np.atleast_2d(np.cov(self.particles.T, aweights=self.weights, ddof=0))


@dataclass
class SmcResult:
    """Final cloud, tempering trace and call count.

    ``trace`` holds one dict per stage with ``gamma``, ``ess`` and
    ``cumulative_calls``.
    """

    cloud: ParticleCloud
    gammas: np.ndarray
    calls: int
    trace: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.cloud, self.gammas, self.calls))


class GaussianPrior:
    """Independent normal prior ``N(mean, std^2)``."""

    def __init__(self, mean, std=1.0):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.std = np.broadcast_to(np.asarray(std, dtype=float), self.mean.shape).copy()

    @property
    def dim(self):
        return self.mean.size

    def sample(self, n, rng):
        return self.mean + self.std * rng.standard_normal((n, self.dim))

    def logpdf(self, x):
        z = (np.atleast_2d(x) - self.mean) / self.std
        return -0.5 * np.sum(z * z + np.log(2.0 * np.pi * self.std**2), axis=1)


def residual_resample(cloud, rng):
    """Residual resampling: ``floor(n w_k)`` copies plus a multinomial remainder."""
    n = cloud.n
    idx = residual_indices(cloud.weights, n, rng)
    loglik = None if cloud.loglik is None else cloud.loglik[idx]
    return ParticleCloud(cloud.particles[idx].copy(), np.full(n, 1.0 / n), cloud.gamma, loglik)


def residual_indices(weights, n, rng):
    """Ancestor indices of residual resampling, sorted by parent."""
    nw = n * np.asarray(weights, dtype=float)
    counts = np.floor(nw).astype(int)
    remainder = n - counts.sum()
    if remainder > 0:
        resid = nw - counts
        counts += rng.multinomial(remainder, resid / resid.sum())
    return np.repeat(np.arange(len(counts)), counts)


def _normalized(log_w):
    w = np.exp(log_w - np.max(log_w))
    return w / w.sum()


def _ess_fraction(log_w):
    w = _normalized(log_w)
    return 1.0 / (np.sum(w * w) * w.size)


def next_temperature(cloud, threshold):
    """Largest ``gamma' <= 1`` whose reweighted ESS fraction stays at ``threshold``."""
    base = np.log(np.maximum(cloud.weights, 1e-300))
    ll = cloud.loglik
    remaining = 1.0 - cloud.gamma
    if _ess_fraction(base + remaining * ll) >= threshold:
        return 1.0
    f = lambda delta: _ess_fraction(base + delta * ll) - threshold  # noqa: E731
    lo = 0.0
    if f(lo) < 0.0:
        raise TemperingError(f"ESS already below threshold at gamma={cloud.gamma:.6g}")
    try:
        delta = brentq(f, lo, remaining, xtol=1e-14, rtol=1e-12)
    except ValueError as err:
        raise TemperingError(f"bisection failed at gamma={cloud.gamma:.6g}") from err
    if not delta > 0.0:
        raise TemperingError(f"tempering stalled at gamma={cloud.gamma:.6g}")
    return cloud.gamma + delta


def smc_run(log_likelihood, prior, config, rng):
    """Adaptive-tempering SMC from ``prior`` to ``prior * likelihood``.

    Args:
        log_likelihood (callable): Log-likelihood on a batch of points.
        prior: Object with ``sample(n, rng)``, ``logpdf(x)`` and ``dim``.
        config (SmcConfig): Sampler settings.
        rng (np.random.Generator): Random stream.

    Returns:
        SmcResult
    """
    n = config.n_particles
    x = prior.sample(n, rng)
    ll = np.asarray(log_likelihood(x), dtype=float)
    calls = n
    if not np.all(np.isfinite(ll)):
        raise TemperingError("non-finite likelihood on prior draws")
    cloud = ParticleCloud(x, np.full(n, 1.0 / n), 0.0, ll)
    gammas = [0.0]
    trace = [{"stage": 0, "gamma": 0.0, "ess": float(n), "cumulative_calls": calls}]

    for stage in range(1, config.max_stages + 1):
        gamma = next_temperature(cloud, config.ess_threshold)
        log_w = np.log(np.maximum(cloud.weights, 1e-300)) + (gamma - cloud.gamma) * cloud.loglik
        cloud = ParticleCloud(cloud.particles, _normalized(log_w), gamma, cloud.loglik)
        ess_stage = cloud.ess()
        if ess_stage < config.ess_threshold * n * (1.0 + 1e-9):
            cloud = residual_resample(cloud, rng)
        cloud, moved_calls = _rejuvenate(cloud, log_likelihood, prior, config.n_rejuvenation, rng)
        calls += moved_calls
        gammas.append(gamma)
        trace.append({"stage": stage, "gamma": gamma, "ess": ess_stage, "cumulative_calls": calls})
        if gamma >= 1.0:
            break
    else:
        raise TemperingError(f"did not reach gamma=1 within {config.max_stages} stages")
    return SmcResult(cloud, np.array(gammas), calls, trace)


def _rejuvenate(cloud, log_likelihood, prior, n_moves, rng):
    """Random-walk MH moves targeting ``prior * likelihood^gamma``."""
    if n_moves == 0:
        return cloud, 0
    n, d = cloud.particles.shape
    cov = cloud.cov() * (2.38**2 / d)
    cov += 1e-12 * np.eye(d) * max(np.trace(cov) / d, 1.0)
    chol = np.linalg.cholesky(cov)
    x = cloud.particles.copy()
    ll = cloud.loglik.copy()
    lp = prior.logpdf(x)
    calls = 0
    for _ in range(n_moves):
        prop = x + rng.standard_normal((n, d)) @ chol.T
        ll_prop = np.asarray(log_likelihood(prop), dtype=float)
        calls += n
        lp_prop = prior.logpdf(prop)
        log_ratio = lp_prop + cloud.gamma * ll_prop - lp - cloud.gamma * ll
        log_ratio = np.where(np.isfinite(ll_prop), log_ratio, -np.inf)
        acc = np.log(rng.uniform(size=n)) < log_ratio
        x[acc], ll[acc], lp[acc] = prop[acc], ll_prop[acc], lp_prop[acc]
    return ParticleCloud(x, cloud.weights, cloud.gamma, ll), calls
