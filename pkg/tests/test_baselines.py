import numpy as np
import pytest

from abris.baselines import (
    GaussianPrior,
    MhConfig,
    ParticleCloud,
    SmcConfig,
    mh_accept,
    mh_run,
    next_temperature,
    residual_indices,
    residual_resample,
    smc_run,
)
from abris.errors import ConfigError, TemperingError
from abris.harness.evaluation import CountingModel


def std_normal(x):
    x = np.atleast_2d(x)
    return -0.5 * np.sum(x * x, axis=1)


def conjugate_loglik(x, y=2.0):
    x = np.atleast_2d(x)
    return -0.5 * np.sum((y - x) ** 2, axis=1) - 0.5 * np.log(2 * np.pi)


@pytest.fixture(scope="module")
def chain():
    return mh_run(std_normal, MhConfig(n_steps=50_000, initial_scale=0.5), np.random.default_rng(0), dim=2)


@pytest.fixture(scope="module")
def conjugate():
    return smc_run(conjugate_loglik, GaussianPrior([0.0], 1.0), SmcConfig(n_particles=1024), np.random.default_rng(3))


class TestMH:
    def test_moments(self, chain):
        s = chain.samples
        assert np.all(np.abs(s.mean(axis=0)) < 0.05)
        assert np.all(np.abs(s.var(axis=0) - 1.0) < 0.1)

    def test_tuned_acceptance(self, chain):
        assert 0.15 <= chain.acceptance[-1] <= 0.55
        assert 0.15 <= chain.acceptance[-50:].mean() <= 0.55

    def test_burn_in_and_calls(self, chain):
        assert chain.calls == 50_001
        assert chain.samples.shape[0] == 50_001 - int(0.5 * 50_001)
        np.testing.assert_array_equal(chain.samples, chain.chain[-chain.samples.shape[0]:])

    def test_accept_rule(self):
        assert mh_accept(0.5, 0.999)
        assert mh_accept(np.log(0.3), 0.29)
        assert not mh_accept(np.log(0.3), 0.31)
        assert not mh_accept(-np.inf, 1e-300)

    def test_replay(self):
        a = mh_run(std_normal, MhConfig(n_steps=500), np.random.default_rng(4), dim=3)
        b = mh_run(std_normal, MhConfig(n_steps=500), np.random.default_rng(4), dim=3)
        np.testing.assert_array_equal(a.chain, b.chain)

    def test_call_audit(self):
        model = CountingModel(std_normal)
        res = mh_run(model, MhConfig(n_steps=300), np.random.default_rng(1), dim=2)
        assert model.calls == res.calls == 301

    def test_scale_rule(self):
        # a flat target accepts everything, so the scale grows every window
        res = mh_run(lambda x: np.zeros(len(x)), MhConfig(n_steps=400, i_tune=100), np.random.default_rng(0), dim=1)
        np.testing.assert_allclose(res.scales, 0.1 * 1.5 ** np.arange(4))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            MhConfig(band=(0.5, 0.2))
        with pytest.raises(ConfigError):
            MhConfig(burn_in=1.0)


class TestResampling:
    def test_uniform_identity(self):
        idx = residual_indices(np.full(5, 0.2), 5, np.random.default_rng(0))
        np.testing.assert_array_equal(np.sort(idx), np.arange(5))

    def test_exact_copies(self):
        cloud = ParticleCloud(np.arange(4.0)[:, None], np.array([0.5, 0.5, 0.0, 0.0]))
        out = residual_resample(cloud, np.random.default_rng(0))
        np.testing.assert_array_equal(out.particles[:, 0], [0, 0, 1, 1])
        np.testing.assert_allclose(out.weights, 0.25)

    def test_expected_offspring(self):
        rng = np.random.default_rng(1)
        w = np.array([0.05, 0.33, 0.12, 0.5])
        n, reps = 7, 10_000
        counts = np.array([np.bincount(residual_indices(w, n, rng), minlength=4) for _ in range(reps)])
        se = counts.std(axis=0) / np.sqrt(reps)
        assert np.all(np.abs(counts.mean(axis=0) - n * w) <= 3 * se + 1e-12)


class TestSMC:
    def test_posterior_moments(self, conjugate):
        cloud = conjugate.cloud
        mean = float(cloud.mean()[0])
        var = float(cloud.cov()[0, 0])
        n = cloud.n
        assert abs(mean - 1.0) <= 3 * np.sqrt(0.5 / n)
        assert abs(var - 0.5) <= 3 * 0.5 * np.sqrt(2.0 / n)

    def test_gamma_trace(self, conjugate):
        g = conjugate.gammas
        assert g[0] == 0.0 and g[-1] == 1.0
        assert np.all(np.diff(g) > 0)

    def test_weights_normalized(self, conjugate):
        assert abs(conjugate.cloud.weights.sum() - 1.0) < 1e-12
        assert np.all(conjugate.cloud.weights >= 0)

    def test_flat_likelihood(self):
        res = smc_run(lambda x: np.zeros(len(x)), GaussianPrior([0.0, 0.0]), SmcConfig(n_particles=64), np.random.default_rng(0))
        np.testing.assert_array_equal(res.gammas, [0.0, 1.0])
        np.testing.assert_allclose(res.cloud.weights, 1.0 / 64)

    def test_call_audit(self):
        model = CountingModel(conjugate_loglik)
        config = SmcConfig(n_particles=100, n_rejuvenation=3)
        res = smc_run(model, GaussianPrior([0.0], 1.0), config, np.random.default_rng(5))
        stages = len(res.gammas) - 1
        assert model.calls == res.calls == 100 + stages * 3 * 100
        assert res.trace[-1]["cumulative_calls"] == res.calls

    def test_next_temperature_hits_threshold(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(500, 1))
        cloud = ParticleCloud(x, np.full(500, 1 / 500), 0.0, conjugate_loglik(x, y=6.0) * 50)
        gamma = next_temperature(cloud, 0.5)
        w = np.exp(gamma * cloud.loglik - np.max(gamma * cloud.loglik))
        w /= w.sum()
        assert 0.0 < gamma < 1.0
        assert 1.0 / np.sum(w * w) == pytest.approx(250.0, rel=1e-6)

    def test_degenerate_weights(self):
        w = np.zeros(10)
        w[0] = 1.0
        cloud = ParticleCloud(np.zeros((10, 1)), w, 0.2, np.arange(10.0))
        with pytest.raises(TemperingError):
            next_temperature(cloud, 0.5)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SmcConfig(n_particles=1)
        with pytest.raises(ConfigError):
            SmcConfig(ess_threshold=0.0)
