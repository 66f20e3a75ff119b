import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from abris.errors import NumericalError, StateError
from abris.estimators import (
    EvaluationSets,
    a_norm,
    baseline_coefficient,
    elbo_gradient,
    ess,
    is_weights,
    mixture_coefficients,
    score_error_is,
    score_error_ref,
    score_gradient_raw,
)
from abris.forward_models import GaussianTarget
from abris.variational import MeanFieldGaussian, log_density, mean_field, sample, score


def analytic_gradient(q, target):
    """ELBO gradient for a mean-field q and a normalized diagonal Gaussian target."""
    mu, log_sigma = q.family.split(q.lam)
    return np.concatenate([-(mu - target.mean) / target.cov_diag, 1.0 - np.exp(2 * log_sigma) / target.cov_diag])


def filled_sets(q, target, rng, sizes, snapshots=None):
    sets = EvaluationSets(q.family)
    snapshots = snapshots or [q] * len(sizes)
    for n, snap in zip(sizes, snapshots):
        x = sample(snap, n, rng)
        sets.add_batch(x, target(x), snap.lam)
    return sets


class TestMixtureCoefficients:
    def test_equal_batches(self):
        q = mean_field([0.0], [0.0])
        sets = filled_sets(q, GaussianTarget([0.0], [1.0]), np.random.default_rng(0), [8, 8, 8])
        np.testing.assert_allclose(mixture_coefficients(sets), [1 / 3] * 3)

    def test_unequal_batches(self):
        q = mean_field([0.0], [0.0])
        sets = filled_sets(q, GaussianTarget([0.0], [1.0]), np.random.default_rng(0), [4, 8])
        np.testing.assert_allclose(mixture_coefficients(sets), [1 / 3, 2 / 3])

    def test_single_batch(self):
        q = mean_field([0.0], [0.0])
        sets = filled_sets(q, GaussianTarget([0.0], [1.0]), np.random.default_rng(0), [5])
        np.testing.assert_array_equal(mixture_coefficients(sets), [1.0])

    def test_empty(self):
        with pytest.raises(StateError):
            mixture_coefficients(EvaluationSets(MeanFieldGaussian(1)))


class TestEvaluationSets:
    def test_alignment_and_eviction(self):
        rng = np.random.default_rng(1)
        q = mean_field([0.0, 0.0], 0.0)
        sets = EvaluationSets(q.family)
        lams = []
        for j in range(4):
            lam = q.lam + 0.1 * j
            lams.append(lam)
            x = rng.normal(size=(3 + j, 2))
            sets.add_batch(x, -np.sum(x**2, axis=1), lam, tag=j)
        sets.drop_oldest()
        assert len(sets.thetas) == len(sets.logjoints) == len(sets.lambdas) == 3
        assert sets.n_samples == 4 + 5 + 6
        # the cached component table must equal a fresh evaluation
        fresh = np.column_stack([q.family.logpdf(lam, sets.samples) for lam in lams[1:]])
        np.testing.assert_allclose(sets.log_components, fresh, rtol=1e-13)
        np.testing.assert_array_equal(sets.logjoint, -np.sum(sets.samples**2, axis=1))
        assert sets.tags == [1, 2, 3]


class TestISWeights:
    def test_unit_weights_single_snapshot(self):
        rng = np.random.default_rng(2)
        q = mean_field([0.3, -0.1], [0.2, -0.5])
        sets = filled_sets(q, GaussianTarget([0, 0], [1, 1]), rng, [16])
        np.testing.assert_allclose(is_weights(q, sets).weights, 1.0, rtol=0, atol=1e-12)

    def test_unit_weights_repeated_snapshot(self):
        rng = np.random.default_rng(3)
        q = mean_field([0.3, -0.1], [0.2, -0.5])
        sets = filled_sets(q, GaussianTarget([0, 0], [1, 1]), rng, [4, 8, 16])
        np.testing.assert_allclose(is_weights(q, sets).weights, 1.0, rtol=0, atol=1e-12)

    def test_two_snapshots_direct_oracle(self):
        rng = np.random.default_rng(4)
        q1 = mean_field([0.0, 0.5], [0.1, -0.2])
        q2 = mean_field([0.3, 0.0], [-0.1, 0.0])
        sets = filled_sets(q2, GaussianTarget([0, 0], [1, 1]), rng, [10, 10], [q1, q2])
        x = sets.samples
        direct = np.exp(log_density(q2, x)) / (0.5 * np.exp(log_density(q1, x)) + 0.5 * np.exp(log_density(q2, x)))
        np.testing.assert_allclose(is_weights(q2, sets).weights, direct, rtol=1e-10)

    def test_mean_weight_is_one(self):
        rng = np.random.default_rng(5)
        q1 = mean_field([0.0], [0.0])
        q2 = mean_field([0.4], [np.log(0.8)])
        sets = filled_sets(q2, GaussianTarget([0], [1]), rng, [50_000, 50_000], [q1, q2])
        w = is_weights(q2, sets).weights
        assert abs(w.mean() - 1.0) <= 5 * w.std() / np.sqrt(w.size)

    def test_no_overflow_far_from_proposal(self):
        # ln q differs by ~1e4 between snapshot and current parameters
        q_old = mean_field([0.0], [0.0])
        q_new = mean_field([140.0], [0.0])
        sets = EvaluationSets(q_old.family)
        sets.add_batch([[0.0], [1.0]], [0.0, 0.0], q_old.lam)
        sets.add_batch([[140.0], [139.0]], [0.0, 0.0], q_new.lam)
        w = is_weights(q_new, sets).weights
        assert np.all(np.isfinite(w)) and np.all(w >= 0)
        np.testing.assert_allclose(w, [0.0, 0.0, 2.0, 2.0], atol=1e-12)


class TestESS:
    def test_equal_weights(self):
        assert ess(np.full(7, 0.3)) == pytest.approx(7.0)

    def test_single_nonzero(self):
        assert ess([1.0, 0.0, 0.0, 0.0]) == pytest.approx(1.0)

    def test_hand_value(self):
        assert ess([1.0, 1.0, 2.0]) == pytest.approx(16 / 6)

    def test_all_zero(self):
        with pytest.raises(NumericalError):
            ess(np.zeros(3))

    @settings(max_examples=200, deadline=None)
    @given(arrays(float, st.integers(1, 50), elements=st.floats(0, 1e6)))
    def test_bounds(self, w):
        if not np.any(w > 0):
            return
        value = ess(w)
        assert 1.0 - 1e-9 <= value <= w.size + 1e-9


class TestScoreGradientRaw:
    def test_perfect_match(self):
        q = mean_field([0.2, -0.4], [0.1, 0.3])
        theta = np.array([0.5, 0.1])
        np.testing.assert_array_equal(score_gradient_raw(q, theta, log_density(q, theta)), 0.0)

    def test_constant_shift(self):
        q = mean_field([0.2, -0.4], [0.1, 0.3])
        theta = np.array([0.5, 0.1])
        g0 = score_gradient_raw(q, theta, -1.3)
        g1 = score_gradient_raw(q, theta, -1.3 + 2.5)
        np.testing.assert_allclose(g1 - g0, 2.5 * score(q, theta), rtol=1e-12)

    def test_mean_matches_closed_form(self):
        rng = np.random.default_rng(6)
        target = GaussianTarget([0.0], [0.1])
        q = mean_field([0.3], [np.log(0.5)])
        x = sample(q, 200_000, rng)
        g = score_gradient_raw(q, x, target(x))
        se = g.std(axis=0) / np.sqrt(g.shape[0])
        assert np.all(np.abs(g.mean(axis=0) - analytic_gradient(q, target)) <= 5 * se)


class TestBaseline:
    def test_zero_when_gsc_vanishes(self):
        rng = np.random.default_rng(7)
        q = mean_field([0.0, 0.0], 0.0)
        sets = EvaluationSets(q.family)
        x = sample(q, 30, rng)
        sets.add_batch(x, log_density(q, x), q.lam)
        assert baseline_coefficient(q, sets) == 0.0

    def test_recovers_scale(self):
        rng = np.random.default_rng(8)
        q = mean_field([0.0, 0.0], 0.0)
        sets = EvaluationSets(q.family)
        x = sample(q, 30, rng)
        # inner cost of 3 everywhere gives g^sc = 3 * score
        sets.add_batch(x, log_density(q, x) + 3.0, q.lam)
        assert baseline_coefficient(q, sets) == pytest.approx(3.0, abs=1e-10)

    def test_independent_loop_implementation(self):
        rng = np.random.default_rng(9)
        target = GaussianTarget([0.5, -0.5], [0.1, 0.1])
        q_old = mean_field([0.1, 0.0], [0.0, -0.2])
        q = mean_field([0.2, -0.1], [-0.1, -0.3])
        sets = filled_sets(q, target, rng, [500, 500], [q_old, q])
        x, phi = sets.samples, sets.logjoint
        w = []
        for s in range(x.shape[0]):
            proposal = 0.5 * np.exp(log_density(q_old, x[s])) + 0.5 * np.exp(log_density(q, x[s]))
            w.append(np.exp(log_density(q, x[s])) / proposal)
        total = sum(w)
        n_par = q.lam.size
        s_mean = [sum(w[s] * score(q, x[s])[c] for s in range(len(w))) / total for c in range(n_par)]
        g_all = [score(q, x[s]) * (phi[s] - log_density(q, x[s])) for s in range(len(w))]
        g_mean = [sum(w[s] * g_all[s][c] for s in range(len(w))) / total for c in range(n_par)]
        cov = var = 0.0
        for s in range(len(w)):
            sc = score(q, x[s])
            for c in range(n_par):
                cov += w[s] * (sc[c] - s_mean[c]) * (g_all[s][c] - g_mean[c]) / total
                var += w[s] * (sc[c] - s_mean[c]) ** 2 / total
        assert baseline_coefficient(q, sets) == pytest.approx(cov / var, rel=1e-12)


class TestElboGradient:
    def test_unit_weights_equal_plain_estimator(self):
        rng = np.random.default_rng(10)
        target = GaussianTarget([0.5, -0.5], [0.1, 0.1])
        q = mean_field([0.2, -0.1], [-0.1, -0.3])
        sets = filled_sets(q, target, rng, [32, 32])
        x, phi = sets.samples, sets.logjoint
        s = score(q, x)
        g = s * (phi - log_density(q, x))[:, None]
        sc, gc = s - s.mean(0), g - g.mean(0)
        a = np.sum(sc * gc) / np.sum(sc * sc)
        plain = g.mean(0) - a * s.mean(0)
        np.testing.assert_allclose(elbo_gradient(q, sets).gradient, plain, rtol=0, atol=1e-12)

    def test_baseline_off_is_pure_is_estimator(self):
        rng = np.random.default_rng(11)
        target = GaussianTarget([0.5, -0.5], [0.1, 0.1])
        q_old = mean_field([0.1, 0.0], [0.0, -0.2])
        q = mean_field([0.2, -0.1], [-0.1, -0.3])
        sets = filled_sets(q, target, rng, [32, 32], [q_old, q])
        w = is_weights(q, sets).weights
        x = sets.samples
        expected = (w[:, None] * score_gradient_raw(q, x, sets.logjoint)).mean(0)
        np.testing.assert_allclose(elbo_gradient(q, sets, baseline=False).gradient, expected, rtol=0, atol=1e-12)

    def test_elbo_estimate(self):
        rng = np.random.default_rng(12)
        target = GaussianTarget([0.0], [1.0])
        q = mean_field([0.0], [0.0])
        sets = filled_sets(q, target, rng, [16])
        est = elbo_gradient(q, sets)
        assert est.elbo == pytest.approx(0.0, abs=1e-12)
        assert est.ess == pytest.approx(16.0)
        assert est.n_samples == 16

    @pytest.mark.parametrize("baseline", [True, False])
    def test_unbiased_with_stale_proposal(self, baseline):
        rng = np.random.default_rng(13)
        target = GaussianTarget([0.5, -0.5], [0.1, 0.1])
        q_a = mean_field([0.1, 0.0], [-0.6, -0.7])
        q_b = mean_field([0.25, -0.15], [-0.7, -0.6])
        q = mean_field([0.2, -0.1], [-0.65, -0.65])
        reps = np.array([
            elbo_gradient(q, filled_sets(q, target, rng, [32, 32], [q_a, q_b]), baseline=baseline).gradient
            for _ in range(500)
        ])
        se = reps.std(axis=0, ddof=1) / np.sqrt(reps.shape[0])
        assert np.all(np.abs(reps.mean(0) - analytic_gradient(q, target)) <= 5 * se)

    @pytest.mark.parametrize("d", [1, 2, 4])
    def test_baseline_does_not_bias_and_reduces_variance(self, d):
        rng = np.random.default_rng(14 + d)
        target = GaussianTarget(np.full(d, 0.3), np.full(d, 0.1))
        q = mean_field(np.zeros(d), np.full(d, np.log(0.5)))
        with_a, without = [], []
        for _ in range(500):
            sets = filled_sets(q, target, rng, [64])
            with_a.append(elbo_gradient(q, sets, baseline=True).gradient)
            without.append(elbo_gradient(q, sets, baseline=False).gradient)
        with_a, without = np.array(with_a), np.array(without)
        se = np.sqrt(with_a.var(0, ddof=1) / 500 + without.var(0, ddof=1) / 500)
        assert np.all(np.abs(with_a.mean(0) - without.mean(0)) <= 5 * se)
        assert np.sum(with_a.var(0)) <= np.sum(without.var(0))


class TestScoreErrors:
    def test_is_error_shrinks_with_m(self):
        rng = np.random.default_rng(20)
        q = mean_field([0.1, -0.2], [0.0, -0.3])
        target = GaussianTarget([0, 0], [1, 1])

        def mean_sq(m):
            return np.mean([np.sum(score_error_is(q, filled_sets(q, target, rng, [m])) ** 2) for _ in range(200)])

        assert mean_sq(64) / mean_sq(128) == pytest.approx(2.0, rel=0.2)

    def test_single_sample_at_mean(self):
        q = mean_field([0.5, -1.0], [0.2, 0.1])
        sets = EvaluationSets(q.family)
        sets.add_batch([[0.5, -1.0]], [0.0], q.lam)
        np.testing.assert_allclose(score_error_is(q, sets), [0, 0, -1, -1])

    def test_zero_weights_give_zero(self):
        q = mean_field([0.5, -1.0], [0.2, 0.1])
        sets = filled_sets(q, GaussianTarget([0, 0], [1, 1]), np.random.default_rng(0), [8])
        w = is_weights(q, sets)
        w.weights[:] = 0.0
        np.testing.assert_array_equal(score_error_is(q, sets, w), 0.0)

    def test_reference_expectation_zero(self):
        rng = np.random.default_rng(21)
        q = mean_field([0.5, -1.0], [0.2, 0.1])
        reps = np.array([score_error_ref(q, 8, rng) for _ in range(2000)])
        se = reps.std(0, ddof=1) / np.sqrt(reps.shape[0])
        assert np.all(np.abs(reps.mean(0)) <= 5 * se)

    def test_reference_draw_at_mean(self):
        class ZeroNormal:
            def standard_normal(self, shape):
                return np.zeros(shape)

        q = mean_field([0.5, -1.0], np.log(1e-8))
        np.testing.assert_array_equal(score_error_ref(q, 1, ZeroNormal()), [0, 0, -1, -1])

    def test_reference_deterministic(self):
        q = mean_field([0.5, -1.0], [0.2, 0.1])
        a = score_error_ref(q, 8, np.random.default_rng(42))
        b = score_error_ref(q, 8, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)


class TestANorm:
    def test_identity(self):
        assert a_norm([3.0, 4.0]) == pytest.approx(5.0)

    def test_diagonal(self):
        assert a_norm([2.0], [4.0]) == pytest.approx(1.0)

    def test_zero(self):
        assert a_norm(np.zeros(3), np.ones(3)) == 0.0

    def test_matrix_form(self):
        assert a_norm([2.0, 1.0], np.diag([4.0, 1.0])) == pytest.approx(np.sqrt(2.0))

    def test_non_positive(self):
        with pytest.raises(NumericalError):
            a_norm([1.0], [0.0])
