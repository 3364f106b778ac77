import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from acssb.core import (
    ModelPlugin,
    PosteriorDraws,
    StageError,
    TestConfig,
    TestOutcome,
    compute_pvalue,
    log_copy_target,
    run_test,
)
from acssb.distributions import normal_logpdf
from acssb.mcmc import CopySet
from acssb.rng import derive_seed, substream

# dataclasses, not test classes
TestConfig.__test__ = False
TestOutcome.__test__ = False


class TestComputePvalue:
    def test_empty_copies(self):
        assert compute_pvalue(1.0, []) == 1.0

    def test_ties_count(self):
        assert compute_pvalue(5.0, [3.0, 7.0, 5.0]) == 0.75

    def test_minimal_value(self):
        t = list(np.linspace(0.0, 9.0, 299))
        assert compute_pvalue(10.0, t) == 1.0 / 300.0

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            compute_pvalue(np.nan, [1.0])
        with pytest.raises(ValueError):
            compute_pvalue(1.0, [np.nan, 2.0])
        with pytest.raises(ValueError):
            compute_pvalue(np.inf, [1.0])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            t = list(rng.standard_normal(rng.integers(1, 30)))
            t_obs = float(rng.standard_normal())
            p = compute_pvalue(t_obs, t)
            rng.shuffle(t)
            assert compute_pvalue(t_obs, t) == p

    def test_monotone_in_t_obs(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            t = list(rng.standard_normal(20))
            a, b = sorted(rng.standard_normal(2))
            assert compute_pvalue(b, t) <= compute_pvalue(a, t)

    def test_grid_property(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            m = int(rng.integers(1, 40))
            t = list(rng.standard_normal(m))
            p = compute_pvalue(float(rng.standard_normal()), t)
            k = p * (m + 1)
            assert abs(k - round(k)) < 1e-9
            assert 1 <= round(k) <= m + 1


# --- discrete toy model: 3-point sample space, 2-point parameter space ------ #

LIK = np.array([[0.5, 0.3, 0.2], [0.3, 0.4, 0.3]])
PRIOR = np.array([0.5, 0.5])
MARGINAL = PRIOR @ LIK


class DiscreteToyModel:
    """Exact everything: categorical posterior and iid copies from the copy law."""

    name = "discrete-toy"

    def log_likelihood(self, params, data):
        return float(np.log(LIK[params, data]))

    def log_prior(self, params):
        return float(np.log(PRIOR[params]))

    def posterior_probs(self, data):
        w = PRIOR * LIK[:, data]
        return w / w.sum()

    def sample_posterior(self, data, count, chain, rng):
        p = self.posterior_probs(data)
        return PosteriorDraws(params=list(rng.choice(2, size=count, p=p)))

    def log_marginal_hat(self, data):
        return float(np.log(MARGINAL[data]))

    def copy_probs(self, params):
        logs = np.array([log_copy_target(self, params, y) for y in range(3)])
        w = np.exp(logs - logs.max())
        return w / w.sum()

    def sample_copies(self, data, draws, count, rng):
        p = self.copy_probs(draws.params)
        return CopySet(copies=list(rng.choice(3, size=count, p=p)))


class TestLogCopyTarget:
    def test_single_draw_reduces_to_likelihood(self):
        model = DiscreteToyModel()
        for x in range(3):
            assert_allclose(log_copy_target(model, [1], x), np.log(LIK[1, x]), atol=1e-12)

    def test_marginal_cancellation(self):
        # one-parameter family: likelihood and marginal coincide, so two
        # conditioning draws collapse back to a single log density
        class Single:
            def log_likelihood(self, params, data):
                return normal_logpdf(data, 0.0, 1.0)

            def log_marginal_hat(self, data):
                return normal_logpdf(data, 0.0, 1.0)

        m = Single()
        x = 0.7
        assert_allclose(log_copy_target(m, [0, 0], x), normal_logpdf(x, 0.0, 1.0), atol=1e-12)

    def test_enumeration_oracle(self):
        # direct product-form evaluation, no logs
        model = DiscreteToyModel()
        for params in ([0, 0, 1], [1, 1, 1], [0, 1]):
            B = len(params)
            direct = np.array(
                [np.prod(LIK[params, y]) / MARGINAL[y] ** (B - 1) for y in range(3)]
            )
            direct /= direct.sum()
            assert_allclose(model.copy_probs(params), direct, atol=1e-12)

    def test_empty_draws_error(self):
        with pytest.raises(ValueError):
            log_copy_target(DiscreteToyModel(), [], 0)


# --- conjugate normal toy: exact posterior and exact iid copy sampler ------- #


class ConjugateNormalModel:
    """theta ~ N(0,1), X | theta ~ N(theta,1), one observation."""

    name = "conjugate-normal"

    def log_likelihood(self, params, data):
        return float(normal_logpdf(data, params, 1.0))

    def log_prior(self, params):
        return float(normal_logpdf(params, 0.0, 1.0))

    def sample_posterior(self, data, count, chain, rng):
        draws = data / 2.0 + np.sqrt(0.5) * rng.standard_normal(count)
        return PosteriorDraws(params=list(draws))

    def log_marginal_hat(self, data):
        return float(normal_logpdf(data, 0.0, 2.0))

    def sample_copies(self, data, draws, count, rng):
        prec = (len(draws) + 1) / 2.0
        mean = sum(draws.params) / prec
        copies = mean + rng.standard_normal(count) / np.sqrt(prec)
        return CopySet(copies=list(copies))


class WastefulPosteriorModel(ConjugateNormalModel):
    """Same draws, but burns extra randomness after producing them."""

    def sample_posterior(self, data, count, chain, rng):
        out = super().sample_posterior(data, count, chain, rng)
        rng.random(100)
        return out


def outcomes_equal(a: TestOutcome, b: TestOutcome) -> bool:
    return (
        a.pval == b.pval
        and a.t_obs == b.t_obs
        and np.array_equal(a.t_copies, b.t_copies)
        and a.posterior.params == b.posterior.params
    )


class TestRunTest:
    def test_zero_copies_forces_pval_one(self):
        out = run_test(ConjugateNormalModel(), 0.3, abs, TestConfig(B=3, M=0, seed=1))
        assert out.pval == 1.0
        assert out.copies is None

    def test_deterministic_given_seed(self):
        cfg = TestConfig(B=4, M=7, seed=42)
        a = run_test(ConjugateNormalModel(), 1.2, abs, cfg)
        b = run_test(ConjugateNormalModel(), 1.2, abs, cfg)
        assert outcomes_equal(a, b)

    def test_seed_changes_output(self):
        a = run_test(ConjugateNormalModel(), 1.2, abs, TestConfig(B=4, M=7, seed=1))
        b = run_test(ConjugateNormalModel(), 1.2, abs, TestConfig(B=4, M=7, seed=2))
        assert not outcomes_equal(a, b)

    def test_stage_substreams_are_independent(self):
        # extra rng consumption inside the posterior stage must not leak into
        # the copy stage
        cfg = TestConfig(B=4, M=7, seed=9)
        a = run_test(ConjugateNormalModel(), 0.5, abs, cfg)
        b = run_test(WastefulPosteriorModel(), 0.5, abs, cfg)
        assert outcomes_equal(a, b)

    def test_posterior_failure_named(self):
        class Broken(ConjugateNormalModel):
            def sample_posterior(self, data, count, chain, rng):
                raise RuntimeError("bang")

        with pytest.raises(StageError, match="posterior"):
            run_test(Broken(), 0.0, abs, TestConfig(B=2, M=3, seed=0))

    def test_wrong_draw_count_named(self):
        class Short(ConjugateNormalModel):
            def sample_posterior(self, data, count, chain, rng):
                return super().sample_posterior(data, count - 1, chain, rng)

        with pytest.raises(StageError, match="posterior"):
            run_test(Short(), 0.0, abs, TestConfig(B=2, M=3, seed=0))

    def test_nan_statistic_named(self):
        with pytest.raises(StageError, match="statistic"):
            run_test(ConjugateNormalModel(), 0.0, lambda d: np.nan, TestConfig(B=2, M=3, seed=0))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TestConfig(B=0).validate()
        with pytest.raises(ValueError):
            TestConfig(thin=0).validate()

    def test_plugin_protocol(self):
        assert isinstance(ConjugateNormalModel(), ModelPlugin)
        assert isinstance(DiscreteToyModel(), ModelPlugin)

    def test_pval_on_grid(self):
        out = run_test(ConjugateNormalModel(), 0.3, abs, TestConfig(B=3, M=9, seed=5))
        k = out.pval * 10
        assert abs(k - round(k)) < 1e-9


class TestCalibration:
    def test_conjugate_null_rejection_rate(self):
        # 2000 independent runs on the conjugate toy; rejection at alpha=0.05
        # must sit inside [0.03, 0.07]
        model = ConjugateNormalModel()
        master = 20260822
        rejections = 0
        trials = 2000
        for i in range(trials):
            data_rng = substream(master, "data", i)
            theta0 = data_rng.standard_normal()
            x = theta0 + data_rng.standard_normal()
            out = run_test(model, x, abs, TestConfig(B=5, M=19, seed=derive_seed(master, i)))
            rejections += out.pval <= 0.05
        rate = rejections / trials
        assert 0.03 <= rate <= 0.07


class TestExchangeabilityLargeB:
    def test_joint_law_near_exchangeable(self):
        # law of (X, copy) under the pipeline at B=200, theta0 = first row;
        # the average over posterior draws collapses to a binomial sum over
        # the draw counts, so the law is exact
        model = DiscreteToyModel()
        B = 200
        P = np.zeros((3, 3))
        for x in range(3):
            pa = model.posterior_probs(x)[0]
            wk = stats.binom.pmf(np.arange(B + 1), B, pa)
            for k in range(B + 1):
                if wk[k] < 1e-16:
                    continue
                P[x] += wk[k] * model.copy_probs([0] * k + [1] * (B - k))
            P[x] *= LIK[0, x]
        assert_allclose(P.sum(), 1.0, atol=1e-9)
        tv = 0.5 * np.abs(P - P.T).sum()
        assert tv <= 0.02

    def test_pipeline_smoke_at_large_b(self):
        out = run_test(
            DiscreteToyModel(), 1, lambda d: float(d), TestConfig(B=200, M=3, seed=3)
        )
        assert out.pval in {0.25, 0.5, 0.75, 1.0}


class TestSubstreams:
    def test_reproducible(self):
        a = substream(5, "posterior").random(4)
        b = substream(5, "posterior").random(4)
        assert np.array_equal(a, b)

    def test_labels_separate_streams(self):
        a = substream(5, "posterior").random(4)
        b = substream(5, "copies").random(4)
        assert not np.array_equal(a, b)

    def test_integer_labels(self):
        a = substream(5, "trial", 3).random(4)
        b = substream(5, "trial", 4).random(4)
        assert not np.array_equal(a, b)

    def test_derive_seed_stable(self):
        assert derive_seed(7, "x", 1) == derive_seed(7, "x", 1)
        assert derive_seed(7, "x", 1) != derive_seed(7, "x", 2)
        assert 0 <= derive_seed(7, "x", 1) < 2**63
