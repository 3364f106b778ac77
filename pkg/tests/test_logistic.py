"""Tests for the logistic-regression model."""

import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import expit

from acssb.core import TestConfig, log_copy_target, run_test
from acssb.mcmc import ChainConfig
from acssb.models.logistic import (
    LogisticData,
    LogisticModel,
    LogisticParams,
    conditional_prob_zero,
    posterior_mode_and_hessian,
)
from acssb.numerics import fd_hessian


def _design_data(seed, n=100, d=5):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, d))
    x = (rng.random(n) < expit(z @ np.full(d, 0.2))).astype(float)
    return LogisticData(x=x, z=z)


def _psi(theta, data):
    model = LogisticModel()
    p = LogisticParams(theta=theta)
    return model.log_likelihood(p, data) + model.log_prior(p)


class TestLogisticData:
    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            LogisticData(x=np.array([0.0, 0.5]), z=np.zeros((2, 1)))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            LogisticData(x=np.array([0.0, 1.0]), z=np.zeros((3, 1)))

    def test_carries_optional_y(self):
        data = LogisticData(x=np.array([0.0, 1.0]), z=np.zeros((2, 1)), y=np.array([1.5, -2.0]))
        assert data.y is not None and data.y[1] == -2.0
        assert _design_data(0).y is None


class TestLogLikelihood:
    def test_zero_theta(self):
        data = _design_data(1, n=40, d=3)
        model = LogisticModel()
        ll = model.log_likelihood(LogisticParams(theta=np.zeros(3)), data)
        assert ll == pytest.approx(-40 * math.log(2), abs=1e-12)

    def test_single_point_at_zero_logit(self):
        data = LogisticData(x=np.array([1.0]), z=np.zeros((1, 2)))
        ll = LogisticModel().log_likelihood(LogisticParams(theta=np.array([1.3, -0.4])), data)
        assert ll == pytest.approx(-math.log(2), abs=1e-12)

    def test_matches_direct_product(self):
        rng = np.random.default_rng(2)
        z = rng.standard_normal((12, 3))
        theta = rng.normal(0, 0.5, size=3)
        x = (rng.random(12) < 0.5).astype(float)
        eta = z @ theta
        prod = np.prod(
            (np.exp(eta) / (1 + np.exp(eta))) ** x * (1 / (1 + np.exp(eta))) ** (1 - x)
        )
        ll = LogisticModel().log_likelihood(LogisticParams(theta=theta), LogisticData(x=x, z=z))
        assert ll == pytest.approx(math.log(prod), rel=1e-10)


class TestPosteriorMode:
    def test_zero_design_prior_dominates(self):
        data = LogisticData(x=np.array([0.0, 1.0, 1.0]), z=np.zeros((3, 4)))
        res = posterior_mode_and_hessian(data)
        assert np.allclose(res.x, 0.0, atol=1e-10)
        assert np.allclose(res.neg_hessian, np.eye(4), atol=1e-12)

    def test_hessian_matches_finite_differences(self):
        for seed in range(10):
            data = _design_data(seed, n=30, d=4)
            res = posterior_mode_and_hessian(data)
            fd = -fd_hessian(lambda t: _psi(t, data), res.x)
            assert np.max(np.abs(fd - res.neg_hessian)) <= 1e-4

    def test_one_dimensional_grid_oracle(self):
        data = LogisticData(x=np.array([1.0, 0.0]), z=np.array([[1.0], [-1.0]]))
        grid = np.arange(-2.0, 2.0, 1e-5)
        vals = (
            grid
            - np.logaddexp(0.0, grid)
            - np.logaddexp(0.0, -grid)
            - 0.5 * grid**2
            - 0.5 * math.log(2 * math.pi)
        )
        best = grid[int(np.argmax(vals))]
        res = posterior_mode_and_hessian(data)
        assert res.x[0] == pytest.approx(best, abs=1e-3)


class TestSamplePosterior:
    def test_zero_design_recovers_prior(self):
        data = LogisticData(x=(np.arange(10) % 2).astype(float), z=np.zeros((10, 3)))
        model = LogisticModel()
        draws = model.sample_posterior(data, 2000, ChainConfig(), np.random.default_rng(3))
        thetas = np.array([p.theta for p in draws.params])
        assert draws.diagnostics["acceptance_rate"] > 0.999
        se = 1 / math.sqrt(2000)
        assert np.all(np.abs(thetas.mean(axis=0)) < 4 * se)
        assert np.all(np.abs(thetas.std(axis=0) - 1.0) < 4 / math.sqrt(2 * 2000))

    def test_one_dimensional_quadrature_histogram(self):
        data = LogisticData(x=np.array([1.0]), z=np.array([[1.0]]))
        model = LogisticModel()
        draws = model.sample_posterior(
            data, 20000, ChainConfig(burn_in=500, thin=2), np.random.default_rng(7)
        )
        sample = np.array([p.theta[0] for p in draws.params])
        grid = np.linspace(-8, 8, 4001)
        dens = expit(grid) * np.exp(-0.5 * grid**2)
        dens /= np.trapezoid(dens, grid)
        edges = np.linspace(-4, 4, 51)
        obs, _ = np.histogram(sample, bins=edges)
        expected = np.array(
            [
                np.trapezoid(dens[(grid >= a) & (grid <= b)], grid[(grid >= a) & (grid <= b)])
                for a, b in zip(edges[:-1], edges[1:])
            ]
        ) * sample.size
        keep = expected >= 10
        chi2 = float(np.sum((obs[keep] - expected[keep]) ** 2 / expected[keep]))
        assert stats.chi2.sf(chi2, int(keep.sum()) - 1) > 1e-3

    def test_acceptance_healthy_at_design_scale(self):
        data = _design_data(14)
        model = LogisticModel()
        draws = model.sample_posterior(data, 50, ChainConfig(), np.random.default_rng(1))
        assert draws.diagnostics["acceptance_rate"] > 0.5
        assert len(draws) == 50


class TestLogMarginalHat:
    def test_zero_design_exact(self):
        data = LogisticData(x=np.array([0.0, 1.0, 1.0, 0.0]), z=np.zeros((4, 2)))
        assert LogisticModel().log_marginal_hat(data) == pytest.approx(-4 * math.log(2), abs=1e-10)

    def test_matches_quadrature_one_dim(self):
        rng = np.random.default_rng(5)
        z = rng.standard_normal((3, 1))
        data = LogisticData(x=np.array([1.0, 0.0, 1.0]), z=z)
        grid = np.linspace(-9, 9, 8001)
        eta = z @ grid[None, :]  # (3, grid)
        loglik = data.x @ eta - np.logaddexp(0.0, eta).sum(axis=0)
        integrand = np.exp(loglik) * stats.norm.pdf(grid)
        oracle = math.log(float(np.trapezoid(integrand, grid)))
        assert LogisticModel().log_marginal_hat(data) == pytest.approx(oracle, abs=0.05)

    def test_duplicating_data_lowers_marginal(self):
        data = _design_data(9, n=30, d=3)
        doubled = LogisticData(
            x=np.concatenate([data.x, data.x]), z=np.vstack([data.z, data.z])
        )
        model = LogisticModel()
        assert model.log_marginal_hat(doubled) < model.log_marginal_hat(data)


class TestSampleCopies:
    def test_single_draw_zero_theta_is_fair_coin(self):
        data = _design_data(20, n=30, d=4)
        params = [LogisticParams(theta=np.zeros(4))]
        assert conditional_prob_zero(data, params, 11) == 0.5
        model = LogisticModel()
        from acssb.core import PosteriorDraws

        copies = model.sample_copies(data, PosteriorDraws(params=params), 15, np.random.default_rng(21))
        assert len(copies.copies) == 15
        for c in copies.copies:
            assert c.x.size == 30
            assert np.all((c.x == 0.0) | (c.x == 1.0))

    def test_two_point_conditional_matches_enumeration(self):
        z = np.array([[0.7, -0.3], [0.4, 1.1]])
        params = [
            LogisticParams(theta=np.array([0.5, -0.2])),
            LogisticParams(theta=np.array([-0.3, 0.8])),
            LogisticParams(theta=np.array([1.0, 0.1])),
        ]
        model = LogisticModel()
        for first in (0.0, 1.0):
            base = LogisticData(x=np.array([first, 0.0]), z=z)
            targets = {}
            for v in (0.0, 1.0):
                targets[v] = log_copy_target(model, params, base.with_x(np.array([first, v])))
            m = max(targets.values())
            brute = math.exp(targets[0.0] - m) / (
                math.exp(targets[0.0] - m) + math.exp(targets[1.0] - m)
            )
            assert conditional_prob_zero(base, params, 1) == pytest.approx(brute, abs=1e-12)

    def test_conditional_probabilities_strictly_interior(self):
        data = _design_data(22)
        model = LogisticModel()
        draws = model.sample_posterior(data, 10, ChainConfig(burn_in=100, thin=2), np.random.default_rng(23))
        for i in (0, 17, 50, 99):
            p0 = conditional_prob_zero(data, draws.params, i)
            assert 0.0 < p0 < 1.0

    def test_deterministic_given_seed(self):
        data = _design_data(24, n=25, d=3)
        model = LogisticModel()
        draws = model.sample_posterior(data, 3, ChainConfig(burn_in=50, thin=2), np.random.default_rng(25))
        a = model.sample_copies(data, draws, 8, np.random.default_rng(26))
        b = model.sample_copies(data, draws, 8, np.random.default_rng(26))
        assert all(np.array_equal(u.x, v.x) for u, v in zip(a.copies, b.copies))

    def test_zero_design_pipeline_uniform_pvalues(self):
        # with no covariate effect the null is a fair coin regardless of theta,
        # the copies are exact, and the p-value is uniform on its grid
        n, n_trials, m = 16, 2000, 9
        rng = np.random.default_rng(30)
        weights = rng.standard_normal(n)
        z = np.zeros((n, 2))
        model = LogisticModel()
        pvals = np.empty(n_trials)
        for t in range(n_trials):
            x = (rng.random(n) < 0.5).astype(float)
            data = LogisticData(x=x, z=z)
            outcome = run_test(
                model,
                data,
                lambda d: float(weights @ d.x),
                TestConfig(B=2, M=m, burn_in=50, thin=2, seed=1000 + t),
            )
            pvals[t] = outcome.pval
        smooth = pvals - rng.random(n_trials) / (m + 1)
        assert stats.kstest(smooth, "uniform").pvalue > 0.01
