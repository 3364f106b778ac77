"""Tests for the experiment statistics and their native solvers."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats as sps

from acssb.stats import (
    GroupLassoWorkspace,
    _ratio_from_beta,
    _slice_indices,
    cv_group_lasso,
    fit_one_knot_spline,
    group_lasso_fit,
    lambda_grid,
    lambda_max,
    stat_group_ratio,
    stat_kmeans_ratio,
    stat_second_eigenvalue,
    stat_sir,
    stat_spline_rss,
)


def _perm_pvalue(t_obs, t_perm, rng=None):
    """Permutation p-value; smoothed to continuous uniform when rng is given."""
    t_perm = np.asarray(t_perm)
    p = (1 + np.sum(t_perm >= t_obs)) / (t_perm.size + 1)
    if rng is None:
        return p
    return p - rng.random() / (t_perm.size + 1)


class TestSlicedInverseRegression:
    def test_slice_sizes_balanced(self):
        y = np.random.default_rng(0).normal(size=100)
        sizes = [idx.size for idx in _slice_indices(y, 10)]
        assert sizes == [10] * 10

    def test_slices_follow_y_order(self):
        y = np.array([3.0, 1.0, 2.0, 0.0])
        slices = _slice_indices(y, 2)
        assert sorted(slices[0].tolist()) == [1, 3]
        assert sorted(slices[1].tolist()) == [0, 2]

    def test_matching_lengths_required(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            stat_sir(rng.normal(size=10), rng.normal(size=11), rng.normal(size=(10, 2)))

    def test_null_concentrates_near_permutation_mean(self):
        rng = np.random.default_rng(7)
        n = 10_000
        x = rng.integers(0, 2, n).astype(float)
        y = rng.normal(size=n)
        z = rng.normal(size=(n, 5))
        t_obs = stat_sir(x, y, z)
        t_perm = np.array([stat_sir(x, rng.permutation(y), z) for _ in range(200)])
        assert abs(t_obs - t_perm.mean()) < 4 * t_perm.std()

    def test_null_permutation_pvalues_uniform(self):
        rng = np.random.default_rng(42)
        n, n_perm, reps = 10_000, 39, 200
        pvals = np.empty(reps)
        for r in range(reps):
            x = rng.integers(0, 2, n).astype(float)
            y = rng.normal(size=n)
            z = rng.normal(size=(n, 5))
            t_obs = stat_sir(x, y, z)
            t_perm = [stat_sir(x, rng.permutation(y), z) for _ in range(n_perm)]
            pvals[r] = _perm_pvalue(t_obs, t_perm, rng)
        assert sps.kstest(pvals, "uniform").pvalue > 0.01

    def test_strong_signal_exceeds_permutation_tail(self):
        rng = np.random.default_rng(3)
        n = 2000
        x = rng.integers(0, 2, n).astype(float)
        z = rng.normal(size=(n, 5))
        y = x + 0.05 * rng.normal(size=n)
        t_obs = stat_sir(x, y, z)
        t_perm = np.array([stat_sir(x, rng.permutation(y), z) for _ in range(300)])
        assert t_obs > np.quantile(t_perm, 0.99)


class TestKmeansRatio:
    def test_all_points_equal_is_one(self):
        assert stat_kmeans_ratio(np.full(50, 1.7)) == 1.0

    def test_three_tight_clusters_large_ratio(self):
        rng = np.random.default_rng(11)
        x = np.concatenate([
            rng.normal(-0.4, 0.05, 67),
            rng.normal(0.0, 0.05, 67),
            rng.normal(0.4, 0.05, 66),
        ])
        assert stat_kmeans_ratio(x) >= 5.0

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=200)
        assert stat_kmeans_ratio(x) == stat_kmeans_ratio(rng.permutation(x))

    def test_deterministic_and_independent_of_global_state(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=150)
        np.random.seed(1)
        v1 = stat_kmeans_ratio(x)
        np.random.seed(99)
        v2 = stat_kmeans_ratio(x)
        assert v1 == v2


class TestSecondEigenvalue:
    def test_rank_one_gives_zero(self):
        e1 = np.zeros(5)
        e1[0] = 1.0
        assert abs(stat_second_eigenvalue(np.outer(e1, e1))) < 1e-12

    def test_diagonal_example(self):
        assert_allclose(stat_second_eigenvalue(np.diag([3.0, 2.0, 1.0])), 4.0, rtol=1e-12)

    def test_matches_singular_values(self):
        x = np.random.default_rng(2).normal(size=(10, 10))
        s = np.linalg.svd(x, compute_uv=False)
        assert_allclose(stat_second_eigenvalue(x), s[1] ** 2, atol=1e-8)

    def test_needs_two_columns(self):
        with pytest.raises(ValueError):
            stat_second_eigenvalue(np.ones((4, 1)))


def _group_problem(seed, n=100, d=50, n_groups=10, active=(2,), scales=(1.0,)):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(n, d))
    groups = [np.arange(5 * g, 5 * g + 5) for g in range(n_groups)]
    beta = np.zeros(d)
    for g, s in zip(active, scales):
        beta[groups[g]] = s * rng.normal(size=5)
    x = z @ beta + rng.normal(size=n)
    return x, z, groups, beta


def _kkt_worst(x, z, groups, beta, lam):
    r = x - z @ beta
    worst = 0.0
    for g in groups:
        bg = beta[g]
        sg = z[:, g].T @ r
        lam_g = lam * np.sqrt(len(g))
        if np.abs(bg).max() > 0:
            resid = np.linalg.norm(sg - lam_g * bg / np.linalg.norm(bg))
        else:
            resid = max(0.0, np.linalg.norm(sg) - lam_g)
        worst = max(worst, resid)
    return worst


class TestGroupLasso:
    def test_lambda_max_zeroes_everything(self):
        x, z, groups, _ = _group_problem(0)
        lmax = lambda_max(x, z, groups)
        direct = max(
            np.linalg.norm(z[:, g].T @ x) / np.sqrt(len(g)) for g in groups
        )
        assert_allclose(lmax, direct, rtol=1e-12)
        for lam in (lmax, 1.1 * lmax):
            assert_allclose(group_lasso_fit(x, z, groups, lam), 0.0, atol=1e-12)

    def test_below_lambda_max_is_nonzero(self):
        x, z, groups, _ = _group_problem(0)
        beta = group_lasso_fit(x, z, groups, 0.95 * lambda_max(x, z, groups))
        assert np.abs(beta).max() > 0

    def test_lambda_zero_matches_least_squares(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(30, 10))
        x = rng.normal(size=30)
        groups = [np.arange(0, 5), np.arange(5, 10)]
        beta = group_lasso_fit(x, z, groups, 0.0)
        assert_allclose(beta, np.linalg.lstsq(z, x, rcond=None)[0], atol=1e-6)

    @pytest.mark.parametrize("frac", [0.3, 0.1, 0.01])
    def test_kkt_conditions_at_solution(self, frac):
        x, z, groups, _ = _group_problem(4, active=(2, 7), scales=(1.0, 0.5))
        lam = frac * lambda_max(x, z, groups)
        beta = group_lasso_fit(x, z, groups, lam)
        assert _kkt_worst(x, z, groups, beta, lam) <= 1e-6

    def test_lambda_grid_shape(self):
        x, z, groups, _ = _group_problem(0)
        lams = lambda_grid(x, z, groups)
        assert lams.size == 50
        assert_allclose(lams[0], lambda_max(x, z, groups), rtol=1e-12)
        assert_allclose(lams[-1], 1e-3 * lams[0], rtol=1e-10)
        assert np.all(np.diff(lams) < 0)

    def test_groups_must_partition(self):
        x, z, groups, _ = _group_problem(0)
        with pytest.raises(ValueError):
            group_lasso_fit(x, z, groups[:-1], 1.0)
        with pytest.raises(ValueError):
            group_lasso_fit(x, z, groups + [groups[0]], 1.0)

    def test_nonconvergence_raises(self):
        x, z, groups, _ = _group_problem(4, active=(2, 7), scales=(1.0, 0.5))
        with pytest.raises(RuntimeError, match="converge"):
            group_lasso_fit(x, z, groups, 1e-3 * lambda_max(x, z, groups), max_sweeps=1)

    def test_cv_beta_matches_direct_fit_at_chosen_lambda(self):
        x, z, groups, _ = _group_problem(8)
        beta, lam, mse = cv_group_lasso(x, z, groups, full_output=True)
        assert mse.shape == (50,)
        assert lam in lambda_grid(x, z, groups)
        assert _kkt_worst(x, z, groups, beta, lam) <= 1e-6
        assert_allclose(beta, group_lasso_fit(x, z, groups, lam), atol=1e-6)

    def test_cv_recovers_active_group(self):
        x, z, groups, _ = _group_problem(15, active=(3,), scales=(2.0,))
        beta = cv_group_lasso(x, z, groups)
        norms = [np.abs(beta[g]).max() for g in groups]
        assert int(np.argmax(norms)) == 3

    def test_workspace_matches_fresh_solve(self):
        x, z, groups, _ = _group_problem(21, active=(1, 6), scales=(1.0, 1.0))
        ws = GroupLassoWorkspace(z, groups)
        assert np.array_equal(
            cv_group_lasso(x, z, groups, workspace=ws), cv_group_lasso(x, z, groups)
        )


class TestGroupRatio:
    def test_single_group_support_is_zero(self):
        beta = np.zeros(20)
        beta[5:10] = [1.0, -2.0, 0.5, 0.0, 3.0]
        groups = [np.arange(5 * g, 5 * g + 5) for g in range(4)]
        assert _ratio_from_beta(beta, groups) == 0.0

    def test_two_equal_groups_is_one(self):
        beta = np.zeros(20)
        beta[0] = 1.0
        beta[17] = -1.0
        groups = [np.arange(5 * g, 5 * g + 5) for g in range(4)]
        assert _ratio_from_beta(beta, groups) == 1.0

    def test_all_zero_fit_is_zero(self):
        groups = [np.arange(5 * g, 5 * g + 5) for g in range(4)]
        assert _ratio_from_beta(np.zeros(20), groups) == 0.0

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(33)
        beta = rng.normal(size=20)
        groups = [np.arange(5 * g, 5 * g + 5) for g in range(4)]
        norms = np.array([np.abs(beta[g]).max() for g in groups])
        top = int(np.argmax(norms))
        expected = (norms.sum() - norms[top]) / norms[top]
        assert_allclose(_ratio_from_beta(beta, groups), expected, rtol=1e-12)

    def test_end_to_end_consistency(self):
        x, z, groups, _ = _group_problem(12, active=(0, 9), scales=(1.0, 0.7))
        expected = _ratio_from_beta(cv_group_lasso(x, z, groups), groups)
        assert stat_group_ratio(x, z, groups) == expected


class TestOneKnotSpline:
    def test_exact_data_recovered(self):
        rng = np.random.default_rng(6)
        z = rng.uniform(-5.0, 5.0, size=50)
        knots = np.linspace(z.min(), z.max(), 202)[1:-1]
        t_true = knots[120]
        x = 1.0 - z + 1.3 * np.clip(z - t_true, 0.0, None)
        knot, coef, rss = fit_one_knot_spline(x, z)
        assert rss <= 1e-10
        assert_allclose(knot, t_true, rtol=1e-12)
        assert_allclose(coef, [1.0, -1.0, 1.3], atol=1e-7)

    def test_constant_shift_moves_intercept_only(self):
        rng = np.random.default_rng(14)
        z = rng.uniform(-5.0, 5.0, size=60)
        x = 2.0 + 0.5 * z - 1.5 * np.clip(z - 0.8, 0.0, None) + rng.normal(0, 0.5, 60)
        knot1, coef1, rss1 = fit_one_knot_spline(x, z)
        knot2, coef2, rss2 = fit_one_knot_spline(x + 5.0, z)
        assert knot1 == knot2
        assert_allclose(coef2[0] - coef1[0], 5.0, atol=1e-8)
        assert_allclose(coef2[1:], coef1[1:], atol=1e-8)
        assert_allclose(rss2, rss1, atol=1e-9)

    def test_needs_four_points(self):
        with pytest.raises(ValueError):
            fit_one_knot_spline(np.ones(3), np.arange(3.0))

    def test_constant_covariate_rejected(self):
        with pytest.raises(ValueError):
            fit_one_knot_spline(np.arange(5.0), np.ones(5))

    def test_finer_grid_changes_rss_little(self):
        rng = np.random.default_rng(25)
        z = rng.uniform(-5.0, 5.0, size=50)
        x = 1.0 - z + 2.0 * np.clip(z + 1.67, 0.0, None) + rng.normal(0, 0.5, 50)
        _, _, rss200 = fit_one_knot_spline(x, z, n_knots=200)
        _, _, rss400 = fit_one_knot_spline(x, z, n_knots=400)
        assert abs(rss400 - rss200) / rss200 < 0.01

    def test_stat_is_min_rss(self):
        rng = np.random.default_rng(31)
        z = rng.uniform(-5.0, 5.0, size=50)
        x = rng.normal(size=50)
        assert stat_spline_rss(x, z) == fit_one_knot_spline(x, z)[2]


# --- draws mirroring each experiment's data-generating process ---------------


def _draw_logistic(rng, c):
    n, d = 100, 5
    z = rng.normal(size=(n, d))
    theta0 = np.full(d, 0.2)
    x = (rng.random(n) < 1.0 / (1.0 + np.exp(-z @ theta0))).astype(float)
    b = 0.5 * np.clip(z, 0.0, None).sum(axis=1)
    eta = b + c * np.where(x == 0, z[:, 0], z[:, 4])
    y = eta + 0.5 * eta**3
    return x, y, z


def _draw_mixture(rng, p):
    n = 200
    comp = rng.choice(3, size=n, p=[p, (1 - p) / 2, (1 - p) / 2])
    means = np.array([0.0, 0.4, -0.4])
    return means[comp] + 0.1 * rng.normal(size=n)


def _draw_rank1(rng, c):
    n = 10
    u = rng.normal(size=(n, 2))
    v = rng.normal(size=(n, 2))
    a = np.outer(u[:, 0], v[:, 0]) + c * np.outer(u[:, 1], v[:, 1])
    return a + 0.5 * rng.normal(size=(n, n))


def _draw_group(rng, c, groups):
    n, d = 100, 50
    z = rng.normal(size=(n, d))
    g1, g2 = rng.choice(len(groups), size=2, replace=False)
    beta = np.zeros(d)
    beta[groups[g1]] = rng.normal(size=5)
    beta[groups[g2]] = c * rng.normal(size=5)
    return z @ beta + rng.normal(size=n), z


def _draw_spline(rng, c):
    n = 50
    z = rng.uniform(-5.0, 5.0, size=n)
    mean = 1.0 - z + 2.0 * np.clip(z + 1.67, 0.0, None) - c * np.clip(z - 1.67, 0.0, None)
    return mean + 0.5 * rng.normal(size=n), z


class TestFinitenessAndOrientation:
    """Each statistic is finite on its experiment's draws, and its mean under
    the strongest alternative exceeds its mean under the null."""

    N_DRAWS = 1000

    def _check(self, null_vals, alt_vals):
        null_vals = np.asarray(null_vals)
        alt_vals = np.asarray(alt_vals)
        assert np.all(np.isfinite(null_vals))
        assert np.all(np.isfinite(alt_vals))
        assert alt_vals.mean() > null_vals.mean()

    def test_sir_logistic(self):
        rng = np.random.default_rng(101)
        nulls = [stat_sir(*_draw_logistic(rng, 0.0)) for _ in range(self.N_DRAWS)]
        alts = [stat_sir(*_draw_logistic(rng, 1.0)) for _ in range(self.N_DRAWS)]
        self._check(nulls, alts)

    def test_kmeans_mixture(self):
        rng = np.random.default_rng(102)
        nulls = [stat_kmeans_ratio(_draw_mixture(rng, 0.0)) for _ in range(self.N_DRAWS)]
        alts = [stat_kmeans_ratio(_draw_mixture(rng, 0.3)) for _ in range(self.N_DRAWS)]
        self._check(nulls, alts)

    def test_second_eigenvalue_rank1(self):
        rng = np.random.default_rng(103)
        nulls = [stat_second_eigenvalue(_draw_rank1(rng, 0.0)) for _ in range(self.N_DRAWS)]
        alts = [stat_second_eigenvalue(_draw_rank1(rng, 1.0)) for _ in range(self.N_DRAWS)]
        self._check(nulls, alts)

    def test_group_ratio_group_sparse(self):
        rng = np.random.default_rng(104)
        groups = [np.arange(5 * g, 5 * g + 5) for g in range(10)]
        nulls = []
        alts = []
        for _ in range(self.N_DRAWS):
            x, z = _draw_group(rng, 0.0, groups)
            nulls.append(stat_group_ratio(x, z, groups))
            x, z = _draw_group(rng, 1.0, groups)
            alts.append(stat_group_ratio(x, z, groups))
        self._check(nulls, alts)

    def test_spline_rss_spline(self):
        rng = np.random.default_rng(105)
        nulls = [stat_spline_rss(*_draw_spline(rng, 0.0)) for _ in range(self.N_DRAWS)]
        alts = [stat_spline_rss(*_draw_spline(rng, 1.8)) for _ in range(self.N_DRAWS)]
        self._check(nulls, alts)
