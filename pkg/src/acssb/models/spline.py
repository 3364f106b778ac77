"""One-knot linear-spline regression model.

X = gamma0 + gamma1 Z + gamma2 (Z - t1)_+ + noise with N(0, 0.25) entries,
standard normal priors on the three coefficients and on the knot, covariates
Z fixed.  The posterior alternates an exact Gaussian coefficient draw with an
exact knot draw from a mixture of truncated normals over the order-statistic
gaps.  The marginal of X integrates the coefficients in closed form (X given
t1 is Gaussian) and handles the remaining one-dimensional knot integral with
the trapezoid rule on a composite grid anchored at the order statistics;
copies come from a per-coordinate Metropolis-Hastings serial sweep with
Laplace proposals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import special
from scipy.linalg import solve_triangular

from ..core import PosteriorDraws
from ..distributions import (
    categorical_sample,
    log_ndtr_diff,
    normal_logpdf,
    truncnorm_logpdf,
    truncnorm_sample,
)
from ..mcmc import (
    FORWARD,
    AcceptanceTracker,
    ChainConfig,
    CopySet,
    permuted_serial_sampler,
)
from ..numerics import chol_lower, golden_section_mode, newton_mode_1d
from ..stats import fit_one_knot_spline

NOISE_VAR = 0.25

_LOG_2PI = math.log(2.0 * math.pi)
_GRID_SUBDIVISIONS = 20
_GRID_BOUND = 10.0
_FD_STEP = 1e-3


@dataclass(frozen=True)
class SplineParams:
    """Hinge coefficients (gamma0, gamma1, gamma2) and the knot t1."""

    gamma: np.ndarray
    t1: float

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float)
        if gamma.shape != (3,):
            raise ValueError("gamma must be a vector of length 3")
        if not (np.all(np.isfinite(gamma)) and np.isfinite(self.t1)):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "t1", float(self.t1))

    def mean(self, z: np.ndarray) -> np.ndarray:
        return design_matrix(self.t1, z) @ self.gamma


@dataclass(frozen=True)
class SplineData:
    """Response x and fixed covariates z, with the covariate sort cached."""

    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if x.ndim != 1 or z.ndim != 1 or x.size != z.size or x.size == 0:
            raise ValueError("x and z must be vectors of equal nonzero length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            raise ValueError("x and z must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "z_order", np.argsort(z, kind="stable"))

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def z_sorted(self) -> np.ndarray:
        return self.z[self.z_order]

    @property
    def x_sorted(self) -> np.ndarray:
        return self.x[self.z_order]

    def with_x(self, x: np.ndarray) -> "SplineData":
        return replace(self, x=x)


def design_matrix(t1: float, z: np.ndarray) -> np.ndarray:
    """Columns (1, z, (z - t1)_+)."""
    z = np.asarray(z, dtype=float)
    return np.column_stack([np.ones(z.size), z, np.clip(z - t1, 0.0, None)])


def joint_log_density(x: np.ndarray, z: np.ndarray, t1: float) -> float:
    """Log density of (x, t1) with the coefficients integrated out.

    Dense evaluation through the n-by-n covariance h h^T + 0.25 I; the
    quadrature grid uses an equivalent low-rank form, so this doubles as an
    independent cross-check.
    """
    x = np.asarray(x, dtype=float)
    h = design_matrix(t1, z)
    cov = h @ h.T + NOISE_VAR * np.eye(x.size)
    lo = chol_lower(cov)
    w = solve_triangular(lo, x, lower=True, check_finite=False)
    logdet = 2.0 * float(np.sum(np.log(np.diag(lo))))
    return float(
        -0.5 * (x.size * _LOG_2PI + logdet + w @ w) + normal_logpdf(t1)
    )


def gamma_conditional(data: SplineData, t1: float):
    """Mean and covariance of the coefficient conditional given the knot."""
    mean, chol_a = _gamma_mean_chol(data, t1)
    inv_lo = solve_triangular(chol_a, np.eye(3), lower=True, check_finite=False)
    return mean, inv_lo.T @ inv_lo


def _gamma_mean_chol(data: SplineData, t1: float):
    # A = I + 4 h^T h is the conditional precision; returns (mean, chol(A))
    h = design_matrix(t1, data.z)
    a = np.eye(3) + 4.0 * h.T @ h
    lo = chol_lower(a)
    rhs = 4.0 * (h.T @ data.x)
    mean = solve_triangular(
        lo.T, solve_triangular(lo, rhs, lower=True, check_finite=False),
        lower=False, check_finite=False,
    )
    return mean, lo


@dataclass(frozen=True)
class KnotConditional:
    """Knot conditional: categorical over order-statistic gaps, truncated normal within.

    ``log_weights`` are normalized; ``lower``/``upper`` carry the infinite
    sentinels for the outer gaps.
    """

    log_weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def sample(self, rng: np.random.Generator) -> float:
        g = categorical_sample(rng, self.log_weights)
        return truncnorm_sample(
            rng, self.means[g], self.variances[g], self.lower[g], self.upper[g]
        )

    def log_density(self, t1: float) -> float:
        g = int(np.searchsorted(self.lower, t1, side="right")) - 1
        g = min(max(g, 0), self.log_weights.size - 1)
        return float(
            self.log_weights[g]
            + truncnorm_logpdf(
                t1, self.means[g], self.variances[g], self.lower[g], self.upper[g]
            )
        )


def knot_conditional(data: SplineData, gamma: np.ndarray) -> KnotConditional:
    """Exact conditional of the knot given coefficients, data, and covariates.

    On the gap (Z_(i), Z_(i+1)) the hinge is active for the n-i upper order
    statistics only, so the log density is an explicit quadratic in t1; the
    gap weights are Gaussian-mass integrals computed in log space.
    """
    gamma = np.asarray(gamma, dtype=float)
    n = data.n
    zs = data.z_sorted
    xs = data.x_sorted
    base = xs - gamma[0] - gamma[1] * zs  # hinge-inactive residuals
    slope = base - gamma[2] * zs  # residuals with the hinge slope, knot at 0

    zero = np.zeros(1)
    s_below = np.concatenate([zero, np.cumsum(base * base)])
    r1 = np.concatenate([zero, np.cumsum(slope)])
    r1 = r1[-1] - r1
    r2 = np.concatenate([zero, np.cumsum(slope * slope)])
    r2 = r2[-1] - r2

    above = np.arange(n, -1, -1, dtype=float)
    lam = 4.0 * above * gamma[2] ** 2 + 1.0
    mu = -4.0 * gamma[2] * r1 / lam
    lower = np.concatenate([[-np.inf], zs])
    upper = np.concatenate([zs, [np.inf]])
    sqrt_lam = np.sqrt(lam)
    raw = (
        -2.0 * s_below
        - 2.0 * r2
        + 0.5 * lam * mu * mu
        - 0.5 * np.log(lam)
        + 0.5 * _LOG_2PI
        + log_ndtr_diff(sqrt_lam * (lower - mu), sqrt_lam * (upper - mu))
    )
    top = np.max(raw)
    if not np.isfinite(top):
        raise ValueError("all knot-interval weights underflowed")
    log_weights = raw - (top + np.log(np.sum(np.exp(raw - top))))
    return KnotConditional(
        log_weights=log_weights,
        means=mu,
        variances=1.0 / lam,
        lower=lower,
        upper=upper,
    )


class _MarginalGrid:
    """Trapezoid quadrature state for the knot-marginalized density of x.

    Nodes sit at every order statistic (the integrand's kinks) plus
    equally spaced subdivisions of each gap, with sentinel anchors at
    +-bound; everything that depends only on z is precomputed per node.
    """

    def __init__(self, z: np.ndarray, subdivisions: int, bound: float):
        z = np.asarray(z, dtype=float)
        if np.max(np.abs(z)) >= bound:
            raise ValueError("covariates must lie strictly inside the grid bound")
        self.tail_mass = 2.0 * float(special.ndtr(-bound))
        assert self.tail_mass < 1e-20
        anchors = np.concatenate([[-bound], np.unique(z), [bound]])
        pieces = [
            np.linspace(anchors[i], anchors[i + 1], subdivisions + 1)[:-1]
            for i in range(anchors.size - 1)
        ]
        self.nodes = np.concatenate(pieces + [anchors[-1:]])
        self.z = z
        n = z.size
        hinge = np.clip(z[None, :] - self.nodes[:, None], 0.0, None)
        self.hinge_cols = np.ascontiguousarray(hinge.T)

        g = self.nodes.size
        a = np.empty((g, 3, 3))
        a[:, 0, 0] = 1.0 + 4.0 * n
        a[:, 0, 1] = a[:, 1, 0] = 4.0 * float(np.sum(z))
        a[:, 1, 1] = 1.0 + 4.0 * float(z @ z)
        a[:, 0, 2] = a[:, 2, 0] = 4.0 * hinge.sum(axis=1)
        a[:, 1, 2] = a[:, 2, 1] = 4.0 * (hinge @ z)
        a[:, 2, 2] = 1.0 + 4.0 * np.sum(hinge * hinge, axis=1)
        inv = np.linalg.inv(a)
        self.i00 = np.ascontiguousarray(inv[:, 0, 0])
        self.i11 = np.ascontiguousarray(inv[:, 1, 1])
        self.i22 = np.ascontiguousarray(inv[:, 2, 2])
        self.i01 = np.ascontiguousarray(inv[:, 0, 1])
        self.i02 = np.ascontiguousarray(inv[:, 0, 2])
        self.i12 = np.ascontiguousarray(inv[:, 1, 2])
        logdet = np.linalg.slogdet(a)[1]
        # per-node constant: -1/2 logdet A + (n/2) log 4 - (n/2) log 2pi + prior
        self.node_const = (
            -0.5 * logdet
            + 0.5 * n * math.log(4.0)
            - 0.5 * n * _LOG_2PI
            + normal_logpdf(self.nodes)
        )
        self._widths = np.diff(self.nodes)
        self._log_half_width = np.log(self._widths) - math.log(2.0)

    def projections(self, x: np.ndarray):
        return (
            float(np.sum(x)),
            float(self.z @ x),
            self.hinge_cols.T @ x,
            float(x @ x),
        )

    def log_psi(self, b0: float, b1: float, b2: np.ndarray, ssq: float) -> np.ndarray:
        quad = (
            self.i00 * (b0 * b0)
            + self.i11 * (b1 * b1)
            + self.i22 * (b2 * b2)
            + 2.0 * (self.i01 * (b0 * b1) + (self.i02 * b0 + self.i12 * b1) * b2)
        )
        return -2.0 * ssq + 8.0 * quad + self.node_const

    def log_integral(self, b0: float, b1: float, b2: np.ndarray, ssq: float) -> float:
        lv = self.log_psi(b0, b1, b2, ssq)
        seg = np.logaddexp(lv[:-1], lv[1:]) + self._log_half_width
        m = np.max(seg)
        return float(m + np.log(np.sum(np.exp(seg - m))))


_GRID_CACHE: list = []


def _grid_for(z: np.ndarray, subdivisions: int, bound: float) -> _MarginalGrid:
    for zc, sub, bnd, grid in _GRID_CACHE:
        if zc is z and sub == subdivisions and bnd == bound:
            return grid
    grid = _MarginalGrid(z, subdivisions, bound)
    _GRID_CACHE.append((z, subdivisions, bound, grid))
    if len(_GRID_CACHE) > 8:
        del _GRID_CACHE[0]
    return grid


class SplineModel:
    """Model plugin for the one-knot linear-spline null."""

    name = "spline"

    def __init__(self, subdivisions: int = _GRID_SUBDIVISIONS, bound: float = _GRID_BOUND):
        self.subdivisions = subdivisions
        self.bound = bound

    def log_likelihood(self, params: SplineParams, data: SplineData) -> float:
        resid = data.x - params.mean(data.z)
        return float(np.sum(normal_logpdf(resid, 0.0, NOISE_VAR)))

    def log_prior(self, params: SplineParams) -> float:
        return float(np.sum(normal_logpdf(params.gamma))) + float(
            normal_logpdf(params.t1)
        )

    def sample_posterior(
        self,
        data: SplineData,
        count: int,
        chain: ChainConfig,
        rng: np.random.Generator,
    ) -> PosteriorDraws:
        if count < 1:
            raise ValueError("need at least one posterior draw")
        if chain.init is not None:
            t1 = float(chain.init.t1)
        else:
            t1, _, _ = fit_one_knot_spline(data.x, data.z)

        gamma = np.zeros(3)

        def gibbs_step():
            nonlocal gamma, t1
            mean, lo = _gamma_mean_chol(data, t1)
            gamma = mean + solve_triangular(
                lo.T, rng.standard_normal(3), lower=False, check_finite=False
            )
            t1 = knot_conditional(data, gamma).sample(rng)

        for _ in range(chain.burn_in):
            gibbs_step()
        thin = max(1, chain.thin)
        params = []
        for _ in range(count):
            for _ in range(thin):
                gibbs_step()
            params.append(SplineParams(gamma=gamma.copy(), t1=t1))
        return PosteriorDraws(
            params=params,
            diagnostics={"sampler": "gibbs", "burn_in": chain.burn_in, "thin": thin},
        )

    def log_marginal_hat(self, data: SplineData) -> float:
        grid = _grid_for(data.z, self.subdivisions, self.bound)
        return grid.log_integral(*grid.projections(data.x))

    def sample_copies(
        self,
        data: SplineData,
        draws: PosteriorDraws,
        count: int,
        rng: np.random.Generator,
    ) -> CopySet:
        n = data.n
        nb = len(draws)
        z = data.z
        means = np.stack([p.mean(z) for p in draws.params])
        mean_sum = means.sum(axis=0)
        mean_sumsq = np.sum(means * means, axis=0)
        grid = _grid_for(z, self.subdivisions, self.bound)
        tracker = AcceptanceTracker(n)
        mode_fallbacks = 0

        def sweep(state: SplineData, direction: str, sweep_rng: np.random.Generator):
            nonlocal mode_fallbacks
            x = state.x.copy()
            if nb > 1:
                b0, b1, b2, ssq = grid.projections(x)
                logm = grid.log_integral(b0, b1, b2, ssq)
            order = range(n) if direction == FORWARD else range(n - 1, -1, -1)
            for i in order:
                cur = float(x[i])
                s1 = float(mean_sum[i])
                msq = float(mean_sumsq[i])
                zi = float(z[i])
                hcol = grid.hinge_cols[i]

                def lik(v: float) -> float:
                    return -2.0 * (nb * v * v - 2.0 * s1 * v + msq)

                if nb == 1:
                    # the conditional is exactly N(s1, 0.25)
                    t_star, curv = s1, -4.0
                    term_prop = 0.0
                    term_cur = 0.0
                else:
                    def marg_term(v: float) -> float:
                        d = v - cur
                        return -(nb - 1.0) * grid.log_integral(
                            b0 + d, b1 + zi * d, b2 + d * hcol, ssq + v * v - cur * cur
                        )

                    term_cur = -(nb - 1.0) * logm
                    found = newton_mode_1d(s1 / nb, -4.0 * nb, marg_term, cur, term_cur)
                    if found is None:
                        mode_fallbacks += 1
                        t_star = golden_section_mode(
                            lambda v: lik(v) + marg_term(v), s1 / nb
                        )
                        m_plus = marg_term(t_star + _FD_STEP)
                        m_minus = marg_term(t_star - _FD_STEP)
                        m_center = marg_term(t_star)
                        curv = -4.0 * nb + (m_plus - 2.0 * m_center + m_minus) / (
                            _FD_STEP * _FD_STEP
                        )
                        if not curv < -1e-8:
                            curv = -4.0 * nb
                    else:
                        t_star, curv = found
                sd = math.sqrt(-1.0 / curv)
                prop = t_star + sd * float(sweep_rng.standard_normal())
                if nb > 1:
                    term_prop = marg_term(prop)
                log_ratio = (
                    lik(prop)
                    + term_prop
                    - lik(cur)
                    - term_cur
                    + ((prop - t_star) ** 2 - (cur - t_star) ** 2) * (-0.5 * curv)
                )
                accept = math.log(sweep_rng.random()) < log_ratio
                tracker.record(i, bool(accept))
                if accept:
                    d = prop - cur
                    x[i] = prop
                    if nb > 1:
                        b0 += d
                        b1 += zi * d
                        b2 = b2 + d * hcol
                        ssq += prop * prop - cur * cur
                        logm = term_prop / (-(nb - 1.0))
            return state.with_x(x)

        result = permuted_serial_sampler(data, sweep, count, rng)
        tracker.warn_if_low("spline copy sampler")
        result.diagnostics.update(
            acceptance_rate=tracker.overall_rate(),
            per_coordinate_acceptance=tracker.per_coordinate(),
            mode_fallbacks=mode_fallbacks,
        )
        return result
