"""Rank-1 signal-plus-noise matrix model.

The data is an n-by-n matrix X = u v^T + noise with N(0, 0.25) entries and
independent standard normal priors on both factor vectors.  Posterior draws
come from a two-block Gibbs sampler on (u, v).  The marginal of X integrates
u exactly (rows are Gaussian given v), reduces the remaining integral to the
squared singular values of X by rotation invariance, and applies a Laplace
approximation after the log change of variables t_i = log W_i; copies come
from a per-entry Metropolis-Hastings serial sweep with Laplace proposals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular

from ..core import PosteriorDraws
from ..distributions import normal_logpdf
from ..mcmc import (
    FORWARD,
    AcceptanceTracker,
    ChainConfig,
    CopySet,
    permuted_serial_sampler,
)
from ..numerics import (
    OptimizationError,
    golden_section_mode,
    laplace_log_integral,
    newton_mode_1d,
)

NOISE_VAR = 0.25

_LOG_2PI = math.log(2.0 * math.pi)
_PSI_GTOL = 1e-6
_PSI_MAX_ITER = 60
_RESTART_GRAD_TOL = 1e-4
_MAX_RESTARTS = 5
_FD_STEP = 1e-3


@dataclass(frozen=True)
class Rank1Params:
    """Factor pair (u, v); the signal matrix is the outer product u v^T."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if u.ndim != 1 or v.ndim != 1 or u.size != v.size:
            raise ValueError("factors must be vectors of equal length")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("factors must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    def signal(self) -> np.ndarray:
        return np.outer(self.u, self.v)


@dataclass(frozen=True)
class Rank1Data:
    """Square data matrix."""

    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2 or x.shape[0] != x.shape[1]:
            raise ValueError("x must be a square matrix")
        if not np.all(np.isfinite(x)):
            raise ValueError("x must be finite")
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def with_x(self, x: np.ndarray) -> "Rank1Data":
        return replace(self, x=x)


@dataclass(frozen=True)
class ReparamState:
    """Log chi-square coordinates t_i = log W_i paired with the data's singular values."""

    t: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        d = np.asarray(self.d, dtype=float)
        if t.ndim != 1 or d.ndim != 1 or t.size != d.size:
            raise ValueError("t and d must be vectors of equal length")
        if np.any(d < 0.0) or np.any(np.diff(d) > 0.0):
            raise ValueError("singular values must be nonnegative and sorted descending")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "d", d)

    @property
    def w(self) -> np.ndarray:
        return np.exp(self.t)

    @property
    def s1(self) -> float:
        return float(np.sum(self.w))

    @property
    def s_d(self) -> float:
        return float(self.d**2 @ self.w)

    @property
    def c(self) -> float:
        return 1.0 + 4.0 * self.s1

    @property
    def n_vec(self) -> np.ndarray:
        return self.c * self.d**2 - 4.0 * self.s_d


def _psi_const(dsq: np.ndarray) -> float:
    # includes the prior normalization so exp(psi) integrates to the marginal density
    n = dsq.size
    return (
        0.5 * n * n * math.log(4.0)
        - 0.5 * n * n * _LOG_2PI
        - 2.0 * float(np.sum(dsq))
        - 0.5 * n * _LOG_2PI
    )


def _psi_value(t: np.ndarray, dsq: np.ndarray) -> float:
    if np.max(t) > 40.0:
        return -np.inf
    w = np.exp(t)
    s1 = float(np.sum(w))
    c = 1.0 + 4.0 * s1
    return -0.5 * dsq.size * math.log(c) + 8.0 * float(dsq @ w) / c + 0.5 * (float(np.sum(t)) - s1)


def _psi_full(t: np.ndarray, dsq: np.ndarray):
    """Value (additive constant excluded), gradient, and negative Hessian."""
    n = dsq.size
    w = np.exp(t)
    s1 = float(np.sum(w))
    sd = float(dsq @ w)
    c = 1.0 + 4.0 * s1
    value = -0.5 * n * math.log(c) + 8.0 * sd / c + 0.5 * (float(np.sum(t)) - s1)
    nvec = c * dsq - 4.0 * sd
    grad = 0.5 - 0.5 * w - (2.0 * n / c) * w + (8.0 / (c * c)) * w * nvec
    ww = np.outer(w, w)
    neg_hess = -(
        (8.0 * n / c**2) * ww
        + (32.0 / c**2) * ww * (dsq[:, None] - dsq[None, :])
        - (64.0 / c**3) * ww * nvec[:, None]
    )
    diag = (
        0.5 * w
        + 2.0 * n * (w / c - 4.0 * w * w / c**2)
        - 8.0 * w * (nvec / c**2 - 8.0 * w * nvec / c**3)
    )
    np.fill_diagonal(neg_hess, diag)
    return value, grad, neg_hess


def reparam_log_posterior(t, d):
    """Log posterior over t = log W given singular values d, with derivatives.

    Returns ``(value, gradient, neg_hessian)``; ``neg_hessian`` is the
    curvature matrix of the negative log posterior, the precision used by the
    Laplace approximation.
    """
    state = ReparamState(t=t, d=d)
    dsq = state.d**2
    value, grad, neg_hess = _psi_full(state.t, dsq)
    return value + _psi_const(dsq), grad, neg_hess


@dataclass
class _ModeResult:
    value: float
    t: np.ndarray
    neg_hessian: np.ndarray
    grad_sup: float
    iterations: int


def _newton_direction(neg_hess: np.ndarray, grad: np.ndarray) -> np.ndarray:
    try:
        low = np.linalg.cholesky(neg_hess)
    except np.linalg.LinAlgError:
        floor = float(np.min(np.linalg.eigvalsh(neg_hess)))
        lift = 1e-8 + 1.1 * max(0.0, -floor)
        low = np.linalg.cholesky(neg_hess + lift * np.eye(neg_hess.shape[0]))
    half = solve_triangular(low, grad, lower=True, check_finite=False)
    return solve_triangular(low.T, half, lower=False, check_finite=False)


def _newton_psi(dsq: np.ndarray, t0: np.ndarray, gtol: float = _PSI_GTOL) -> _ModeResult:
    t = np.array(t0, dtype=float)
    value, grad, neg_hess = _psi_full(t, dsq)
    iterations = 0
    for iterations in range(1, _PSI_MAX_ITER + 1):
        if float(np.max(np.abs(grad))) <= gtol:
            iterations -= 1
            break
        step = _newton_direction(neg_hess, grad)
        slope = float(grad @ step)
        if slope <= 0.0:
            step = grad.copy()
            slope = float(grad @ grad)
        scale = 1.0
        # improvements below the float resolution of the value must not stall the line search
        noise = 1e-12 * (1.0 + abs(value))
        stalled = True
        for _ in range(45):
            cand = t + scale * step
            cand_value = _psi_value(cand, dsq)
            if cand_value >= value + 1e-4 * scale * slope - noise:
                stalled = False
                break
            scale *= 0.5
        if stalled:
            break
        t = cand
        value, grad, neg_hess = _psi_full(t, dsq)
    return _ModeResult(value, t, neg_hess, float(np.max(np.abs(grad))), iterations)


def _reparam_mode(dsq: np.ndarray, t0: np.ndarray | None = None) -> _ModeResult:
    """Maximize the reparametrized log posterior; random restarts cover stalls."""
    n = dsq.size
    start = np.zeros(n) if t0 is None else np.asarray(t0, dtype=float)
    result = _newton_psi(dsq, start)
    if result.grad_sup <= _RESTART_GRAD_TOL:
        return result
    restart_rng = np.random.default_rng(61)
    best = result
    for _ in range(_MAX_RESTARTS):
        result = _newton_psi(dsq, restart_rng.standard_normal(n))
        if result.grad_sup <= _RESTART_GRAD_TOL:
            return result
        if result.grad_sup < best.grad_sup:
            best = result
    raise OptimizationError(
        "mode search for the reparametrized posterior did not converge",
        last_iterate=best.t,
    )


def _log_marginal_from_dsq(dsq: np.ndarray, t0: np.ndarray | None = None):
    mode = _reparam_mode(dsq, t0)
    log_peak = mode.value + _psi_const(dsq)
    return laplace_log_integral(log_peak, mode.neg_hessian), mode.t


def _descending_sq_singular_values(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.linalg.eigvalsh(x.T @ x)[::-1], 0.0)


class Rank1Model:
    """Model plugin for the rank-1 signal-plus-noise matrix null."""

    name = "rank1"

    def log_likelihood(self, params: Rank1Params, data: Rank1Data) -> float:
        resid = data.x - params.signal()
        return float(np.sum(normal_logpdf(resid, 0.0, NOISE_VAR)))

    def log_prior(self, params: Rank1Params) -> float:
        return float(np.sum(normal_logpdf(params.u)) + np.sum(normal_logpdf(params.v)))

    def sample_posterior(
        self,
        data: Rank1Data,
        count: int,
        chain: ChainConfig,
        rng: np.random.Generator,
    ) -> PosteriorDraws:
        if count < 1:
            raise ValueError("need at least one posterior draw")
        x = data.x
        n = data.n
        if chain.init is not None:
            u = np.array(chain.init.u, dtype=float)
            v = np.array(chain.init.v, dtype=float)
        else:
            left, _, right_t = np.linalg.svd(x)
            u = math.sqrt(n) * left[:, 0]
            v = math.sqrt(n) * right_t[0]

        def gibbs_step():
            nonlocal u, v
            prec = 4.0 * float(v @ v) + 1.0
            u = (4.0 / prec) * (x @ v) + rng.standard_normal(n) / math.sqrt(prec)
            prec = 4.0 * float(u @ u) + 1.0
            v = (4.0 / prec) * (x.T @ u) + rng.standard_normal(n) / math.sqrt(prec)

        for _ in range(chain.burn_in):
            gibbs_step()
        thin = max(1, chain.thin)
        params = []
        for _ in range(count):
            for _ in range(thin):
                gibbs_step()
            params.append(Rank1Params(u=u.copy(), v=v.copy()))
        return PosteriorDraws(
            params=params,
            diagnostics={"sampler": "gibbs", "burn_in": chain.burn_in, "thin": thin},
        )

    def log_marginal_hat(self, data: Rank1Data) -> float:
        value, _ = _log_marginal_from_dsq(_descending_sq_singular_values(data.x))
        return value

    def sample_copies(
        self,
        data: Rank1Data,
        draws: PosteriorDraws,
        count: int,
        rng: np.random.Generator,
    ) -> CopySet:
        n = data.n
        nb = len(draws)
        means = np.stack([p.signal() for p in draws.params])
        mean_sum = means.sum(axis=0)
        mean_sumsq = np.sum(means * means, axis=0)
        entries = [(i, j) for i in range(n) for j in range(n)]
        tracker = AcceptanceTracker(n * n)
        mode_fallbacks = 0
        warm = {"t": None}

        def log_marginal_of(x: np.ndarray) -> float:
            value, t_hat = _log_marginal_from_dsq(_descending_sq_singular_values(x), warm["t"])
            warm["t"] = t_hat
            return value

        def sweep(state: Rank1Data, direction: str, sweep_rng: np.random.Generator):
            nonlocal mode_fallbacks
            x = state.x.copy()
            logm = log_marginal_of(x) if nb > 1 else 0.0
            order = entries if direction == FORWARD else entries[::-1]
            for i, j in order:
                cur = float(x[i, j])
                s1 = float(mean_sum[i, j])
                ssq = float(mean_sumsq[i, j])

                def lik(tv: float) -> float:
                    return -2.0 * (nb * tv * tv - 2.0 * s1 * tv + ssq)

                if nb == 1:
                    # the conditional is exactly N(s1, 0.25): one Newton step from
                    # anywhere lands on the mode of a quadratic
                    t_star, curv = s1, -4.0
                    term_prop = 0.0
                    term_cur = 0.0
                else:
                    def marg_term(tv: float) -> float:
                        x[i, j] = tv
                        value = log_marginal_of(x)
                        x[i, j] = cur
                        return -(nb - 1.0) * value

                    term_cur = -(nb - 1.0) * logm
                    found = newton_mode_1d(s1 / nb, -4.0 * nb, marg_term, cur, term_cur)
                    if found is None:
                        mode_fallbacks += 1
                        t_star = golden_section_mode(
                            lambda tv: lik(tv) + marg_term(tv), s1 / nb
                        )
                        m_plus = marg_term(t_star + _FD_STEP)
                        m_minus = marg_term(t_star - _FD_STEP)
                        m_center = marg_term(t_star)
                        curv = -4.0 * nb + (m_plus - 2.0 * m_center + m_minus) / (_FD_STEP * _FD_STEP)
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
                tracker.record(i * n + j, bool(accept))
                if accept:
                    x[i, j] = prop
                    if nb > 1:
                        logm = term_prop / (-(nb - 1.0))
            return state.with_x(x)

        result = permuted_serial_sampler(data, sweep, count, rng)
        tracker.warn_if_low("rank-1 copy sampler")
        result.diagnostics.update(
            acceptance_rate=tracker.overall_rate(),
            per_coordinate_acceptance=tracker.per_coordinate(),
            mode_fallbacks=mode_fallbacks,
        )
        return result
