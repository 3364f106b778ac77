"""Logistic regression null with fixed covariates and binary responses.

Posterior draws come from an independence Metropolis-Hastings chain whose
proposal is the Laplace approximation N(mode, H^-1); the marginal of x is
replaced by the same Laplace approximation, recomputed for every candidate
x since the mode and Hessian are x-dependent.  Copies use the permuted
serial sampler with each coordinate drawn exactly from its two-point
conditional, so no accept/reject step is needed there.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit

from ..core import PosteriorDraws
from ..distributions import normal_logpdf
from ..mcmc import (
    FORWARD,
    ChainConfig,
    CopySet,
    MHKernel,
    mh_chain,
    permuted_serial_sampler,
)
from ..numerics import OptimResult, OptimizationError

__all__ = [
    "LogisticData",
    "LogisticParams",
    "LogisticModel",
    "posterior_mode_and_hessian",
    "conditional_prob_zero",
]

# independence MH off a Laplace proposal should accept most moves
MIN_HEALTHY_ACCEPTANCE = 0.5

_MODE_GRAD_TOL = 1e-10
_MODE_MAX_ITER = 100


@dataclass(frozen=True)
class LogisticData:
    """Binary responses, fixed covariates, and an optional second response.

    ``y`` is carried for conditional-independence statistics only; the null
    likelihood never looks at it.
    """

    x: np.ndarray
    z: np.ndarray
    y: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float))
        if self.y is not None:
            object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        if self.x.ndim != 1 or self.z.ndim != 2 or self.z.shape[0] != self.x.size:
            raise ValueError("x must be a length-n vector and z an n-by-d matrix")
        if not np.all((self.x == 0.0) | (self.x == 1.0)):
            raise ValueError("x entries must be 0 or 1")

    def with_x(self, x: np.ndarray) -> "LogisticData":
        return replace(self, x=x)


@dataclass(frozen=True)
class LogisticParams:
    theta: np.ndarray


def _psi_value(theta: np.ndarray, x: np.ndarray, z: np.ndarray) -> float:
    eta = z @ theta
    loglik = float(x @ eta - np.sum(np.logaddexp(0.0, eta)))
    return loglik + float(np.sum(normal_logpdf(theta)))


def _mode_newton(x: np.ndarray, z: np.ndarray, init: np.ndarray):
    """Damped Newton ascent on the log posterior; globally convergent since
    the negative Hessian is bounded below by the identity."""
    theta = init.copy()
    value = _psi_value(theta, x, z)
    for it in range(1, _MODE_MAX_ITER + 1):
        eta = z @ theta
        p = expit(eta)
        grad = z.T @ (x - p) - theta
        gsup = float(np.max(np.abs(grad)))
        if gsup <= _MODE_GRAD_TOL:
            h = z.T @ (z * (p * (1.0 - p))[:, None]) + np.eye(theta.size)
            return theta, h, value, it - 1, True
        h = z.T @ (z * (p * (1.0 - p))[:, None]) + np.eye(theta.size)
        step = cho_solve(cho_factor(h, lower=True), grad)
        slope = float(grad @ step)
        # improvements below float resolution of the value would stall the
        # backtracking loop, so allow them through
        noise = 1e-12 * (1.0 + abs(value))
        scale = 1.0
        for _ in range(40):
            cand = theta + scale * step
            cand_value = _psi_value(cand, x, z)
            if cand_value >= value + 1e-4 * scale * slope - noise:
                break
            scale *= 0.5
        theta, value = cand, cand_value
    eta = z @ theta
    p = expit(eta)
    grad = z.T @ (x - p) - theta
    h = z.T @ (z * (p * (1.0 - p))[:, None]) + np.eye(theta.size)
    return theta, h, value, _MODE_MAX_ITER, float(np.max(np.abs(grad))) <= _MODE_GRAD_TOL


def posterior_mode_and_hessian(data: LogisticData, init: np.ndarray | None = None) -> OptimResult:
    """Posterior mode and the closed-form negative Hessian
    sum_i sigma'(eta_i) Z_i Z_i' + I at the mode."""
    start = np.zeros(data.z.shape[1]) if init is None else np.asarray(init, dtype=float)
    theta, h, value, iters, ok = _mode_newton(data.x, data.z, start)
    if not ok:
        raise OptimizationError("posterior mode search did not converge")
    eta = data.z @ theta
    p = expit(eta)
    grad = data.z.T @ (data.x - p) - theta
    return OptimResult(
        x=theta,
        value=value,
        grad_sup=float(np.max(np.abs(grad))),
        iterations=iters,
        converged=True,
        neg_hessian=h,
    )


def _laplace_log_marginal(x, z, init):
    theta, h, value, _, ok = _mode_newton(x, z, init)
    if not ok:
        raise OptimizationError("mode search inside the marginal did not converge")
    sign, logdet = np.linalg.slogdet(h)
    if sign <= 0:
        raise OptimizationError("negative Hessian must be positive definite")
    d = theta.size
    return value + 0.5 * d * np.log(2.0 * np.pi) - 0.5 * logdet, theta


def conditional_prob_zero(data: LogisticData, params, index: int) -> float:
    """P(X_index = 0 | x at the other coordinates) under the copy target.

    Evaluated in log space from the two one-point modifications of x, so the
    two-point normalization never degenerates to 0/0.
    """
    thetas = np.array([p.theta for p in params])
    nb = thetas.shape[0]
    eta_i = float(np.sum(thetas @ data.z[index]))
    if nb == 1:
        log_ratio = eta_i  # marginal term vanishes at B-1=0
    else:
        x0 = data.x.copy()
        x0[index] = 0.0
        x1 = data.x.copy()
        x1[index] = 1.0
        m0, mode0 = _laplace_log_marginal(x0, data.z, np.zeros(data.z.shape[1]))
        m1, _ = _laplace_log_marginal(x1, data.z, mode0)
        log_ratio = eta_i - (nb - 1) * (m1 - m0)
    # log_ratio = log g(1|..) - log g(0|..); P(0) = 1/(1+exp(log_ratio))
    return float(expit(-log_ratio))


class LogisticModel:
    """Plugin for the logistic-regression null."""

    name = "logistic"

    def log_likelihood(self, params: LogisticParams, data: LogisticData) -> float:
        eta = data.z @ params.theta
        return float(data.x @ eta - np.sum(np.logaddexp(0.0, eta)))

    def log_prior(self, params: LogisticParams) -> float:
        return float(np.sum(normal_logpdf(params.theta)))

    def sample_posterior(
        self,
        data: LogisticData,
        count: int,
        chain: ChainConfig,
        rng: np.random.Generator,
    ) -> PosteriorDraws:
        mode = posterior_mode_and_hessian(data)
        h_chol = np.linalg.cholesky(mode.neg_hessian)
        theta_hat = mode.x

        def propose(_state, prng):
            xi = prng.standard_normal(theta_hat.size)
            return theta_hat + np.linalg.solve(h_chol.T, xi)

        def log_proposal(_frm, to):
            # N(mode, H^-1) evaluated at `to`; constants cancel in the ratio
            w = h_chol.T @ (to - theta_hat)
            return -0.5 * float(w @ w)

        kernel = MHKernel(
            log_target=lambda t: _psi_value(t, data.x, data.z),
            propose=propose,
            log_proposal=log_proposal,
        )
        start = theta_hat if chain.init is None else np.asarray(chain.init, dtype=float)
        result = mh_chain(
            kernel,
            ChainConfig(burn_in=chain.burn_in, thin=chain.thin, init=start),
            count,
            rng,
        )
        if result.acceptance_rate < MIN_HEALTHY_ACCEPTANCE:
            warnings.warn(
                f"independence MH acceptance {result.acceptance_rate:.3f} below "
                f"{MIN_HEALTHY_ACCEPTANCE}; the Laplace proposal fits the posterior poorly",
                RuntimeWarning,
            )
        return PosteriorDraws(
            params=[LogisticParams(theta=t) for t in result.samples],
            diagnostics={
                "acceptance_rate": result.acceptance_rate,
                "mode": theta_hat,
                "mode_iterations": mode.iterations,
            },
        )

    def log_marginal_hat(self, data: LogisticData) -> float:
        value, _ = _laplace_log_marginal(data.x, data.z, np.zeros(data.z.shape[1]))
        return float(value)

    def sample_copies(
        self,
        data: LogisticData,
        draws: PosteriorDraws,
        count: int,
        rng: np.random.Generator,
    ) -> CopySet:
        z = data.z
        n, d = z.shape
        thetas = np.array([p.theta for p in draws.params])
        eta_sum = thetas.sum(axis=0) @ z.T
        nb = thetas.shape[0]
        flips = 0
        visits = 0

        def sweep(state: LogisticData, direction: str, sweep_rng: np.random.Generator):
            nonlocal flips, visits
            x = state.x.copy()
            if nb > 1:
                m_cur, mode_cur = _laplace_log_marginal(x, z, np.zeros(d))
            order = range(n) if direction == FORWARD else range(n - 1, -1, -1)
            for i in order:
                cur = x[i]
                if nb == 1:
                    log_ratio = eta_sum[i] if cur == 0.0 else -eta_sum[i]
                else:
                    x[i] = 1.0 - cur
                    m_flip, mode_flip = _laplace_log_marginal(x, z, mode_cur)
                    x[i] = cur
                    delta_lik = eta_sum[i] if cur == 0.0 else -eta_sum[i]
                    log_ratio = delta_lik - (nb - 1) * (m_flip - m_cur)
                # log P(flip) = -log(1+exp(-log_ratio)), drawn fully in log space
                log_p_flip = -np.logaddexp(0.0, -log_ratio)
                visits += 1
                if np.log(sweep_rng.random()) < log_p_flip:
                    flips += 1
                    x[i] = 1.0 - cur
                    if nb > 1:
                        m_cur, mode_cur = m_flip, mode_flip
            return state.with_x(x)

        result = permuted_serial_sampler(data, sweep, count, rng)
        result.diagnostics.update(flip_rate=flips / visits if visits else float("nan"))
        return result
