"""Sampling and log-density toolkit shared by the model plugins."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
from scipy import special

__all__ = [
    "LOG_2PI",
    "normal_logpdf",
    "mvn_logpdf",
    "sample_mvn",
    "beta_logpdf",
    "beta_sample",
    "chi2_1_logpdf",
    "chi2_1_sample",
    "bernoulli_logpmf",
    "bernoulli_sample",
    "uniform_logpdf",
    "uniform_sample",
    "invgamma_logpdf",
    "invgamma_sample",
    "categorical_sample",
    "log_ndtr_diff",
    "truncnorm_sample",
    "truncnorm_logpdf",
]

LOG_2PI = float(np.log(2.0 * np.pi))

# interval ends further than this many sd into one tail switch the truncated
# normal sampler from inverse-CDF to exponential rejection
_TAIL = 6.0


def normal_logpdf(x, mean=0.0, var=1.0):
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def mvn_logpdf(x, mean, cov=None, chol=None) -> float:
    """Multivariate normal log-density; pass either ``cov`` or its lower Cholesky."""
    x = np.asarray(x, dtype=float)
    d = x.size
    if chol is None:
        chol = np.linalg.cholesky(np.asarray(cov, dtype=float))
    r = x - np.asarray(mean, dtype=float)
    w = sla.solve_triangular(chol, r, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return float(-0.5 * (d * LOG_2PI + logdet + w @ w))


def sample_mvn(rng: np.random.Generator, mean, chol) -> np.ndarray:
    """One draw from N(mean, L L^T) given the lower Cholesky factor L."""
    mean = np.asarray(mean, dtype=float)
    z = rng.standard_normal(mean.size)
    return mean + np.asarray(chol) @ z


def beta_logpdf(x, a, b):
    x = np.asarray(x, dtype=float)
    inside = (x > 0.0) & (x < 1.0)
    safe = np.where(inside, x, 0.5)
    out = np.where(
        inside,
        (a - 1.0) * np.log(safe) + (b - 1.0) * np.log1p(-safe) - special.betaln(a, b),
        -np.inf,
    )
    return out if out.ndim else float(out)


def beta_sample(rng: np.random.Generator, a, b):
    return float(rng.beta(a, b))


def chi2_1_logpdf(x):
    """Chi-square log-density with one degree of freedom."""
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0.0, x, 1.0)
    out = np.where(x > 0.0, -0.5 * (np.log(2.0 * np.pi * safe) + safe), -np.inf)
    return out if out.ndim else float(out)


def chi2_1_sample(rng: np.random.Generator):
    return float(rng.chisquare(1))


def bernoulli_logpmf(x, p):
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(x == 1.0, np.log(p), np.where(x == 0.0, np.log1p(-p), -np.inf))
    return out if out.ndim else float(out)


def bernoulli_sample(rng: np.random.Generator, p):
    return int(rng.random() < p)


def uniform_logpdf(x, lower=0.0, upper=1.0):
    x = np.asarray(x, dtype=float)
    out = np.where((x >= lower) & (x <= upper), -np.log(upper - lower), -np.inf)
    return out if out.ndim else float(out)


def uniform_sample(rng: np.random.Generator, lower=0.0, upper=1.0):
    return float(rng.uniform(lower, upper))


def invgamma_logpdf(x, shape, rate):
    """Inverse-gamma log-density with density ``rate^shape/Gamma(shape) x^-(shape+1) e^-rate/x``."""
    x = np.asarray(x, dtype=float)
    out = np.where(
        x > 0.0,
        shape * np.log(rate)
        - special.gammaln(shape)
        - (shape + 1.0) * np.log(np.where(x > 0.0, x, 1.0))
        - rate / np.where(x > 0.0, x, 1.0),
        -np.inf,
    )
    return out if out.ndim else float(out)


def invgamma_sample(rng: np.random.Generator, shape, rate):
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    out_shape = np.broadcast_shapes(shape.shape, rate.shape)
    g = rng.gamma(shape, size=out_shape if out_shape else None)
    out = rate / g
    return out if out_shape else float(out)


def categorical_sample(rng: np.random.Generator, log_weights) -> int:
    """Index draw proportional to ``exp(log_weights)``."""
    lw = np.asarray(log_weights, dtype=float)
    m = np.max(lw)
    if not np.isfinite(m):
        raise ValueError("all categorical log-weights are -inf")
    w = np.exp(lw - m)
    cdf = np.cumsum(w)
    u = rng.random() * cdf[-1]
    return int(np.searchsorted(cdf, u, side="right").clip(0, lw.size - 1))


def log_ndtr_diff(lo, hi):
    """Stable ``log(Phi(hi) - Phi(lo))`` for ``lo < hi``, vectorized.

    Intervals sitting in the right tail are reflected to the left tail, where
    ``log_ndtr`` keeps full precision.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    flip = (lo + hi) > 0.0
    a = np.where(flip, -hi, lo)
    b = np.where(flip, -lo, hi)
    log_b = special.log_ndtr(b)
    log_a = special.log_ndtr(a)
    with np.errstate(divide="ignore"):
        out = log_b + np.log1p(-np.exp(np.minimum(log_a - log_b, 0.0)))
    return out if out.ndim else float(out)


def _tail_sample(rng: np.random.Generator, a: float, b: float) -> float:
    # exponential rejection for the standard normal restricted to [a, b], a > 0
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    while True:
        z = a - np.log1p(-rng.random()) / lam
        if z > b:
            continue
        if np.log(rng.random()) <= -0.5 * (z - lam) ** 2:
            return z


def truncnorm_sample(rng: np.random.Generator, mean, var, lower, upper) -> float:
    """One draw from N(mean, var) conditioned on [lower, upper]."""
    sd = float(np.sqrt(var))
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    if not a < b:
        raise ValueError("empty truncation interval")
    if a > _TAIL:
        z = _tail_sample(rng, a, b)
    elif b < -_TAIL:
        z = -_tail_sample(rng, -b, -a)
    else:
        pa = special.ndtr(a)
        pb = special.ndtr(b)
        z = float(special.ndtri(pa + rng.random() * (pb - pa)))
        z = min(max(z, a), b)
    return float(mean + sd * z)


def truncnorm_logpdf(x, mean, var, lower, upper):
    sd = np.sqrt(var)
    z = (np.asarray(x, dtype=float) - mean) / sd
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    body = normal_logpdf(z) - np.log(sd) - log_ndtr_diff(a, b)
    out = np.where((z >= a) & (z <= b), body, -np.inf)
    return out if out.ndim else float(out)
