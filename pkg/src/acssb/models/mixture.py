"""Two-component Gaussian mixture null with a latent-allocation Gibbs posterior.

Data are n i.i.d. reals under w1 N(mu1, s1) + (1-w1) N(mu2, s2) with
conjugate priors w1 ~ Beta(2,2), s_j ~ Inv-Gamma(1, 1/2) and
mu_j | s_j ~ N(0, s_j).  The marginal of x is approximated by a two-mode
Laplace expansion: the log joint has a pair of label-swapped maxima, each
found by damped Newton ascent in an unconstrained reparameterization from
k-means starts, and each contributes exp(value - 1/2 logdet(-H) +
(5/2) log 2pi) with the Hessian taken in the original parameterization.
Copies come from the permuted serial sampler; every coordinate takes one
independence MH step whose proposal, fit once per call, is a mixture of two
normals read off a piecewise-quadratic surrogate of the coordinate profile
of the copy target.  The surrogate mode is carried warm along accepted
moves (the swapped mode contributes a flat log 2) and re-anchored by a
fresh two-start fit at every sweep.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from ..core import PosteriorDraws
from ..distributions import beta_sample, invgamma_sample, normal_logpdf
from ..mcmc import FORWARD, AcceptanceTracker, ChainConfig, CopySet, permuted_serial_sampler
from ..numerics import OptimizationError
from ..rng import substream

__all__ = [
    "MixtureData",
    "MixtureParams",
    "MixtureModel",
    "CopyProposal",
    "TwoModeLaplace",
    "allocation_probabilities",
    "weight_conditional",
    "mean_conditional",
    "variance_conditional",
    "log_joint_and_gradient",
    "two_mode_laplace",
    "fit_piecewise_quadratic_proposal",
]

_LOG_2PI = float(np.log(2.0 * np.pi))
_LOG_2 = float(np.log(2.0))
# Beta(2,2) normalizer; kept so the joint integrates against the full prior
_LOG_6 = float(np.log(6.0))

_MODE_GTOL = 1e-6
_MODE_MAX_ITER = 200
_TRACK_MAX_ITER = 60
# tracked arm vs fresh two-start refit; larger gaps count as corrections
_REFRESH_TOL = 1e-6

_PROPOSAL_NODES = 20
_PROPOSAL_BREAKS = 400
_PROPOSAL_VAR_FLOOR = 1e-8
_WEIGHT_CLIP = 0.01

# marginal evaluations carry no rng of their own, so k-means restarts draw
# from a fixed stream to keep log_marginal_hat a pure function of the data
_INIT_SEED = 757
_KMEANS_RESTARTS = 25


@dataclass(frozen=True)
class MixtureParams:
    """Weight, means, and variances; component 1 carries weight ``w1``."""

    w1: float
    mu1: float
    sigma2_1: float
    mu2: float
    sigma2_2: float

    def __post_init__(self):
        vals = (self.w1, self.mu1, self.sigma2_1, self.mu2, self.sigma2_2)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("parameters must be finite")
        if not 0.0 < self.w1 < 1.0:
            raise ValueError("w1 must lie strictly inside (0, 1)")
        if self.sigma2_1 <= 0.0 or self.sigma2_2 <= 0.0:
            raise ValueError("variances must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.mu1, self.sigma2_1, self.mu2, self.sigma2_2])

    @staticmethod
    def from_array(theta) -> "MixtureParams":
        w, m1, v1, m2, v2 = (float(t) for t in theta)
        return MixtureParams(w1=w, mu1=m1, sigma2_1=v1, mu2=m2, sigma2_2=v2)

    def swapped(self) -> "MixtureParams":
        return MixtureParams(
            w1=1.0 - self.w1,
            mu1=self.mu2,
            sigma2_1=self.sigma2_2,
            mu2=self.mu1,
            sigma2_2=self.sigma2_1,
        )


@dataclass(frozen=True)
class MixtureData:
    """Observed sample; modeled as exchangeable scalars."""

    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        if self.x.ndim != 1 or self.x.size == 0:
            raise ValueError("x must be a non-empty vector")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("x entries must be finite")

    @property
    def n(self) -> int:
        return self.x.size

    def with_x(self, x: np.ndarray) -> "MixtureData":
        return replace(self, x=x)


# --------------------------------------------------------------------------
# log joint and its derivatives
# --------------------------------------------------------------------------


@njit(cache=True)
def _psi_vgh(th, x):
    """Value, gradient, and Hessian of the log joint in (w, m1, v1, m2, v2)."""
    w = th[0]
    m1 = th[1]
    v1 = th[2]
    m2 = th[3]
    v2 = th[4]
    g = np.zeros(5)
    h = np.zeros((5, 5))
    lw = np.log(w)
    l1w = np.log(1.0 - w)
    c1 = -0.5 * (_LOG_2PI + np.log(v1))
    c2 = -0.5 * (_LOG_2PI + np.log(v2))
    val = 0.0
    for i in range(x.size):
        t1 = x[i] - m1
        t2 = x[i] - m2
        la = lw + c1 - 0.5 * t1 * t1 / v1
        lb = l1w + c2 - 0.5 * t2 * t2 / v2
        if la > lb:
            lm = la + np.log1p(np.exp(lb - la))
        else:
            lm = lb + np.log1p(np.exp(la - lb))
        val += lm
        r1 = np.exp(la - lm)
        r2 = np.exp(lb - lm)
        d1 = t1 / v1
        d2 = t2 / v2
        e1 = (t1 * d1 - 1.0) / (2.0 * v1)
        e2 = (t2 * d2 - 1.0) / (2.0 * v2)
        u0 = r1 / w - r2 / (1.0 - w)
        u1 = r1 * d1
        u2 = r1 * e1
        u3 = r2 * d2
        u4 = r2 * e2
        g[0] += u0
        g[1] += u1
        g[2] += u2
        g[3] += u3
        g[4] += u4
        h[0, 0] += -u0 * u0
        h[0, 1] += r1 * d1 / w - u0 * u1
        h[0, 2] += r1 * e1 / w - u0 * u2
        h[0, 3] += -r2 * d2 / (1.0 - w) - u0 * u3
        h[0, 4] += -r2 * e2 / (1.0 - w) - u0 * u4
        h[1, 1] += r1 * (d1 * d1 - 1.0 / v1) - u1 * u1
        h[1, 2] += r1 * d1 * (e1 - 1.0 / v1) - u1 * u2
        h[1, 3] += -u1 * u3
        h[1, 4] += -u1 * u4
        h[2, 2] += r1 * (e1 * e1 - t1 * t1 / (v1 * v1 * v1) + 0.5 / (v1 * v1)) - u2 * u2
        h[2, 3] += -u2 * u3
        h[2, 4] += -u2 * u4
        h[3, 3] += r2 * (d2 * d2 - 1.0 / v2) - u3 * u3
        h[3, 4] += r2 * d2 * (e2 - 1.0 / v2) - u3 * u4
        h[4, 4] += r2 * (e2 * e2 - t2 * t2 / (v2 * v2 * v2) + 0.5 / (v2 * v2)) - u4 * u4
    val += _LOG_6 + lw + l1w
    val += -_LOG_2 - 2.0 * np.log(v1) - 0.5 / v1 + c1 - m1 * m1 / (2.0 * v1)
    val += -_LOG_2 - 2.0 * np.log(v2) - 0.5 / v2 + c2 - m2 * m2 / (2.0 * v2)
    g[0] += 1.0 / w - 1.0 / (1.0 - w)
    g[1] += -m1 / v1
    g[2] += -2.5 / v1 + 0.5 / (v1 * v1) + m1 * m1 / (2.0 * v1 * v1)
    g[3] += -m2 / v2
    g[4] += -2.5 / v2 + 0.5 / (v2 * v2) + m2 * m2 / (2.0 * v2 * v2)
    h[0, 0] += -1.0 / (w * w) - 1.0 / ((1.0 - w) * (1.0 - w))
    h[1, 1] += -1.0 / v1
    h[1, 2] += m1 / (v1 * v1)
    h[2, 2] += 2.5 / (v1 * v1) - 1.0 / (v1 * v1 * v1) - m1 * m1 / (v1 * v1 * v1)
    h[3, 3] += -1.0 / v2
    h[3, 4] += m2 / (v2 * v2)
    h[4, 4] += 2.5 / (v2 * v2) - 1.0 / (v2 * v2 * v2) - m2 * m2 / (v2 * v2 * v2)
    for a in range(5):
        for b in range(a + 1, 5):
            h[b, a] = h[a, b]
    return val, g, h


@njit(cache=True)
def _theta_of(phi):
    """Map (logit w, m1, log v1, m2, log v2) back, clipped away from the edges."""
    th = np.empty(5)
    z = min(max(phi[0], -45.0), 45.0)
    w = 1.0 / (1.0 + np.exp(-z))
    th[0] = min(max(w, 1e-15), 1.0 - 1e-15)
    th[1] = phi[1]
    th[2] = np.exp(min(max(phi[2], -45.0), 45.0))
    th[3] = phi[3]
    th[4] = np.exp(min(max(phi[4], -45.0), 45.0))
    return th


@njit(cache=True)
def _phi_state(phi, x):
    """Log joint with gradient/Hessian in the unconstrained space, plus the
    original-space Hessian needed for the Laplace determinant."""
    th = _theta_of(phi)
    val, g, h = _psi_vgh(th, x)
    w = th[0]
    v1 = th[2]
    v2 = th[4]
    jac = np.empty(5)
    jac[0] = w * (1.0 - w)
    jac[1] = 1.0
    jac[2] = v1
    jac[3] = 1.0
    jac[4] = v2
    gp = np.empty(5)
    hp = np.empty((5, 5))
    for a in range(5):
        gp[a] = g[a] * jac[a]
        for b in range(5):
            hp[a, b] = jac[a] * h[a, b] * jac[b]
    hp[0, 0] += jac[0] * (1.0 - 2.0 * w) * g[0]
    hp[2, 2] += v1 * g[2]
    hp[4, 4] += v2 * g[4]
    return val, gp, hp, h


@njit(cache=True)
def _chol5(a, lo):
    for j in range(5):
        s = a[j, j]
        for k in range(j):
            s -= lo[j, k] * lo[j, k]
        if not s > 0.0:
            return False
        lo[j, j] = np.sqrt(s)
        for i in range(j + 1, 5):
            t = a[i, j]
            for k in range(j):
                t -= lo[i, k] * lo[j, k]
            lo[i, j] = t / lo[j, j]
    return True


@njit(cache=True)
def _chol_solve5(lo, b, out):
    y = np.empty(5)
    for i in range(5):
        t = b[i]
        for k in range(i):
            t -= lo[i, k] * y[k]
        y[i] = t / lo[i, i]
    for i in range(4, -1, -1):
        t = y[i]
        for k in range(i + 1, 5):
            t -= lo[k, i] * out[k]
        out[i] = t / lo[i, i]


@njit(cache=True)
def _mode_newton(phi0, x, gtol, max_iter):
    """Damped Newton ascent of the log joint from ``phi0``.

    Status 1: converged, second value is the arm's Laplace log-contribution.
    Status 2: converged but the original-space curvature is not negative
    definite.  Status 0: no convergence within the budget.
    """
    phi = phi0.copy()
    val, gp, hp, h = _phi_state(phi, x)
    if not np.isfinite(val):
        return 0, 0.0, phi
    a = np.empty((5, 5))
    lo = np.zeros((5, 5))
    d = np.empty(5)
    for _ in range(max_iter):
        sup = 0.0
        for i in range(5):
            if abs(gp[i]) > sup:
                sup = abs(gp[i])
        if sup <= gtol:
            for i in range(5):
                for j in range(5):
                    a[i, j] = -h[i, j]
            if not _chol5(a, lo):
                return 2, 0.0, phi
            logdet = 0.0
            for i in range(5):
                logdet += np.log(lo[i, i])
            return 1, val - logdet + 2.5 * _LOG_2PI, phi
        base = 0.0
        for i in range(5):
            if abs(hp[i, i]) > base:
                base = abs(hp[i, i])
        ridge = 1e-6 * (1.0 if base < 1.0 else base)
        tau = 0.0
        ok = False
        for _ in range(60):
            for i in range(5):
                for j in range(5):
                    a[i, j] = -hp[i, j]
                a[i, i] += tau
            if _chol5(a, lo):
                ok = True
                break
            tau = ridge if tau == 0.0 else 3.0 * tau
        if not ok:
            return 0, 0.0, phi
        _chol_solve5(lo, gp, d)
        slope = 0.0
        for i in range(5):
            slope += gp[i] * d[i]
        t = 1.0
        accepted = False
        for _ in range(50):
            cand = phi + t * d
            val2, gp2, hp2, h2 = _phi_state(cand, x)
            if np.isfinite(val2) and val2 >= val + 1e-4 * t * slope:
                phi = cand
                val = val2
                gp = gp2
                hp = hp2
                h = h2
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return 0, 0.0, phi
    return 0, 0.0, phi


@njit(cache=True)
def _draws_loglik(thmat, v):
    """Sum over conditioning draws of the mixture log density at scalar ``v``."""
    tot = 0.0
    for b in range(thmat.shape[0]):
        w = thmat[b, 0]
        la = np.log(w) - 0.5 * (_LOG_2PI + np.log(thmat[b, 2])) \
            - 0.5 * (v - thmat[b, 1]) ** 2 / thmat[b, 2]
        lb = np.log(1.0 - w) - 0.5 * (_LOG_2PI + np.log(thmat[b, 4])) \
            - 0.5 * (v - thmat[b, 3]) ** 2 / thmat[b, 4]
        if la > lb:
            tot += la + np.log1p(np.exp(lb - la))
        else:
            tot += lb + np.log1p(np.exp(la - lb))
    return tot


@njit(cache=True)
def _draws_loglik_all(thmat, x):
    out = np.empty(x.size)
    for i in range(x.size):
        out[i] = _draws_loglik(thmat, x[i])
    return out


def log_joint_and_gradient(params: MixtureParams, data: MixtureData):
    """Log likelihood plus log prior, with its gradient in the original
    (w1, mu1, sigma2_1, mu2, sigma2_2) coordinates."""
    val, g, _ = _psi_vgh(params.as_array(), data.x)
    return float(val), np.asarray(g)


# --------------------------------------------------------------------------
# Gibbs posterior
# --------------------------------------------------------------------------


def allocation_probabilities(params: MixtureParams, data: MixtureData) -> np.ndarray:
    """Posterior membership probabilities, one row per observation."""
    la = np.log(params.w1) + normal_logpdf(data.x, params.mu1, params.sigma2_1)
    lb = np.log1p(-params.w1) + normal_logpdf(data.x, params.mu2, params.sigma2_2)
    top = np.maximum(la, lb)
    pa = np.exp(la - top)
    pb = np.exp(lb - top)
    tot = pa + pb
    return np.column_stack([pa / tot, pb / tot])


def weight_conditional(n1: int, n2: int) -> tuple[float, float]:
    """Beta parameters of w1 given the allocation counts."""
    return 2.0 + n1, 2.0 + n2


def mean_conditional(x_j: np.ndarray, sigma2_j: float) -> tuple[float, float]:
    """Normal mean/variance of mu_j given its variance and allocated points."""
    x_j = np.asarray(x_j, dtype=float)
    n_j = x_j.size
    return float(np.sum(x_j)) / (1.0 + n_j), sigma2_j / (1.0 + n_j)


def variance_conditional(x_j: np.ndarray, mu_j: float) -> tuple[float, float]:
    """Inverse-gamma shape/rate of sigma2_j given its mean and allocated points."""
    x_j = np.asarray(x_j, dtype=float)
    n_j = x_j.size
    rate = 0.5 + 0.5 * float(np.sum((x_j - mu_j) ** 2)) + 0.5 * mu_j * mu_j
    return 1.5 + 0.5 * n_j, rate


def _gibbs_sweep(x: np.ndarray, th: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    w, m1, v1, m2, v2 = th
    la = np.log(w) + normal_logpdf(x, m1, v1)
    lb = np.log1p(-w) + normal_logpdf(x, m2, v2)
    in1 = rng.random(x.size) < 1.0 / (1.0 + np.exp(lb - la))
    n1 = int(np.count_nonzero(in1))
    n2 = x.size - n1
    a, b = weight_conditional(n1, n2)
    w = beta_sample(rng, a, b)
    mean, var = mean_conditional(x[in1], v1)
    m1 = rng.normal(mean, np.sqrt(var))
    shape, rate = variance_conditional(x[in1], m1)
    v1 = invgamma_sample(rng, shape, rate)
    mean, var = mean_conditional(x[~in1], v2)
    m2 = rng.normal(mean, np.sqrt(var))
    shape, rate = variance_conditional(x[~in1], m2)
    v2 = invgamma_sample(rng, shape, rate)
    return np.array([w, m1, v1, m2, v2])


def _moment_variance(xs: np.ndarray, fallback: float) -> float:
    if xs.size >= 2:
        v = float(np.var(xs, ddof=1))
        if np.isfinite(v) and v > 0.0:
            return v
    return fallback


def _overall_variance(x: np.ndarray) -> float:
    v = float(np.var(x, ddof=1))
    return v if np.isfinite(v) and v > 0.0 else 1.0


def _median_split_init(x: np.ndarray) -> np.ndarray:
    lower = x <= np.median(x)
    overall = _overall_variance(x)
    m1 = float(np.mean(x[lower])) if np.any(lower) else float(np.mean(x))
    m2 = float(np.mean(x[~lower])) if np.any(~lower) else float(np.mean(x))
    v1 = _moment_variance(x[lower], overall)
    v2 = _moment_variance(x[~lower], overall)
    return np.array([0.5, m1, v1, m2, v2])


# --------------------------------------------------------------------------
# two-mode Laplace marginal
# --------------------------------------------------------------------------


def _kmeans_two(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Best-of-25 Lloyd's labels with k=2 on the line."""
    best_w = np.inf
    best = np.zeros(x.size, dtype=bool)
    for _ in range(_KMEANS_RESTARTS):
        c = rng.choice(x, size=2, replace=False)
        for _ in range(100):
            lab = np.abs(x[:, None] - c[None, :]).argmin(axis=1)
            nxt = c.copy()
            for j in range(2):
                sel = lab == j
                if np.any(sel):
                    nxt[j] = x[sel].mean()
                else:
                    nxt[j] = x[np.argmax(np.abs(x - c[1 - j]))]
            if np.array_equal(nxt, c):
                break
            c = nxt
        lab = np.abs(x[:, None] - c[None, :]).argmin(axis=1)
        wcss = float(np.sum((x - c[lab]) ** 2))
        if wcss < best_w:
            best_w = wcss
            best = lab == 0
    return best


def _phi_inits(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two label-swapped starting points from a k-means split of the data."""
    rng = substream(_INIT_SEED, "kmeans-init")
    in1 = _kmeans_two(x, rng)
    overall = _overall_variance(x)
    share = np.clip(np.count_nonzero(in1) / x.size, 1e-3, 1.0 - 1e-3)
    c1 = float(np.mean(x[in1])) if np.any(in1) else float(np.mean(x))
    c2 = float(np.mean(x[~in1])) if np.any(~in1) else float(np.mean(x))
    t1 = _moment_variance(x[in1], overall)
    t2 = _moment_variance(x[~in1], overall)
    z = float(np.log(share) - np.log1p(-share))
    first = np.array([z, c1, np.log(t1), c2, np.log(t2)])
    second = np.array([-z, c2, np.log(t2), c1, np.log(t1)])
    return first, second


_ARM_NAMES = ("first", "second")


def _arm_mode(phi0: np.ndarray, x: np.ndarray, arm: int) -> tuple[float, np.ndarray]:
    status, value, phi = _mode_newton(phi0, x, _MODE_GTOL, _MODE_MAX_ITER)
    if status == 2:
        raise OptimizationError(
            f"{_ARM_NAMES[arm]} arm: curvature at the mode is not negative definite"
        )
    if status != 1:
        raise OptimizationError(f"{_ARM_NAMES[arm]} arm: mode search did not converge")
    return value, phi


def _two_mode(x: np.ndarray) -> tuple[float, float, np.ndarray, float, np.ndarray]:
    init1, init2 = _phi_inits(x)
    l1, phi1 = _arm_mode(init1, x, 0)
    l2, phi2 = _arm_mode(init2, x, 1)
    return float(np.logaddexp(l1, l2)), l1, phi1, l2, phi2


@dataclass(frozen=True)
class TwoModeLaplace:
    """Log marginal with the per-arm log contributions and fitted modes."""

    log_marginal: float
    arm_logs: tuple[float, float]
    modes: tuple[MixtureParams, MixtureParams]


def two_mode_laplace(x: np.ndarray) -> TwoModeLaplace:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two observations")
    total, l1, phi1, l2, phi2 = _two_mode(x)
    return TwoModeLaplace(
        log_marginal=total,
        arm_logs=(float(l1), float(l2)),
        modes=(
            MixtureParams.from_array(_theta_of(phi1)),
            MixtureParams.from_array(_theta_of(phi2)),
        ),
    )


class _MarginalEvaluator:
    """Carries log f-hat along single-coordinate moves of a working vector.

    A fresh two-start fit anchors each sweep; in between, the first arm's
    mode is polished warm after every proposed move and the swapped arm
    enters as a flat log 2.  ``propose`` evaluates a candidate without
    committing; ``commit`` makes the last proposal current.
    """

    def __init__(self, x: np.ndarray):
        self.x = np.array(x, dtype=float)
        self.fallbacks = 0
        self.corrections = 0
        self._pending = None
        self.value = 0.0
        self._phi = None
        self._anchor()

    def _anchor(self):
        total, _, phi1, _, _ = _two_mode(self.x)
        self.value = total
        self._phi = phi1

    def rebase(self, x: np.ndarray) -> None:
        same = np.array_equal(x, self.x)
        before = self.value
        self.x = np.array(x, dtype=float)
        self._anchor()
        if same and abs(self.value - before) > _REFRESH_TOL:
            self.corrections += 1

    def propose(self, i: int, v: float) -> float:
        old = self.x[i]
        self.x[i] = v
        status, arm, phi = _mode_newton(self._phi, self.x, _MODE_GTOL, _TRACK_MAX_ITER)
        if status == 1:
            value = arm + _LOG_2
        else:
            self.fallbacks += 1
            try:
                value, _, phi, _, _ = _two_mode(self.x)
            finally:
                self.x[i] = old
            self._pending = (i, v, phi, value)
            return value
        self.x[i] = old
        self._pending = (i, v, phi, value)
        return value

    def commit(self) -> None:
        i, v, phi, value = self._pending
        self.x[i] = v
        self._phi = phi
        self.value = value


# --------------------------------------------------------------------------
# piecewise-quadratic proposal
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CopyProposal:
    """Two-component normal independence proposal for coordinate moves."""

    weight: float
    mean_left: float
    var_left: float
    mean_right: float
    var_right: float
    breakpoint: float
    sse: float

    def log_density(self, v: float) -> float:
        la = np.log(self.weight) + normal_logpdf(v, self.mean_left, self.var_left)
        lb = np.log1p(-self.weight) + normal_logpdf(v, self.mean_right, self.var_right)
        return float(np.logaddexp(la, lb))

    def sample(self, rng: np.random.Generator) -> float:
        if rng.random() < self.weight:
            return float(rng.normal(self.mean_left, np.sqrt(self.var_left)))
        return float(rng.normal(self.mean_right, np.sqrt(self.var_right)))


def fit_piecewise_quadratic_proposal(zeta, data_range) -> CopyProposal:
    """Fit exp(-zeta) by a mixture of two normals.

    ``zeta`` is evaluated on 20 nodes spanning ``data_range``; a continuous
    piecewise quadratic with one breakpoint is least-squares fit for each of
    400 candidate breakpoints (ties to the smallest), each half maps to a
    Gaussian arm through its vertex, and the arm weights solve a 2x2 system
    matching the surrogate's magnitude at the two arm means.
    """
    a, b = float(data_range[0]), float(data_range[1])
    if not a < b:
        raise ValueError("data_range must satisfy a < b")
    nodes = np.linspace(a, b, _PROPOSAL_NODES)
    zv = np.array([float(zeta(t)) for t in nodes])
    if not np.all(np.isfinite(zv)):
        raise ValueError("zeta must be finite on the node grid")
    best_sse = np.inf
    best_c = a
    best_beta = None
    for c in np.linspace(a, b, _PROPOSAL_BREAKS + 2)[1:-1]:
        d = nodes - c
        on_left = d <= 0.0
        design = np.column_stack([
            np.ones_like(d),
            np.where(on_left, d, 0.0),
            np.where(on_left, d * d, 0.0),
            np.where(on_left, 0.0, d),
            np.where(on_left, 0.0, d * d),
        ])
        beta, _, rank, _ = np.linalg.lstsq(design, zv, rcond=None)
        if rank < 5:
            # one side holds too few nodes to pin its curvature; fall back
            # to a single global quadratic so both arms agree
            global_design = np.column_stack([np.ones_like(d), d, d * d])
            gb, *_ = np.linalg.lstsq(global_design, zv, rcond=None)
            beta = np.array([gb[0], gb[1], gb[2], gb[1], gb[2]])
            resid = zv - global_design @ gb
        else:
            resid = zv - design @ beta
        sse = float(resid @ resid)
        if sse < best_sse:
            best_sse = sse
            best_c = float(c)
            best_beta = beta
    b0, b1l, b2l, b1r, b2r = best_beta
    var_left = max(_PROPOSAL_VAR_FLOOR, 1.0 / (2.0 * b2l)) if b2l > 0.0 else _PROPOSAL_VAR_FLOOR
    var_right = max(_PROPOSAL_VAR_FLOOR, 1.0 / (2.0 * b2r)) if b2r > 0.0 else _PROPOSAL_VAR_FLOOR
    mean_left = best_c - b1l * var_left
    mean_right = best_c - b1r * var_right

    def surrogate(t):
        d = t - best_c
        if d <= 0.0:
            return b0 + b1l * d + b2l * d * d
        return b0 + b1r * d + b2r * d * d

    ql = surrogate(mean_left)
    qr = surrogate(mean_right)
    shift = min(ql, qr)
    rhs = np.array([np.exp(-(ql - shift)), np.exp(-(qr - shift))])
    density = np.array([
        [np.exp(normal_logpdf(mean_left, mean_left, var_left)),
         np.exp(normal_logpdf(mean_left, mean_right, var_right))],
        [np.exp(normal_logpdf(mean_right, mean_left, var_left)),
         np.exp(normal_logpdf(mean_right, mean_right, var_right))],
    ])
    weight = 0.5
    try:
        p, q = np.linalg.solve(density, rhs)
        total = p + q
        if np.isfinite(total) and total > 0.0 and np.isfinite(p):
            weight = float(np.clip(p / total, _WEIGHT_CLIP, 1.0 - _WEIGHT_CLIP))
        else:
            warnings.warn("degenerate arm-weight system; using equal weights")
    except np.linalg.LinAlgError:
        warnings.warn("singular arm-weight system; using equal weights")
    return CopyProposal(
        weight=weight,
        mean_left=float(mean_left),
        var_left=float(var_left),
        mean_right=float(mean_right),
        var_right=float(var_right),
        breakpoint=best_c,
        sse=best_sse,
    )


# --------------------------------------------------------------------------
# plugin
# --------------------------------------------------------------------------


class MixtureModel:
    """Plugin for the two-component Gaussian-mixture null."""

    name = "mixture"

    def log_likelihood(self, params: MixtureParams, data: MixtureData) -> float:
        la = np.log(params.w1) + normal_logpdf(data.x, params.mu1, params.sigma2_1)
        lb = np.log1p(-params.w1) + normal_logpdf(data.x, params.mu2, params.sigma2_2)
        return float(np.sum(np.logaddexp(la, lb)))

    def log_prior(self, params: MixtureParams) -> float:
        total = _LOG_6 + np.log(params.w1) + np.log1p(-params.w1)
        for mu, var in ((params.mu1, params.sigma2_1), (params.mu2, params.sigma2_2)):
            total += -_LOG_2 - 2.0 * np.log(var) - 0.5 / var
            total += normal_logpdf(mu, 0.0, var)
        return float(total)

    def sample_posterior(
        self,
        data: MixtureData,
        count: int,
        chain: ChainConfig,
        rng: np.random.Generator,
    ) -> PosteriorDraws:
        if data.n < 2:
            raise ValueError("need at least two observations")
        if count < 1:
            raise ValueError("need at least one posterior draw")
        if chain.init is not None:
            th = chain.init.as_array()
        else:
            th = _median_split_init(data.x)
        for _ in range(chain.burn_in):
            th = _gibbs_sweep(data.x, th, rng)
        thin = max(1, chain.thin)
        params = []
        for _ in range(count):
            for _ in range(thin):
                th = _gibbs_sweep(data.x, th, rng)
            params.append(MixtureParams.from_array(th))
        return PosteriorDraws(
            params=params,
            diagnostics={"sampler": "gibbs", "burn_in": chain.burn_in, "thin": thin},
        )

    def log_marginal_hat(self, data: MixtureData) -> float:
        if data.n < 2:
            raise ValueError("need at least two observations")
        return two_mode_laplace(data.x).log_marginal

    def sample_copies(
        self,
        data: MixtureData,
        draws: PosteriorDraws,
        count: int,
        rng: np.random.Generator,
    ) -> CopySet:
        if not draws.params:
            raise ValueError("need at least one conditioning draw")
        thmat = np.ascontiguousarray(
            np.array([p.as_array() for p in draws.params], dtype=float)
        )
        nb = thmat.shape[0]
        n = data.n
        evaluator = _MarginalEvaluator(data.x) if nb > 1 else None

        lo, hi = float(np.min(data.x)), float(np.max(data.x))
        if lo == hi:
            lo, hi = lo - 1.0, hi + 1.0
        if evaluator is None:
            def zeta(v):
                return -_draws_loglik(thmat, v)
        else:
            def zeta(v):
                # coordinate profile of the copy target at the observed data
                return -(_draws_loglik(thmat, v) - (nb - 1) * evaluator.propose(0, v))
        proposal = fit_piecewise_quadratic_proposal(zeta, (lo, hi))

        tracker = AcceptanceTracker(n)

        def sweep(state: MixtureData, direction: str, sweep_rng: np.random.Generator):
            x = state.x.copy()
            per_point = _draws_loglik_all(thmat, x)
            if evaluator is not None:
                evaluator.rebase(x)
                lf_cur = evaluator.value
            order = range(n) if direction == FORWARD else range(n - 1, -1, -1)
            for i in order:
                cand = proposal.sample(sweep_rng)
                cand_loglik = _draws_loglik(thmat, cand)
                log_ratio = cand_loglik - per_point[i]
                if evaluator is not None:
                    lf_cand = evaluator.propose(i, cand)
                    log_ratio -= (nb - 1) * (lf_cand - lf_cur)
                log_ratio += proposal.log_density(x[i]) - proposal.log_density(cand)
                if np.log(sweep_rng.random()) < log_ratio:
                    x[i] = cand
                    per_point[i] = cand_loglik
                    if evaluator is not None:
                        evaluator.commit()
                        lf_cur = lf_cand
                    tracker.record(i, True)
                else:
                    tracker.record(i, False)
            return state.with_x(x)

        result = permuted_serial_sampler(data, sweep, count, rng)
        tracker.warn_if_low("mixture copies")
        result.diagnostics.update(
            acceptance_rate=tracker.overall_rate(),
            per_coordinate_acceptance=tracker.per_coordinate(),
            mode_fallbacks=0 if evaluator is None else evaluator.fallbacks,
            refresh_corrections=0 if evaluator is None else evaluator.corrections,
            proposal=proposal,
        )
        return result
