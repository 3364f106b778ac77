"""Optimization, Laplace/quadrature helpers, and small linear-algebra wrappers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla

__all__ = [
    "NumericsError",
    "OptimizationError",
    "OptimResult",
    "maximize",
    "fd_gradient",
    "fd_hessian",
    "fd_hessian_from_gradient",
    "laplace_log_integral",
    "newton_mode_1d",
    "golden_section_mode",
    "trapezoid_log_integral",
    "chol_lower",
    "solve_pd",
    "logdet_pd",
    "sym_eig",
    "svdvals",
    "lstsq",
]

# ------------------------------------------------------------------ errors --- #


class NumericsError(RuntimeError):
    """A numerical routine could not satisfy its contract."""


class OptimizationError(NumericsError):
    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


# ------------------------------------------------------- finite differences -- #

_EPS = float(np.finfo(float).eps)
GRAD_STEP = _EPS ** (1.0 / 3.0)
HESS_STEP = _EPS ** 0.25


def _steps(x: np.ndarray, step: float) -> np.ndarray:
    return step * np.maximum(1.0, np.abs(x))


def fd_gradient(f: Callable, x: np.ndarray, step: float = GRAD_STEP) -> np.ndarray:
    """Central-difference gradient with per-coordinate step ``step * max(1, |x_j|)``."""
    x = np.asarray(x, dtype=float)
    h = _steps(x, step)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h[j]
        g[j] = (f(x + e) - f(x - e)) / (2.0 * h[j])
    return g


def fd_hessian(f: Callable, x: np.ndarray, step: float = HESS_STEP) -> np.ndarray:
    """Central second differences of ``f``, symmetrized."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = _steps(x, step)
    H = np.empty((n, n))
    f0 = f(x)
    for j in range(n):
        ej = np.zeros(n)
        ej[j] = h[j]
        H[j, j] = (f(x + ej) - 2.0 * f0 + f(x - ej)) / h[j] ** 2
        for k in range(j + 1, n):
            ek = np.zeros(n)
            ek[k] = h[k]
            v = (f(x + ej + ek) - f(x + ej - ek) - f(x - ej + ek) + f(x - ej - ek))
            H[j, k] = H[k, j] = v / (4.0 * h[j] * h[k])
    return H


def fd_hessian_from_gradient(grad: Callable, x: np.ndarray, step: float = GRAD_STEP) -> np.ndarray:
    """Central differences of an analytic gradient, symmetrized."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = _steps(x, step)
    cols = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h[j]
        cols[:, j] = (grad(x + e) - grad(x - e)) / (2.0 * h[j])
    return 0.5 * (cols + cols.T)


# ------------------------------------------------------------- maximization -- #


@dataclass
class OptimResult:
    x: np.ndarray
    value: float
    grad_sup: float
    iterations: int
    converged: bool
    neg_hessian: np.ndarray | None = None
    inv_hessian: np.ndarray | None = None


_ARMIJO = 1e-4
_MAX_BACKTRACK = 40


def maximize(
    objective: Callable,
    init,
    *,
    gradient: Callable | None = None,
    value_and_grad: Callable | None = None,
    gtol: float = 1e-6,
    max_iter: int = 500,
    inv_hessian: np.ndarray | None = None,
    want_neg_hessian: bool = True,
) -> OptimResult:
    """Maximize a smooth objective by BFGS ascent with Armijo backtracking.

    Stops when the gradient sup-norm drops to ``gtol`` or after ``max_iter``
    iterations.  ``gradient`` (or the fused ``value_and_grad``) is used when
    supplied, otherwise central finite differences.  ``inv_hessian`` warm-starts
    the inverse-curvature estimate; the final estimate is returned for reuse.
    ``want_neg_hessian`` adds a finite-difference negative Hessian at the
    optimum, as needed for Laplace approximations.
    """
    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    n = x.size

    if value_and_grad is not None:
        fg = value_and_grad
        f_only = lambda z: fg(z)[0]
    else:
        f_only = objective
        g_fn = gradient if gradient is not None else (lambda z: fd_gradient(objective, z))
        fg = lambda z: (objective(z), g_fn(z))

    fx, g = fg(x)
    fx, g = float(fx), np.asarray(g, dtype=float)
    if not np.isfinite(fx):
        raise OptimizationError("objective is not finite at the initial point", last_iterate=x)

    Hinv = np.eye(n) if inv_hessian is None else np.array(inv_hessian, dtype=float)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if np.max(np.abs(g)) <= gtol:
            iterations -= 1
            break
        d = Hinv @ g
        gd = float(g @ d)
        if gd <= 0.0:
            # curvature estimate lost ascent direction, reset to steepest
            Hinv = np.eye(n)
            d = g.copy()
            gd = float(g @ g)
        t = 1.0
        fn = -np.inf
        for _ in range(_MAX_BACKTRACK):
            xn = x + t * d
            fn = f_only(xn)
            if np.isfinite(fn) and fn >= fx + _ARMIJO * t * gd:
                break
            t *= 0.5
        else:
            if not np.isfinite(fn):
                raise OptimizationError(
                    "objective became non-finite during line search", last_iterate=x
                )
            break  # no acceptable step, treat as stalled
        xn = x + t * d
        fn, gn = fg(xn)
        fn, gn = float(fn), np.asarray(gn, dtype=float)
        s = xn - x
        y = g - gn  # minimization convention on -objective
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y) + 1e-300):
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, y)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
        x, fx, g = xn, fn, gn

    grad_sup = float(np.max(np.abs(g))) if n else 0.0
    neg_h = None
    if want_neg_hessian:
        if value_and_grad is not None:
            neg_h = -fd_hessian_from_gradient(lambda z: fg(z)[1], x)
        elif gradient is not None:
            neg_h = -fd_hessian_from_gradient(gradient, x)
        else:
            neg_h = -fd_hessian(objective, x)
    return OptimResult(
        x=x,
        value=fx,
        grad_sup=grad_sup,
        iterations=iterations,
        converged=grad_sup <= gtol,
        neg_hessian=neg_h,
        inv_hessian=Hinv,
    )


# ------------------------------------------------- Laplace and quadrature ---- #

_LOG_2PI = float(np.log(2.0 * np.pi))


def laplace_log_integral(log_peak: float, neg_hessian: np.ndarray, dim: int | None = None) -> float:
    """Log of the Laplace approximation ``exp(log_peak) * (2 pi)^{d/2} / sqrt(det H)``.

    ``neg_hessian`` must be positive definite; a single jitter of
    ``1e-8 * trace/d`` on the diagonal is attempted before giving up.
    ``dim``, when given, is checked against the Hessian dimension.
    """
    H = np.atleast_2d(np.asarray(neg_hessian, dtype=float))
    d = H.shape[0]
    if dim is not None and dim != d:
        raise ValueError(f"dim={dim} does not match Hessian dimension {d}")
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        jitter = 1e-8 * float(np.trace(H)) / d
        try:
            L = np.linalg.cholesky(H + jitter * np.eye(d))
        except np.linalg.LinAlgError as exc:
            raise NumericsError("Laplace approximation requires a positive definite Hessian") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return float(log_peak) + 0.5 * d * _LOG_2PI - 0.5 * logdet


def newton_mode_1d(
    quad_mode: float,
    quad_curv: float,
    term: Callable,
    t0: float,
    term0: float,
    fd_step: float = 1e-3,
    step_tol: float = 1e-4,
    max_iter: int = 25,
):
    """Newton search for the mode of a 1-d target "quadratic plus black box".

    The target is ``quad_curv/2 * (t - quad_mode)**2`` (``quad_curv < 0``) plus
    ``term(t)``, which enters through central differences.  The curvature is
    read once and frozen: in the copy samplers it is dominated by the analytic
    quadratic and later iterations refine only the gradient, at two ``term``
    evaluations each.  It is re-read every 8 iterations because a stale reading
    can stall the iteration far from the start.  ``term0`` is ``term(t0)``.
    Returns ``(mode, curvature)`` or ``None`` when the curvature reading stops
    being concave or the iteration fails to settle.
    """
    t = float(t0)
    m_center = term0
    curv = None
    for it in range(max_iter):
        m_plus = term(t + fd_step)
        m_minus = term(t - fd_step)
        grad = quad_curv * (t - quad_mode) + (m_plus - m_minus) / (2.0 * fd_step)
        if curv is None:
            curv = quad_curv + (m_plus - 2.0 * m_center + m_minus) / (fd_step * fd_step)
            if not curv < -1e-8:
                return None
        step = -grad / curv
        if abs(step) <= step_tol * (1.0 + abs(t)):
            return t + step, curv
        t += float(np.clip(step, -2.0, 2.0))
        if (it + 1) % 8 == 0:
            m_center = term(t)
            curv = None
    return None


def golden_section_mode(f: Callable, center: float, tol: float = 1e-5) -> float:
    """Bracket a maximum of ``f`` around ``center`` and refine it by golden section."""
    width = 0.5
    a, b = center - width, center + width
    mid, f_mid = center, f(center)
    f_a, f_b = f(a), f(b)
    for _ in range(60):
        if f_mid >= f_a and f_mid >= f_b:
            break
        if f_a > f_mid:
            b, f_b = mid, f_mid
            mid, f_mid = a, f_a
            width *= 2.0
            a = a - width
            f_a = f(a)
        else:
            a, f_a = mid, f_mid
            mid, f_mid = b, f_b
            width *= 2.0
            b = b + width
            f_b = f(b)
    ratio = 0.5 * (3.0 - np.sqrt(5.0))
    lo, hi = a, b
    x1 = lo + ratio * (hi - lo)
    x2 = hi - ratio * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(80):
        if hi - lo <= tol:
            break
        if f1 >= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = lo + ratio * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = hi - ratio * (hi - lo)
            f2 = f(x2)
    return 0.5 * (lo + hi)


def trapezoid_log_integral(nodes: np.ndarray, log_values: np.ndarray) -> float:
    """Log of the trapezoid rule applied to ``exp(log_values)`` over ``nodes``.

    Works entirely in log space, so underflowing integrands are handled.
    Nodes must be strictly increasing with at least two entries.
    """
    x = np.asarray(nodes, dtype=float)
    lv = np.asarray(log_values, dtype=float)
    if x.ndim != 1 or x.size < 2 or x.shape != lv.shape:
        raise ValueError("need matching 1-d arrays with at least two nodes")
    dx = np.diff(x)
    if np.any(dx <= 0.0):
        raise ValueError("nodes must be strictly increasing")
    seg = np.logaddexp(lv[:-1], lv[1:]) + np.log(dx) - np.log(2.0)
    m = np.max(seg)
    if not np.isfinite(m):
        return -np.inf
    return float(m + np.log(np.sum(np.exp(seg - m))))


# ------------------------------------------------------------ linear algebra - #


def chol_lower(a: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(np.asarray(a, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise NumericsError("matrix is not positive definite") from exc


def solve_pd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a x = b`` for symmetric positive definite ``a``."""
    L = chol_lower(a)
    return sla.cho_solve((L, True), np.asarray(b, dtype=float))


def logdet_pd(a: np.ndarray) -> float:
    L = chol_lower(a)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def sym_eig(a: np.ndarray):
    """Eigenvalues (ascending) and eigenvectors of a symmetric matrix."""
    return np.linalg.eigh(np.asarray(a, dtype=float))


def svdvals(a: np.ndarray) -> np.ndarray:
    return np.linalg.svd(np.asarray(a, dtype=float), compute_uv=False)


def lstsq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sol, *_ = np.linalg.lstsq(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rcond=None)
    return sol
