"""Test statistics for the simulation studies, with the native solvers they need.

Each statistic is a deterministic function of its inputs: any internal
randomness (k-means restarts, CV fold assignment) is drawn from a fixed
module-level subseed, never from global state, so the same value is returned
for the same data no matter when or where the statistic is evaluated.

Orientation convention: larger values indicate departure from the null.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numba import njit
from scipy.linalg import solve_triangular

from .rng import substream

# Subseed for statistic-internal randomness (restarts, CV folds). Fixed so
# statistics are deterministic and identical across data and copies.
_STAT_SEED = 171


@dataclass(frozen=True)
class StatisticFn:
    """A named test statistic. ``compute`` maps a dataset to a real number."""

    name: str
    compute: Callable[..., float]

    def __call__(self, *args, **kwargs) -> float:
        return float(self.compute(*args, **kwargs))


# ---------------------------------------------------------------------------
# Sliced inverse regression
# ---------------------------------------------------------------------------


def _slice_indices(y: np.ndarray, n_slices: int) -> list[np.ndarray]:
    """Partition observation indices into ``n_slices`` equal-size blocks by y-order."""
    order = np.argsort(y, kind="stable")
    return np.array_split(order, n_slices)


def stat_sir(x, y, z, n_slices: int = 10, ridge: float = 1e-6) -> float:
    """SIR-based statistic for dependence of y on x beyond z.

    Builds W = (x, z, x*z columns), standardizes columns, slices the sample
    into ``n_slices`` equal-size blocks by the order of y, and forms the
    between-slice covariance of slice means of W (weighted by slice
    proportions).  After whitening by the total covariance (ridge-regularized),
    the statistic is the leading eigenvalue times the energy of the
    corresponding direction on the coordinates involving x.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    n = x.shape[0]
    if y.shape[0] != n or z.shape[0] != n:
        raise ValueError("x, y, z must have matching lengths")
    d = z.shape[1]
    p = 2 * d + 1

    W = np.empty((n, p))
    W[:, 0] = x
    W[:, 1 : d + 1] = z
    W[:, d + 1 :] = x[:, None] * z
    W -= W.mean(axis=0)
    sd = np.sqrt((W * W).mean(axis=0))
    sd[sd == 0] = 1.0
    W /= sd

    # slice means, weighted by slice proportions; the overall mean is 0 after
    # centering, so the between-slice covariance is sum_h p_h m_h m_h^T
    order = np.argsort(y, kind="stable")
    Wo = W[order]
    base, extra = divmod(n, n_slices)
    sizes = np.full(n_slices, base)
    sizes[:extra] += 1
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    means = np.add.reduceat(Wo, starts, axis=0) / sizes[:, None]
    between = (means * (sizes / n)[:, None]).T @ means

    total = (W.T @ W) / n + ridge * np.eye(p)
    L = np.linalg.cholesky(total)
    half = solve_triangular(L, between, lower=True)
    whitened = solve_triangular(L, half.T, lower=True)
    whitened = 0.5 * (whitened + whitened.T)
    vals, vecs = np.linalg.eigh(whitened)
    lam = float(vals[-1])
    direction = solve_triangular(L.T, vecs[:, -1], lower=False)
    direction /= np.linalg.norm(direction)

    x_coords = np.concatenate([[0], np.arange(1 + d, p)])
    energy = float(np.sum(direction[x_coords] ** 2))
    return energy * lam


# ---------------------------------------------------------------------------
# k-means WCSS ratio
# ---------------------------------------------------------------------------


def _wcss_1d(xs: np.ndarray, k: int, rng, n_init: int = 25, max_iter: int = 100) -> float:
    """Best within-cluster sum of squares over ``n_init`` Lloyd restarts.

    All restarts run in lockstep (vectorized over the restart axis).
    """
    n = xs.size
    idx = np.empty((n_init, k), dtype=np.intp)
    for r in range(n_init):
        idx[r] = rng.choice(n, size=k, replace=False)
    centers = xs[idx]  # (R, k)
    for _ in range(max_iter):
        d2 = (xs[None, :, None] - centers[:, None, :]) ** 2  # (R, n, k)
        labels = d2.argmin(axis=2)
        onehot = labels[..., None] == np.arange(k)
        counts = onehot.sum(axis=1)  # (R, k)
        sums = np.einsum("n,rnk->rk", xs, onehot)
        new = np.where(counts > 0, sums / np.maximum(counts, 1), centers)
        if (counts == 0).any():
            # relocate empty clusters to the current farthest point
            far = xs[d2.min(axis=2).argmax(axis=1)]
            new = np.where(counts == 0, far[:, None], new)
        if np.array_equal(new, centers):
            break
        centers = new
    d2 = (xs[None, :, None] - centers[:, None, :]) ** 2
    return float(d2.min(axis=2).sum(axis=1).min())


def stat_kmeans_ratio(x) -> float:
    """WCSS ratio of k-means with k=2 over k=3; large under 3-cluster structure.

    The input is sorted first, which leaves the objective unchanged and makes
    the statistic invariant to permutations of x.
    """
    xs = np.sort(np.asarray(x, dtype=float).ravel())
    if xs.size == 0:
        raise ValueError("x must be non-empty")
    if xs[0] == xs[-1]:
        return 1.0
    w2 = _wcss_1d(xs, 2, substream(_STAT_SEED, "kmeans", 2))
    w3 = _wcss_1d(xs, 3, substream(_STAT_SEED, "kmeans", 3))
    if w3 <= 0.0:
        return 1.0 if w2 <= 0.0 else np.inf
    return w2 / w3


# ---------------------------------------------------------------------------
# Second eigenvalue
# ---------------------------------------------------------------------------


def stat_second_eigenvalue(x) -> float:
    """Second-largest eigenvalue of X^T X."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ValueError("x must be a matrix with at least two columns")
    vals = np.linalg.eigvalsh(x.T @ x)
    return float(vals[-2])


# ---------------------------------------------------------------------------
# Group lasso: block coordinate descent with exact block updates
# ---------------------------------------------------------------------------


@njit(cache=True)
def _update_block(g, lam, ZtZ, Ztx, gidx, gstart, qstart, sqrtd, evflat, qflat, beta, v, sg, cg, tg):
    """Exact minimization over block g holding the others fixed.

    ``v`` carries ZtZ @ beta and is kept in sync.  Returns the largest absolute
    coefficient change in the block.
    """
    dtot = Ztx.shape[0]
    s0 = gstart[g]
    dg = gstart[g + 1] - s0
    q0 = qstart[g]
    lam_g = lam * sqrtd[g]

    allzero = True
    for j in range(dg):
        if beta[gidx[s0 + j]] != 0.0:
            allzero = False
            break
    # s_g = Z_g^T (x - Z b) + A_g b_g
    snorm2 = 0.0
    for j in range(dg):
        colj = gidx[s0 + j]
        acc = Ztx[colj] - v[colj]
        if not allzero:
            for a in range(dg):
                cola = gidx[s0 + a]
                acc += ZtZ[colj, cola] * beta[cola]
        sg[j] = acc
        snorm2 += acc * acc
    snorm = np.sqrt(snorm2)

    if snorm <= lam_g * (1.0 + 1e-12):
        if allzero:
            return 0.0
        for j in range(dg):
            tg[j] = 0.0
        settozero = True
    else:
        settozero = False
        for a in range(dg):
            acc = 0.0
            for j in range(dg):
                acc += qflat[q0 + j * dg + a] * sg[j]
            cg[a] = acc
        if lam_g == 0.0:
            evmax = 0.0
            for a in range(dg):
                if evflat[s0 + a] > evmax:
                    evmax = evflat[s0 + a]
            for a in range(dg):
                ev = evflat[s0 + a]
                cg[a] = cg[a] / ev if ev > 1e-12 * evmax else 0.0
        else:
            # solve u*sqrt(sum c_a^2/(ev_a+u)^2) = lam_g for u > 0; the left
            # side is increasing in u and bracketed by the extreme eigenvalues
            evmin = evflat[s0]
            evmax = evflat[s0]
            for a in range(1, dg):
                ev = evflat[s0 + a]
                if ev < evmin:
                    evmin = ev
                if ev > evmax:
                    evmax = ev
            if evmin < 0.0:
                evmin = 0.0
            denom = snorm - lam_g
            ulo = lam_g * evmin / denom
            uhi = lam_g * evmax / denom
            if uhi <= ulo:
                uhi = ulo * (1.0 + 1e-15) + 1e-300
            for _it in range(6):
                um = 0.5 * (ulo + uhi)
                s = 0.0
                for a in range(dg):
                    ratio = cg[a] / (evflat[s0 + a] + um)
                    s += ratio * ratio
                if um * np.sqrt(s) < lam_g:
                    ulo = um
                else:
                    uhi = um
            u = 0.5 * (ulo + uhi)
            for _it in range(50):
                s2 = 0.0
                s3 = 0.0
                for a in range(dg):
                    da = evflat[s0 + a] + u
                    ra = cg[a] / da
                    s2 += ra * ra
                    s3 += ra * ra / da
                gg = np.sqrt(s2)
                h = u * gg - lam_g
                if h < 0.0:
                    ulo = u
                else:
                    uhi = u
                hp = gg - u * s3 / gg
                if hp > 0.0:
                    unew = u - h / hp
                    if unew <= ulo or unew >= uhi:
                        unew = 0.5 * (ulo + uhi)
                else:
                    unew = 0.5 * (ulo + uhi)
                if abs(unew - u) <= 1e-14 * u:
                    u = unew
                    break
                u = unew
            for a in range(dg):
                cg[a] = cg[a] / (evflat[s0 + a] + u)
        for j in range(dg):
            acc = 0.0
            for a in range(dg):
                acc += qflat[q0 + j * dg + a] * cg[a]
            tg[j] = acc

    maxdelta = 0.0
    for j in range(dg):
        colj = gidx[s0 + j]
        newb = 0.0 if settozero else tg[j]
        diff = newb - beta[colj]
        if diff != 0.0:
            beta[colj] = newb
            for k in range(dtot):
                v[k] += ZtZ[colj, k] * diff
            ad = abs(diff)
            if ad > maxdelta:
                maxdelta = ad
    return maxdelta


@njit(cache=True)
def _bcd_path(ZtZ, Ztx, gidx, gstart, qstart, sqrtd, evflat, qflat, lams, tol, max_sweeps):
    """Solve min ½||x - Z b||² + lam * sum_g sqrt(d_g) ||b_g|| along a lam path.

    Works on the Gram matrices only.  Groups are given by
    ``gidx[gstart[g]:gstart[g+1]]``; ``evflat``/``qflat`` hold the
    eigendecomposition of each Z_g^T Z_g.  Block updates are exact; after each
    full pass the currently active groups are polished before the next full
    pass (active-set strategy).  Returns the (n_lams, d) coefficient array and
    a status (0 ok, -1 means some lam failed to converge in ``max_sweeps``).
    """
    dtot = Ztx.shape[0]
    G = gstart.shape[0] - 1
    n_lams = lams.shape[0]
    betas = np.zeros((n_lams, dtot))
    sweeps_out = np.zeros(n_lams, dtype=np.int64)
    beta = np.zeros(dtot)
    v = np.zeros(dtot)  # ZtZ @ beta

    dmax = 0
    for g in range(G):
        dg = gstart[g + 1] - gstart[g]
        if dg > dmax:
            dmax = dg
    sg = np.empty(dmax)
    cg = np.empty(dmax)
    tg = np.empty(dmax)
    active = np.zeros(G, dtype=np.bool_)

    for li in range(n_lams):
        lam = lams[li]
        sweeps = 0
        converged = False
        while sweeps < max_sweeps:
            sweeps += 1
            maxdelta = 0.0
            for g in range(G):
                dlt = _update_block(
                    g, lam, ZtZ, Ztx, gidx, gstart, qstart, sqrtd, evflat, qflat, beta, v, sg, cg, tg
                )
                if dlt > maxdelta:
                    maxdelta = dlt
                nonzero = False
                for j in range(gstart[g], gstart[g + 1]):
                    if beta[gidx[j]] != 0.0:
                        nonzero = True
                        break
                active[g] = nonzero
            if maxdelta <= tol:
                converged = True
                break
            while sweeps < max_sweeps:
                sweeps += 1
                maxdelta = 0.0
                for g in range(G):
                    if not active[g]:
                        continue
                    dlt = _update_block(
                        g, lam, ZtZ, Ztx, gidx, gstart, qstart, sqrtd, evflat, qflat, beta, v, sg, cg, tg
                    )
                    if dlt > maxdelta:
                        maxdelta = dlt
                if maxdelta <= tol:
                    break
        sweeps_out[li] = sweeps
        if not converged:
            return betas, sweeps_out, -1
        for j in range(dtot):
            betas[li, j] = beta[j]
    return betas, sweeps_out, 0


def _prep_groups(groups: Sequence, d: int):
    """Validate that ``groups`` partitions range(d); return flat index arrays."""
    arrs = [np.asarray(g, dtype=np.int64).ravel() for g in groups]
    if not arrs:
        raise ValueError("groups must be non-empty")
    allidx = np.concatenate(arrs)
    if allidx.size != d or np.unique(allidx).size != d or allidx.min() < 0 or allidx.max() >= d:
        raise ValueError("groups must partition the columns of z")
    gidx = allidx
    sizes = np.array([a.size for a in arrs], dtype=np.int64)
    gstart = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    qstart = np.concatenate([[0], np.cumsum(sizes**2)]).astype(np.int64)
    return arrs, gidx, gstart, qstart, sizes


# default convergence tolerance on the per-sweep coefficient change; keeps the
# KKT residual comfortably under 1e-6 on the problem scales used here
_GL_TOL = 5e-9
# looser tolerance for CV fold paths, which only feed the lambda selection
_GL_CV_FOLD_TOL = 1e-6


def _eig_flat(ZtZ, arrs, gstart, qstart):
    evflat = np.empty(gstart[-1])
    qflat = np.empty(qstart[-1])
    for g, idx in enumerate(arrs):
        ev, Q = np.linalg.eigh(ZtZ[np.ix_(idx, idx)])
        evflat[gstart[g] : gstart[g + 1]] = np.clip(ev, 0.0, None)
        qflat[qstart[g] : qstart[g + 1]] = Q.ravel()
    return evflat, qflat


class GroupLassoWorkspace:
    """Precomputed Gram blocks for repeated fits with fixed z, groups, folds.

    Building one of these per dataset context and passing it to the fitting
    functions skips the per-call Gram and eigendecomposition setup; results
    are identical either way.
    """

    def __init__(self, z, groups, n_folds: int = 5):
        z = np.ascontiguousarray(z, dtype=float)
        if z.ndim != 2:
            raise ValueError("z must be a matrix")
        self.z = z
        self.n = z.shape[0]
        self.arrs, self.gidx, self.gstart, self.qstart, self.sizes = _prep_groups(
            groups, z.shape[1]
        )
        self.sqrtd = np.sqrt(self.sizes.astype(float))
        self.ZtZ = np.ascontiguousarray(z.T @ z)
        self.evflat, self.qflat = _eig_flat(self.ZtZ, self.arrs, self.gstart, self.qstart)
        perm = substream(_STAT_SEED, "cv-folds", self.n).permutation(self.n)
        self.folds = np.array_split(perm, n_folds)
        self.fold_parts = []
        for test_idx in self.folds:
            zte = z[test_idx]
            ZtZ_tr = np.ascontiguousarray(self.ZtZ - zte.T @ zte)
            ev_tr, q_tr = _eig_flat(ZtZ_tr, self.arrs, self.gstart, self.qstart)
            self.fold_parts.append((test_idx, zte, ZtZ_tr, ev_tr, q_tr))

    def _run(self, ZtZ, Ztx, evflat, qflat, lams, tol, max_sweeps):
        lams = np.atleast_1d(np.asarray(lams, dtype=float))
        betas, sweeps, status = _bcd_path(
            ZtZ, Ztx, self.gidx, self.gstart, self.qstart, self.sqrtd,
            evflat, qflat, lams, tol, max_sweeps,
        )
        if status != 0:
            raise RuntimeError(f"group lasso did not converge within {max_sweeps} sweeps")
        return betas

    def path(self, x, lams, tol=_GL_TOL, max_sweeps=10_000):
        x = np.asarray(x, dtype=float).ravel()
        return self._run(self.ZtZ, self.z.T @ x, self.evflat, self.qflat, lams, tol, max_sweeps)


def _solve_path(x, z, groups, lams, tol=_GL_TOL, max_sweeps=10_000, return_sweeps=False):
    x = np.ascontiguousarray(x, dtype=float).ravel()
    z = np.ascontiguousarray(z, dtype=float)
    if z.ndim != 2 or z.shape[0] != x.shape[0]:
        raise ValueError("z must be a matrix with rows matching x")
    arrs, gidx, gstart, qstart, sizes = _prep_groups(groups, z.shape[1])
    ZtZ = np.ascontiguousarray(z.T @ z)
    Ztx = z.T @ x
    evflat, qflat = _eig_flat(ZtZ, arrs, gstart, qstart)
    sqrtd = np.sqrt(sizes.astype(float))
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    betas, sweeps, status = _bcd_path(
        ZtZ, Ztx, gidx, gstart, qstart, sqrtd, evflat, qflat, lams, tol, max_sweeps
    )
    if status != 0:
        raise RuntimeError(
            f"group lasso did not converge within {max_sweeps} sweeps"
        )
    if return_sweeps:
        return betas, sweeps
    return betas


def lambda_max(x, z, groups) -> float:
    """Smallest penalty level at which the group lasso solution is all zero."""
    x = np.asarray(x, dtype=float).ravel()
    z = np.ascontiguousarray(z, dtype=float)
    arrs, _, _, _, sizes = _prep_groups(groups, z.shape[1])
    Ztx = z.T @ x
    best = 0.0
    for idx, dg in zip(arrs, sizes):
        val = np.linalg.norm(Ztx[idx]) / np.sqrt(dg)
        best = max(best, float(val))
    return best


def lambda_grid(x, z, groups, n_lams: int = 50, ratio: float = 1e-3) -> np.ndarray:
    """Descending log-spaced penalty grid from lambda_max down to ratio*lambda_max."""
    lmax = lambda_max(x, z, groups)
    if lmax <= 0.0:
        return np.zeros(1)
    return np.geomspace(lmax, ratio * lmax, n_lams)


def group_lasso_fit(x, z, groups, lam, max_sweeps: int = 10_000) -> np.ndarray:
    """Coefficients minimizing ½||x - Z b||² + lam * sum_g sqrt(|I_g|) ||b_g||₂."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    return _solve_path(x, z, groups, [float(lam)], max_sweeps=max_sweeps)[0]


def cv_group_lasso(x, z, groups, n_folds: int = 5, full_output: bool = False, workspace=None):
    """Coefficients at the penalty chosen by ``n_folds``-fold cross-validation.

    The penalty grid is 50 log-spaced values from lambda_max down to
    1e-3*lambda_max, computed on the full data.  Folds are a deterministic
    partition drawn from the fixed statistic subseed.  Ties in CV error go to
    the larger penalty.  Fold paths are solved at a looser tolerance than the
    final refit; they only feed the penalty selection.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.shape[0]
    if workspace is None:
        workspace = GroupLassoWorkspace(z, groups, n_folds)
    ws = workspace
    if ws.n != n:
        raise ValueError("x length does not match the workspace")
    if n < n_folds:
        raise ValueError("need at least n_folds observations")

    Ztx = ws.z.T @ x
    lmax = 0.0
    for g in range(len(ws.arrs)):
        sl = slice(ws.gstart[g], ws.gstart[g + 1])
        lmax = max(lmax, float(np.linalg.norm(Ztx[ws.gidx[sl]]) / ws.sqrtd[g]))
    if lmax <= 0.0:
        beta = np.zeros(ws.z.shape[1])
        return (beta, 0.0, np.zeros(1)) if full_output else beta
    lams = np.geomspace(lmax, 1e-3 * lmax, 50)

    mse = np.zeros((len(ws.fold_parts), lams.size))
    for k, (test_idx, zte, ZtZ_tr, ev_tr, q_tr) in enumerate(ws.fold_parts):
        Ztx_tr = Ztx - zte.T @ x[test_idx]
        betas = ws._run(ZtZ_tr, Ztx_tr, ev_tr, q_tr, lams, _GL_CV_FOLD_TOL, 10_000)
        pred = zte @ betas.T  # (n_test, n_lams)
        mse[k] = np.mean((x[test_idx, None] - pred) ** 2, axis=0)
    best = int(np.argmin(mse.mean(axis=0)))
    beta = ws._run(ws.ZtZ, Ztx, ws.evflat, ws.qflat, lams[: best + 1], _GL_TOL, 10_000)[best]
    if full_output:
        return beta, float(lams[best]), mse.mean(axis=0)
    return beta


def _ratio_from_beta(beta: np.ndarray, groups: Sequence) -> float:
    """Sum of per-group sup-norms outside the largest group, over the largest."""
    beta = np.asarray(beta, dtype=float)
    norms = np.array([np.max(np.abs(beta[np.asarray(g)])) for g in groups])
    top = int(np.argmax(norms))  # ties go to the smallest index
    if norms[top] == 0.0:
        return 0.0
    return float((norms.sum() - norms[top]) / norms[top])


def stat_group_ratio(x, z, groups, workspace=None) -> float:
    """Leakage of the CV group-lasso fit outside its top group."""
    beta = cv_group_lasso(x, z, groups, workspace=workspace)
    return _ratio_from_beta(beta, groups)


# ---------------------------------------------------------------------------
# One-knot linear spline
# ---------------------------------------------------------------------------


def fit_one_knot_spline(x, z, n_knots: int = 200):
    """Least-squares fit of a + b*z + c*(z-t)+ over a grid of candidate knots.

    The grid is ``n_knots`` points equally spaced strictly inside
    (min z, max z).  Returns (knot, coefficients, rss) of the best candidate.
    """
    x = np.asarray(x, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    n = x.shape[0]
    if z.shape[0] != n:
        raise ValueError("x and z must have the same length")
    if n < 4:
        raise ValueError("need at least 4 observations")
    zmin, zmax = float(z.min()), float(z.max())
    if not zmax > zmin:
        raise ValueError("z must not be constant")
    knots = np.linspace(zmin, zmax, n_knots + 2)[1:-1]

    C = np.clip(z[None, :] - knots[:, None], 0.0, None)  # (K, n)
    K = knots.size
    G = np.empty((K, 3, 3))
    G[:, 0, 0] = n
    G[:, 0, 1] = G[:, 1, 0] = z.sum()
    G[:, 1, 1] = z @ z
    G[:, 0, 2] = G[:, 2, 0] = C.sum(axis=1)
    G[:, 1, 2] = G[:, 2, 1] = C @ z
    G[:, 2, 2] = (C * C).sum(axis=1)
    b = np.empty((K, 3))
    b[:, 0] = x.sum()
    b[:, 1] = z @ x
    b[:, 2] = C @ x
    try:
        coef = np.linalg.solve(G, b[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        coef = np.empty((K, 3))
        for i in range(K):
            A = np.column_stack([np.ones(n), z, C[i]])
            coef[i] = np.linalg.lstsq(A, x, rcond=None)[0]
    fitted = coef[:, 0, None] + coef[:, 1, None] * z[None, :] + coef[:, 2, None] * C
    rss = ((x[None, :] - fitted) ** 2).sum(axis=1)
    best = int(np.argmin(rss))
    return float(knots[best]), coef[best].copy(), float(rss[best])


def stat_spline_rss(x, z) -> float:
    """Residual sum of squares of the best one-knot linear spline fit."""
    return fit_one_knot_spline(x, z)[2]
