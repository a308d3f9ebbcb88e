"""Lasso by coordinate descent, with cross-validated tuning and entry points
along a regularization path.

All solvers minimize ``(1/(2n)) ||y - X b||^2 + lam ||b||_1``. They work in
covariance mode on ``G = X'X / n`` and ``c = X'y / n``, so a fit depends on
the data only through these inner products.
"""

from dataclasses import dataclass, field
import warnings

import numpy as np
from numba import njit

from .errors import NoConvergence, ValidationError

TOL = 1e-8
NEWTON_KKT_TOL = 1e-10
# stop on stationarity too: with a singular Gram the minimizer is not unique
# and coordinates can drift along a flat valley long after the KKT conditions hold
KKT_TOL = 1e-8
FACE_EVERY = 10
MAX_ITER = 100_000


@dataclass
class LassoFit:
    beta: np.ndarray
    lam: float
    objective: float
    kkt_violation: float
    iterations: int
    converged: bool = True
    trace: list = field(default_factory=list, repr=False)


@dataclass
class LassoPath:
    lambda_grid: np.ndarray
    entry_lambda: np.ndarray
    fits: np.ndarray = None


@njit(cache=True, nogil=True)
def _sweep(G, grad, beta, lam, idx):
    max_change = 0.0
    for j in idx:
        gjj = G[j, j]
        if gjj <= 0.0:
            continue
        z = grad[j] + gjj * beta[j]
        if z > lam:
            new = (z - lam) / gjj
        elif z < -lam:
            new = (z + lam) / gjj
        else:
            new = 0.0
        delta = new - beta[j]
        if delta != 0.0:
            for k in range(grad.shape[0]):
                grad[k] -= delta * G[k, j]
            beta[j] = new
            d = abs(delta)
            if d > max_change:
                max_change = d
    return max_change


@njit(cache=True, nogil=True)
def _cd(G, c, lam, beta, tol, max_iter, naive):
    """Coordinate descent in place on ``beta``; returns (sweeps, converged)."""
    q = c.shape[0]
    grad = c - G @ beta
    full = np.arange(q)
    sweeps = 0
    while sweeps < max_iter:
        change = _sweep(G, grad, beta, lam, full)
        sweeps += 1
        if change < tol:
            return sweeps, True
        if naive:
            continue
        active = np.flatnonzero(beta)
        while sweeps < max_iter:
            change = _sweep(G, grad, beta, lam, active)
            sweeps += 1
            if change < tol:
                break
    return sweeps, False


def _objective(G, c, yy, beta, lam):
    return float(0.5 * beta @ G @ beta - c @ beta + 0.5 * yy + lam * np.abs(beta).sum())


def kkt_violation(G, c, beta, lam):
    """Max deviation from the coordinatewise stationarity conditions."""
    grad = c - G @ beta
    nz = beta != 0
    viol = np.zeros_like(beta)
    viol[nz] = np.abs(grad[nz] - lam * np.sign(beta[nz]))
    viol[~nz] = np.maximum(np.abs(grad[~nz]) - lam, 0.0)
    return float(viol.max()) if viol.size else 0.0


def _newton(G, c, beta, lam):
    """KKT solve on the support and signs of ``beta``; None if inconsistent."""
    active = np.flatnonzero(beta)
    if active.size == 0:
        return None
    s = np.sign(beta[active])
    try:
        b = np.linalg.solve(G[np.ix_(active, active)], c[active] - lam * s)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(b)) or np.any(np.sign(b) != s):
        return None
    cand = np.zeros_like(beta)
    cand[active] = b
    return cand


def _face_step(G, c, beta, lam):
    """Move toward the minimizer on the current sign face; stop at the first
    sign crossing. A step that would raise the objective is rejected.
    Returns True if it moved."""
    active = np.flatnonzero(beta)
    if active.size == 0:
        return False
    s = np.sign(beta[active])
    try:
        b = np.linalg.solve(G[np.ix_(active, active)], c[active] - lam * s)
    except np.linalg.LinAlgError:
        return False
    if not np.all(np.isfinite(b)):
        return False
    cur = beta[active]
    flip = np.sign(b) != s
    if flip.any():
        d = b - cur
        t = -cur[flip] / d[flip]
        i = int(np.argmin(t))
        step = min(max(float(t[i]), 0.0), 1.0)
        new = cur + step * d
        new[np.flatnonzero(flip)[i]] = 0.0
        new[np.sign(new) != s] = 0.0
    else:
        new = b
    # a near-singular face solve can be garbage; keep only real descent
    trial = beta.copy()
    trial[active] = new
    if _objective(G, c, 0.0, trial, lam) > _objective(G, c, 0.0, beta, lam):
        return False
    beta[active] = new
    return True


def _solve(G, c, lam, beta, tol, max_iter, naive):
    """Coordinate descent interleaved with sign-face steps.

    Converged when a sweep changes no coordinate by ``tol`` or more, when
    a face step lands on a point meeting the KKT conditions to
    ``NEWTON_KKT_TOL``, or when the KKT violation after a block of sweeps is
    below ``KKT_TOL``. Returns (sweeps, converged); ``beta`` is updated in
    place.
    """
    if naive:
        return _cd(G, c, lam, beta, tol, max_iter, True)
    sweeps = 0
    while sweeps < max_iter:
        s, conv = _cd(G, c, lam, beta, tol, min(FACE_EVERY, max_iter - sweeps), False)
        sweeps += s
        if conv:
            return sweeps, True
        if _face_step(G, c, beta, lam) and kkt_violation(G, c, beta, lam) <= NEWTON_KKT_TOL:
            return sweeps, True
        if kkt_violation(G, c, beta, lam) <= KKT_TOL:
            return sweeps, True
    return sweeps, False


def _polish(G, c, beta, lam):
    # Exact KKT solve on the active set: removes the O(tol) dependence on
    # coordinate order, so column permutations permute the solution exactly.
    cand = _newton(G, c, beta, lam)
    if cand is None:
        return beta
    if kkt_violation(G, c, cand, lam) <= kkt_violation(G, c, beta, lam):
        return cand
    return beta


def gram_inputs(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = X.shape[0]
    return X.T @ X / n, X.T @ y / n, float(y @ y) / n


def fit_lasso_gram(G, c, lam, yy=0.0, beta0=None, tol=TOL, max_iter=MAX_ITER,
                   naive=False, trace=False):
    """Lasso fit from precomputed ``G = X'X/n``, ``c = X'y/n``, ``yy = y'y/n``."""
    if lam < 0:
        raise ValidationError(f"lambda must be >= 0, got {lam}")
    G = np.ascontiguousarray(G, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    beta = np.zeros(c.shape[0]) if beta0 is None else np.array(beta0, dtype=float)
    objs = []
    if trace:
        # one sweep at a time so the objective can be recorded
        objs.append(_objective(G, c, yy, beta, lam))
        sweeps, conv = 0, False
        while sweeps < max_iter and not conv:
            s, conv = _cd(G, c, lam, beta, tol, 1, True)
            sweeps += s
            objs.append(_objective(G, c, yy, beta, lam))
    else:
        sweeps, conv = _solve(G, c, float(lam), beta, tol, max_iter, naive)
    if not conv:
        warnings.warn(f"lasso did not converge in {sweeps} sweeps (lambda={lam:.4g})",
                      NoConvergence, stacklevel=2)
    beta = _polish(G, c, beta, lam)
    return LassoFit(beta=beta, lam=float(lam),
                    objective=_objective(G, c, yy, beta, lam),
                    kkt_violation=kkt_violation(G, c, beta, lam),
                    iterations=int(sweeps), converged=bool(conv), trace=objs)


def fit_lasso(X, y, lam, **kwargs):
    """Solve ``min (1/(2n)) ||y - X b||^2 + lam ||b||_1``.

    Parameters
    ----------
    X : ndarray, shape (n, q)
    y : ndarray, shape (n,)
    lam : float
        Penalty level, ``lam >= 0``.
    **kwargs
        ``beta0``, ``tol``, ``max_iter``, ``naive`` (full sweeps only, no
        active set) and ``trace`` (record the objective after every sweep).

    Returns
    -------
    LassoFit
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("X and y must be finite")
    G, c, yy = gram_inputs(X, y)
    return fit_lasso_gram(G, c, lam, yy=yy, **kwargs)


def lambda_max(c):
    return float(np.max(np.abs(c))) if c.size else 0.0


def lambda_grid(lmax, grid_size=100, ratio=1e-3):
    if lmax <= 0:
        return np.zeros(1)
    return np.geomspace(lmax, ratio * lmax, grid_size)


def path_gram(G, c, grid, tol=TOL, max_iter=MAX_ITER):
    """Warm-started coefficient snapshots along ``grid``; shape (len(grid), q)."""
    G = np.ascontiguousarray(G, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    grid = np.asarray(grid, dtype=float)
    fits = np.zeros((grid.shape[0], c.shape[0]))
    beta = np.zeros(c.shape[0])
    ok = True
    for i, lam in enumerate(grid):
        _, conv = _solve(G, c, lam, beta, tol, max_iter, False)
        ok = ok and conv
        fits[i] = beta
    if not ok:
        warnings.warn("lasso path did not converge at every grid point", NoConvergence,
                      stacklevel=2)
    return fits


def entry_lambdas(grid, fits):
    """Largest grid value at which each coefficient is nonzero (0 if never)."""
    nz = fits != 0
    entered = nz.any(axis=0)
    first = np.argmax(nz, axis=0)
    return np.where(entered, np.asarray(grid)[first], 0.0)


def lasso_path_gram(G, c, grid_size=100, keep_fits=False):
    grid = lambda_grid(lambda_max(c), grid_size)
    if grid[0] == 0:
        return LassoPath(grid, np.zeros(c.shape[0]), None)
    fits = path_gram(G, c, grid)
    return LassoPath(grid, entry_lambdas(grid, fits), fits if keep_fits else None)


def lasso_path(X, y, grid_size=100, keep_fits=False):
    """Regularization path on a log grid from ``lambda_max`` to ``1e-3 lambda_max``.

    ``entry_lambda[j]`` is the largest grid value at which coefficient ``j`` is
    nonzero, or 0 if it never enters.
    """
    G, c, _ = gram_inputs(X, y)
    return lasso_path_gram(G, c, grid_size=grid_size, keep_fits=keep_fits)


def fold_ids(n, folds, rng):
    """Fold label per row from a seeded shuffle; fold sizes differ by at most one."""
    rng = np.random.default_rng(rng)
    perm = rng.permutation(n)
    labels = np.empty(n, dtype=int)
    for f, part in enumerate(np.array_split(perm, folds)):
        labels[part] = f
    return labels


def cv_lambda(X, y, folds=10, grid_size=100, rng=None, return_curve=False, rule="min"):
    """Pick lambda by K-fold cross-validated squared prediction error.

    The grid runs from ``lambda_max = ||X'y||_inf / n`` down to
    ``1e-3 lambda_max`` on the full data. ``rule="min"`` returns the
    minimizer of the CV error, ties to the larger lambda. ``rule="1se"``
    returns the largest lambda whose CV error is within one standard error
    of the minimum, with the standard error taken over the fold errors.
    """
    if rule not in ("min", "1se"):
        raise ValidationError(f"rule must be 'min' or '1se', got {rule!r}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = X.shape[0]
    if not 2 <= folds <= n:
        raise ValidationError(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    XtX = X.T @ X
    Xty = X.T @ y
    grid = lambda_grid(lambda_max(Xty / n), grid_size)
    if grid[0] == 0:
        return (0.0, grid, np.zeros(1)) if return_curve else 0.0
    labels = fold_ids(n, folds, rng)
    sse = np.zeros(grid.shape[0])
    fold_mse = np.zeros((folds, grid.shape[0]))
    sizes = np.zeros(folds)
    for f in range(folds):
        te = labels == f
        Xte, yte = X[te], y[te]
        ntr = n - Xte.shape[0]
        G = (XtX - Xte.T @ Xte) / ntr
        c = (Xty - Xte.T @ yte) / ntr
        fits = path_gram(G, c, grid)
        resid = yte[:, None] - Xte @ fits.T
        part = np.einsum("ij,ij->j", resid, resid)
        sse += part
        sizes[f] = Xte.shape[0]
        fold_mse[f] = part / max(Xte.shape[0], 1)
    err = sse / n
    best = int(np.argmin(err))
    if rule == "1se":
        w = sizes / sizes.sum()
        sd = np.sqrt((w[:, None] * (fold_mse - err) ** 2).sum(axis=0) / (folds - 1))
        best = int(np.flatnonzero(err <= err[best] + sd[best])[0])
    if return_curve:
        return float(grid[best]), grid, err
    return float(grid[best])
