"""Joint feature screening by cardinality-constrained least squares.

Sparse-PLS solves ``min (1/(2n)) ||Y* - X* b||^2`` subject to ``||b||_0 <= k``
on the projected data. We use iterative hard thresholding from several
starts, then a best-improvement single-swap search. Marginal screens (SIS on
Pearson correlation, RRCS on Kendall's tau) are provided as baselines.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
import math
import warnings

import numpy as np
from scipy import stats

from .errors import RankDeficientSupport, TooLarge, ValidationError, ZeroVariance

EXHAUSTIVE_MAX_P = 15


@dataclass
class ScreenResult:
    kept: tuple
    beta_k: np.ndarray
    objective: float
    solver_trace: dict = field(default_factory=dict, repr=False)

    @property
    def k(self):
        return len(self.kept)


@dataclass(frozen=True)
class SolverOptions:
    restarts: int = 10
    iht_max_iter: int = 500
    swap_max_iter: int = 10_000
    tol: float = 1e-12
    n_jobs: int = 1


def default_k(n):
    """``floor(n / log n)``."""
    return int(math.floor(n / math.log(n)))


def _check_xy(X_star, Y_star):
    X = np.atleast_2d(np.asarray(X_star, dtype=float))
    y = np.asarray(Y_star, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValidationError(f"X has {X.shape[0]} rows, Y has {y.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("X and Y must be finite")
    return X, y


class _Gram:
    """Least-squares pieces shared by every start: ``G = X'X``, ``c = X'y``."""

    def __init__(self, X, y):
        self.n, self.p = X.shape
        self.G = X.T @ X
        self.c = X.T @ y
        self.yy = float(y @ y)
        self.diag = np.diag(self.G).copy()

    def objective(self, b):
        rss = self.yy - 2 * self.c @ b + b @ self.G @ b
        return max(rss, 0.0) / (2 * self.n)

    def refit(self, S):
        """Least squares on support ``S``; returns (b, H, rank_deficient)."""
        S = np.asarray(S, dtype=int)
        b = np.zeros(self.p)
        if S.size == 0:
            return b, np.zeros((0, 0)), False
        GS = self.G[np.ix_(S, S)]
        try:
            cond = np.linalg.cond(GS)
        except np.linalg.LinAlgError:
            cond = np.inf
        if np.isfinite(cond) and cond < 1e12:
            H = np.linalg.inv(GS)
            bad = False
        else:
            H = np.linalg.pinv(GS, hermitian=True)
            bad = True
        H = 0.5 * (H + H.T)
        b[S] = H @ self.c[S]
        return b, H, bad


def _top_k(val, grad, k):
    """Indices of the ``k`` largest ``|val|``; ties by larger ``|grad|``, then lower index."""
    order = np.lexsort((np.arange(val.size), -np.abs(grad), -np.abs(val)))
    return np.sort(order[:k])


def _iht(gm, S0, k, step, max_iter, trace):
    b, _, _ = gm.refit(S0)
    obj = gm.objective(b)
    trace.append(obj)
    it = 0
    for it in range(1, max_iter + 1):
        grad = gm.c - gm.G @ b
        val = b + step * grad
        S = _top_k(val, grad, k)
        nb = np.zeros(gm.p)
        nb[S] = val[S]
        nobj = gm.objective(nb)
        if nobj > obj:
            # rounding at a fixed point; keep the previous iterate
            break
        moved = np.max(np.abs(nb - b))
        b, obj = nb, nobj
        trace.append(obj)
        if moved <= 1e-12 * max(1.0, np.max(np.abs(b))):
            break
    return np.flatnonzero(b), it


def _swap_search(gm, S, max_iter, tol, trace):
    """Best-improvement single swaps until none lowers the RSS."""
    S = np.asarray(S, dtype=int)
    b, H, bad = gm.refit(S)
    swaps = 0
    while swaps < max_iter and S.size:
        rss = max(gm.yy - gm.c[S] @ b[S], 0.0)
        trace.append(rss / (2 * gm.n))
        GS = gm.G[:, S]                          # X'X_S
        hd = np.diag(H)
        if np.any(hd <= 0):
            break
        r_proj = gm.c - GS @ b[S]                # X'r
        A = (GS @ H) / np.sqrt(hd)               # X'u_i
        uy = b[S] / np.sqrt(hd)                  # u_i'y
        perp = gm.diag - np.einsum("ij,jk,ik->i", GS, H, GS)   # ||P_perp x_j||^2
        num = r_proj[:, None] + A * uy[None, :]
        den = perp[:, None] + A ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(den > 1e-10 * gm.diag[:, None], num ** 2 / den, 0.0)
        new = rss + uy[None, :] ** 2 - gain
        new[S, :] = np.inf
        j, i = np.unravel_index(np.argmin(new), new.shape)
        if not new[j, i] < rss - tol * max(gm.yy, 1.0):
            break
        S = np.sort(np.append(np.delete(S, i), j))
        b, H, bad = gm.refit(S)
        swaps += 1
    return S, b, bad, swaps


def _run_start(gm, S0, k, step, opts):
    trace = []
    S, iters = _iht(gm, S0, k, step, opts.iht_max_iter, trace)
    S, b, bad, swaps = _swap_search(gm, S, opts.swap_max_iter, opts.tol, trace)
    return dict(S=S, b=b, objective=gm.objective(b), rank_deficient=bad,
                iht_iterations=iters, swaps=swaps, trace=trace)


def _finish(gm, S, b, trace):
    kept = tuple(int(j) for j in S if b[j] != 0)
    beta = np.zeros(gm.p)
    beta[list(kept)] = b[list(kept)]
    return ScreenResult(kept=kept, beta_k=beta, objective=gm.objective(beta),
                        solver_trace=trace)


def spls_screen(X_star, Y_star, k, solver_opts=None, rng=None):
    """Sparse projected least squares screen.

    Parameters
    ----------
    X_star : ndarray, shape (n, p)
        Projected design with unit-norm columns.
    Y_star : ndarray, shape (n,)
    k : int
        Sparsity level, ``1 <= k < p``.
    solver_opts : SolverOptions, optional
    rng : int or Generator, optional
        Seeds the random multistart supports.

    Returns
    -------
    ScreenResult
        ``kept`` is the support of the best local minimizer over all starts;
        ``beta_k`` holds its least-squares coefficients.
    """
    X, y = _check_xy(X_star, Y_star)
    n, p = X.shape
    opts = solver_opts or SolverOptions()
    if not 1 <= k < p:
        raise ValidationError(f"need 1 <= k < p, got k={k}, p={p}")
    rng = np.random.default_rng(rng)
    gm = _Gram(X, y)
    lmax = float(np.linalg.eigvalsh(gm.G)[-1])
    if lmax <= 0:
        raise ValidationError("design has no nonzero columns")
    step = 1.0 / lmax
    starts = [np.sort(sis_screen(X, y, k))]
    for _ in range(max(opts.restarts, 1) - 1):
        starts.append(np.sort(rng.choice(p, size=k, replace=False)))

    def run(S0):
        return _run_start(gm, S0, k, step, opts)

    if opts.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=opts.n_jobs) as ex:
            runs = list(ex.map(run, starts))
    else:
        runs = [run(S0) for S0 in starts]
    # lowest objective; ties to the earliest start
    best = min(range(len(runs)), key=lambda r: (runs[r]["objective"], r))
    win = runs[best]
    if win["rank_deficient"]:
        warnings.warn("kept columns are collinear; refit used a pseudo-inverse",
                      RankDeficientSupport, stacklevel=2)
    trace = dict(restarts=len(runs), best_start=best,
                 iterations=[r["iht_iterations"] for r in runs],
                 swaps=[r["swaps"] for r in runs],
                 improved_by_swaps=[r["swaps"] > 0 for r in runs],
                 objectives=[r["objective"] for r in runs],
                 objective_trace=win["trace"],
                 rank_deficient=win["rank_deficient"])
    return _finish(gm, win["S"], win["b"], trace)


def exhaustive_best_subset(X_star, Y_star, k):
    """Global minimizer over all supports of size at most ``k`` (``p <= 15``)."""
    X, y = _check_xy(X_star, Y_star)
    n, p = X.shape
    if p > EXHAUSTIVE_MAX_P:
        raise TooLarge(f"exhaustive search is limited to p <= {EXHAUSTIVE_MAX_P}, got {p}")
    if k < 0:
        raise ValidationError(f"k must be >= 0, got {k}")
    gm = _Gram(X, y)
    best = (gm.objective(np.zeros(p)), np.empty(0, dtype=int), np.zeros(p))
    checked = 1
    for size in range(1, min(k, p) + 1):
        for S in combinations(range(p), size):
            S = np.array(S)
            coef, *_ = np.linalg.lstsq(X[:, S], y, rcond=None)
            b = np.zeros(p)
            b[S] = coef
            r = y - X[:, S] @ coef
            obj = float(r @ r) / (2 * n)
            checked += 1
            if obj < best[0] - 1e-14 * max(gm.yy, 1.0):
                best = (obj, S, b)
    res = _finish(gm, best[1], best[2], dict(subsets=checked))
    return res


def _ranking(score):
    return np.lexsort((np.arange(score.size), -score))


def pearson_scores(X_star, Y_star):
    X, y = _check_xy(X_star, Y_star)
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    sx = np.sqrt(np.einsum("ij,ij->j", Xc, Xc))
    bad = np.flatnonzero(sx <= 1e-300)
    if bad.size:
        raise ZeroVariance(int(bad[0]))
    sy = np.sqrt(yc @ yc)
    if sy == 0:
        return np.zeros(X.shape[1])
    return np.abs(Xc.T @ yc) / (sx * sy)


def kendall_scores(X_star, Y_star):
    X, y = _check_xy(X_star, Y_star)
    out = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        tau = stats.kendalltau(X[:, j], y).statistic
        out[j] = 0.0 if np.isnan(tau) else abs(tau)
    return out


def sis_ranking(X_star, Y_star):
    """All features ordered by decreasing ``|Pearson correlation|``; ties to lower index."""
    return _ranking(pearson_scores(X_star, Y_star))


def rrcs_ranking(X_star, Y_star):
    """All features ordered by decreasing ``|Kendall tau|``; ties to lower index."""
    return _ranking(kendall_scores(X_star, Y_star))


def sis_screen(X_star, Y_star, k):
    """Top-``k`` features by ``|Pearson correlation|``, in rank order."""
    return sis_ranking(X_star, Y_star)[:k]


def rrcs_screen(X_star, Y_star, k):
    """Top-``k`` features by ``|Kendall tau|``, in rank order."""
    return rrcs_ranking(X_star, Y_star)[:k]


def spls_ranking(result, X_star, Y_star):
    """Complete ordering induced by a Sparse-PLS fit.

    Kept features come first by decreasing ``|beta_k|``; the rest follow by
    decreasing ``|x_j' r|`` for the screen's residual ``r``.
    """
    X, y = _check_xy(X_star, Y_star)
    kept = np.asarray(result.kept, dtype=int)
    r = y - X @ result.beta_k
    score = np.abs(X.T @ r)
    rest = np.setdiff1d(np.arange(X.shape[1]), kept)
    head = kept[_ranking(np.abs(result.beta_k[kept]))] if kept.size else kept
    tail = rest[_ranking(score[rest])]
    return np.concatenate([head, tail]).astype(int)
