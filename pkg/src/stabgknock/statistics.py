"""Knockoff statistics on an augmented design ``[X*, Xk]``.

SPD (selection probability difference) fits a Lasso on each half of ``L``
random half-splits, keeps the features selected in *both* halves, and sets
``W_j = pi_j - pi_{j+p}`` from the selection frequencies. LSM and LCD are the
usual fixed-X comparators.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import warnings

import numpy as np

from .errors import NoConvergence, ValidationError
from .lasso import cv_lambda, fit_lasso_gram, lasso_path_gram

KINDS = ("SPD", "LSM", "LCD")
LAMBDA_RULES = ("global_cv", "per_replicate_cv")
CV_RULES = ("min", "1se")


@dataclass(frozen=True)
class SubsamplePlan:
    L: int
    pairs: tuple
    seed: int
    n: int

    def fingerprint(self):
        return tuple((tuple(a.tolist()), tuple(b.tolist())) for a, b in self.pairs)


@dataclass
class SelectionFrequencies:
    pi_tilde: np.ndarray
    per_replicate_supports: list


@dataclass
class KnockoffStats:
    W: np.ndarray
    kind: str
    lambda_used: object = None
    plan: SubsamplePlan = field(default=None, repr=False)
    frequencies: SelectionFrequencies = field(default=None, repr=False)


def _seed_seq(seed, *tags):
    return np.random.SeedSequence([int(seed), *tags])


def make_plan(n, L, seed):
    """``L`` uniform half-splits of ``range(n)``; ``|I| = n // 2``."""
    if n < 4:
        raise ValidationError(f"need n >= 4 for half-splits, got {n}")
    if L < 1:
        raise ValidationError(f"need L >= 1, got {L}")
    rng = np.random.default_rng(_seed_seq(seed, 0x5B))
    half = n // 2
    pairs = []
    for _ in range(L):
        perm = rng.permutation(n)
        pairs.append((np.sort(perm[:half]), np.sort(perm[half:])))
    return SubsamplePlan(L=L, pairs=tuple(pairs), seed=int(seed), n=n)


def intersect_support(b1, b2):
    b1 = np.asarray(b1)
    b2 = np.asarray(b2)
    if b1.shape != b2.shape:
        raise ValidationError("coefficient vectors must have equal length")
    return np.flatnonzero((b1 != 0) & (b2 != 0))


def _inner(M, y, rows):
    Mr, yr = M[rows], y[rows]
    m = rows.shape[0]
    return Mr.T @ Mr / m, Mr.T @ yr / m, float(yr @ yr) / m


def _spd_replicate(M, y, pair, lam, lambda_rule, seed, l, folds, cv_rule):
    supports = []
    for h, rows in enumerate(pair):
        G, c, yy = _inner(M, y, rows)
        lam_h = lam
        if lambda_rule == "per_replicate_cv":
            lam_h = cv_lambda(M[rows], y[rows], folds=min(folds, rows.size),
                              rng=np.random.default_rng(_seed_seq(seed, 0xC5, l, h)),
                              rule=cv_rule)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", NoConvergence)
            fit = fit_lasso_gram(G, c, lam_h, yy=yy)
        if caught:
            warnings.warn(f"replicate {l}, half {h}: {caught[0].message}",
                          NoConvergence, stacklevel=3)
        supports.append(fit.beta)
    return intersect_support(*supports)


def spd_statistics(aug, Y_star, plan, lambda_rule="global_cv", folds=10, n_jobs=1,
                   cv_rule="1se"):
    """SPD statistics by intersection subsampling.

    Parameters
    ----------
    aug : AugmentedDesign
    Y_star : ndarray, shape (n,)
    plan : SubsamplePlan
        Must span the rows of ``aug``.
    lambda_rule : {"global_cv", "per_replicate_cv"} or float
        ``global_cv`` picks one lambda by K-fold CV on the full augmented data
        and reuses it for all ``2L`` fits.
    cv_rule : {"1se", "min"}
        How the CV curve is turned into a lambda. The one-standard-error
        rule keeps null features out of most half-sample fits.
    n_jobs : int
        Threads used for the replicate fits.

    Returns
    -------
    stats : KnockoffStats
    freqs : SelectionFrequencies
    """
    M = aug.matrix
    y = np.asarray(Y_star, dtype=float).ravel()
    n, q = M.shape
    p = q // 2
    if plan.n != n or y.shape[0] != n:
        raise ValidationError(f"plan spans {plan.n} rows, data has {n}")
    lam = None
    if isinstance(lambda_rule, str):
        if lambda_rule not in LAMBDA_RULES:
            raise ValidationError(f"unknown lambda_rule {lambda_rule!r}")
        if lambda_rule == "global_cv":
            lam = cv_lambda(M, y, folds=folds,
                            rng=np.random.default_rng(_seed_seq(plan.seed, 0xCF)),
                            rule=cv_rule)
    else:
        lam = float(lambda_rule)
        lambda_rule = "fixed"

    def run(l):
        return _spd_replicate(M, y, plan.pairs[l], lam, lambda_rule, plan.seed, l, folds,
                              cv_rule)

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            supports = list(ex.map(run, range(plan.L)))
    else:
        supports = [run(l) for l in range(plan.L)]
    counts = np.zeros(q)
    for s in supports:
        counts[s] += 1
    pi = counts / plan.L
    W = pi[:p] - pi[p:]
    freqs = SelectionFrequencies(pi_tilde=pi,
                                 per_replicate_supports=[tuple(s.tolist()) for s in supports])
    used = lam if lam is not None else "per_replicate_cv"
    return KnockoffStats(W=W, kind="SPD", lambda_used=used, plan=plan,
                         frequencies=freqs), freqs


def lsm_from_entries(entry, p):
    Z, Zk = entry[:p], entry[p:]
    return np.maximum(Z, Zk) * np.sign(Z - Zk)


def lsm_statistics(aug, Y_star, grid_size=100):
    """Signed max of Lasso entry points: ``W_j = max(Z_j, Zk_j) sign(Z_j - Zk_j)``."""
    M = aug.matrix
    y = np.asarray(Y_star, dtype=float).ravel()
    n = M.shape[0]
    path = lasso_path_gram(M.T @ M / n, M.T @ y / n, grid_size=grid_size)
    W = lsm_from_entries(path.entry_lambda, aug.p)
    return KnockoffStats(W=W, kind="LSM",
                         lambda_used={"grid_size": grid_size,
                                      "lambda_max": float(path.lambda_grid[0])})


def lcd_statistics(aug, Y_star, lam=None, rng=None, folds=10, cv_rule="1se"):
    """Lasso coefficient difference ``|b_j| - |b_{j+p}|`` at one lambda.

    ``lam`` defaults to K-fold CV on the full augmented data.
    """
    M = aug.matrix
    y = np.asarray(Y_star, dtype=float).ravel()
    n = M.shape[0]
    if lam is None:
        lam = cv_lambda(M, y, folds=folds, rng=rng, rule=cv_rule)
    fit = fit_lasso_gram(M.T @ M / n, M.T @ y / n, lam, yy=float(y @ y) / n)
    b = np.abs(fit.beta)
    p = aug.p
    return KnockoffStats(W=b[:p] - b[p:], kind="LCD", lambda_used=float(lam))


def statistic_function(kind="SPD", L=100, lambda_rule="global_cv", grid_size=100,
                       folds=10, n_jobs=1, cv_rule="1se"):
    """Return ``fn(aug, Y_star, seed) -> KnockoffStats`` with all randomness from ``seed``."""
    kind = kind.upper()
    if cv_rule not in CV_RULES:
        raise ValidationError(f"cv_rule must be one of {CV_RULES}, got {cv_rule!r}")
    if kind not in KINDS:
        raise ValidationError(f"statistic must be one of {KINDS}, got {kind!r}")

    def fn(aug, Y_star, seed):
        if kind == "SPD":
            plan = make_plan(aug.n, L, seed)
            return spd_statistics(aug, Y_star, plan, lambda_rule=lambda_rule,
                                  folds=folds, n_jobs=n_jobs, cv_rule=cv_rule)[0]
        if kind == "LSM":
            return lsm_statistics(aug, Y_star, grid_size=grid_size)
        return lcd_statistics(aug, Y_star, rng=np.random.default_rng(_seed_seq(seed, 0xCD)),
                              folds=folds, cv_rule=cv_rule)

    fn.kind = kind
    return fn


def _as_w(out):
    return np.asarray(out.W if isinstance(out, KnockoffStats) else out, dtype=float)


def check_antisymmetry(statistic_fn, aug, Y_star, j, seed, atol=1e-10, W_ref=None):
    """Swap column ``j`` with its knockoff, replay ``seed``, and check that only
    ``W_j`` changes, by a sign flip."""
    if not 0 <= j < aug.p:
        raise ValidationError(f"feature index {j} out of range")
    W0 = _as_w(statistic_fn(aug, Y_star, seed)) if W_ref is None else np.asarray(W_ref)
    W1 = _as_w(statistic_fn(aug.swap([j]), Y_star, seed))
    expected = W0.copy()
    expected[j] = -W0[j]
    return bool(np.all(np.abs(W1 - expected) <= atol))
