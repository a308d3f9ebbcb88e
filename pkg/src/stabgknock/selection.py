"""Knockoff / Knockoff+ thresholds, the selected set, and the B-H baseline."""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ValidationError, ZeroVariance

MODES = ("knockoff", "knockoff_plus")


@dataclass(frozen=True)
class SelectionOutcome:
    threshold_T: float
    selected: tuple
    fdp_hat: float
    q: float
    mode: str
    W: np.ndarray = field(default=None, repr=False)
    provenance: dict = field(default_factory=dict)


def _check(q, mode):
    if not 0 < q < 1:
        raise ValidationError(f"q must be in (0, 1), got {q}")
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")


def fdp_ratios(W, mode):
    """Candidate thresholds (sorted nonzero |W_j|) and the estimated FDP at each."""
    W = np.asarray(W, dtype=float)
    cand = np.unique(np.abs(W[W != 0]))
    if cand.size == 0:
        return cand, cand
    pos = np.sort(W[W > 0])
    neg = np.sort(-W[W < 0])
    n_pos = pos.size - np.searchsorted(pos, cand, side="left")   # W_j >= t
    n_neg = neg.size - np.searchsorted(neg, cand, side="left")   # W_j <= -t
    offset = 1.0 if mode == "knockoff_plus" else 0.0
    return cand, (offset + n_neg) / np.maximum(n_pos, 1)


def knockoff_threshold(W, q, mode="knockoff_plus"):
    """Smallest nonzero ``|W_j|`` whose estimated FDP is at most ``q``.

    The estimate is ``#{W_j <= -t} / max(#{W_j >= t}, 1)``, with one added to
    the numerator for ``knockoff_plus``. Returns ``inf`` when no candidate
    qualifies.
    """
    _check(q, mode)
    cand, ratio = fdp_ratios(W, mode)
    ok = np.flatnonzero(ratio <= q)
    return float(cand[ok[0]]) if ok.size else float("inf")


def select(W, q, mode="knockoff_plus", provenance=None):
    W = np.asarray(W, dtype=float)
    T = knockoff_threshold(W, q, mode)
    if np.isinf(T):
        selected, fdp = (), 0.0
    else:
        selected = tuple(int(j) for j in np.flatnonzero(W >= T))
        offset = 1.0 if mode == "knockoff_plus" else 0.0
        fdp = (offset + np.sum(W <= -T)) / max(len(selected), 1)
    return SelectionOutcome(threshold_T=T, selected=selected, fdp_hat=float(fdp), q=q,
                            mode=mode, W=W, provenance=dict(provenance or {}))


def bh_select(pvalues, q):
    """Benjamini-Hochberg step-up: reject the k* smallest, k* = max{k : p_(k) <= kq/m}."""
    pv = np.asarray(pvalues, dtype=float)
    if np.any((pv < 0) | (pv > 1)) or np.any(~np.isfinite(pv)):
        raise ValidationError("p-values must lie in [0, 1]")
    m = pv.size
    if m == 0:
        return ()
    order = np.argsort(pv, kind="stable")
    passed = np.flatnonzero(pv[order] <= q * np.arange(1, m + 1) / m)
    if passed.size == 0:
        return ()
    return tuple(sorted(int(j) for j in order[: passed[-1] + 1]))


def univariate_pvalues(X_star, Y_star, dims_removed=0):
    """Two-sided t-test p-values for the slope of ``Y*`` on each column of ``X*``.

    The regressions go through the origin, since projected columns are
    already orthogonal to the constant. Residual degrees of freedom are
    ``n - 1 - dims_removed``; pass the spline basis dimension for projected
    data.
    """
    X = np.atleast_2d(np.asarray(X_star, dtype=float))
    y = np.asarray(Y_star, dtype=float).ravel()
    n = X.shape[0]
    if n <= 2:
        raise ValidationError("need n > 2 for univariate regressions")
    df = n - 1 - dims_removed
    if df < 1:
        raise ValidationError("no residual degrees of freedom")
    xx = np.einsum("ij,ij->j", X, X)
    bad = np.flatnonzero(xx <= 0)
    if bad.size:
        raise ZeroVariance(int(bad[0]))
    slope = X.T @ y / xx
    rss = np.maximum(y @ y - slope ** 2 * xx, 0.0)
    se = np.sqrt(rss / df / xx)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, slope / se, np.where(slope != 0, np.inf, 0.0))
    # relative floor for rss that is pure rounding
    exact = rss <= 1e-24 * max(y @ y, 1e-300)
    t = np.where(exact & (slope != 0), np.inf, t)
    return np.clip(2 * stats.t.sf(np.abs(t), df), 0.0, 1.0)
