"""Generalized fixed-X knockoffs for a projected design.

Given a projected, unit-norm design ``X*`` with Gram ``S = X*'X*``, the
knockoff matrix is

    Xk = X* (I - S^{-1} D) + U C,     D = diag(s),  C'C = 2D - D S^{-1} D,

with ``U`` orthonormal and orthogonal to ``X*``. Then ``Xk'Xk = S`` and
``Xk'X* = S - D``. ``U`` is additionally kept orthogonal to the spline basis,
so ``W Xk = Xk`` and the projected response sees the same geometry as the
Gram matrix.
"""

from dataclasses import dataclass, field, replace
import warnings

import numpy as np
from scipy.linalg import cholesky, eigh

from .errors import (
    BadVariance,
    CholeskyFailure,
    DegenerateKnockoff,
    DimensionError,
    SingularGram,
    ValidationError,
)


@dataclass(frozen=True)
class KnockoffConfig:
    s_mode: str = "equicorrelated"
    s_user: np.ndarray = None
    psd_tolerance: float = 1e-8
    jitter: float = 1e-10
    complement: str = "random"

    def __post_init__(self):
        if self.complement not in ("random", "qr"):
            raise ValidationError(f"unknown complement rule {self.complement!r}")
        if self.s_mode not in ("equicorrelated", "user_supplied"):
            raise ValidationError(f"unknown s_mode {self.s_mode!r}")
        if self.s_mode == "user_supplied":
            if self.s_user is None:
                raise ValidationError("s_mode='user_supplied' needs s_user")
            if np.any(np.asarray(self.s_user) < 0):
                raise ValidationError("s_user entries must be >= 0")


@dataclass(frozen=True)
class AugmentedDesign:
    """``[X*, Xk]`` with the construction record.

    ``construction_residuals`` holds the max-abs deviations of ``Xk'Xk`` from
    ``S`` and of ``Xk'X*`` from ``S - diag(s)``.
    """

    X_star: np.ndarray
    X_tilde: np.ndarray
    s: np.ndarray
    gram: np.ndarray
    construction_residuals: tuple
    U_tilde: np.ndarray = field(repr=False, default=None)
    flags: tuple = ()

    @property
    def p(self):
        return self.X_star.shape[1]

    @property
    def n(self):
        return self.X_star.shape[0]

    @property
    def matrix(self):
        return np.hstack([self.X_star, self.X_tilde])

    def swap(self, A):
        """Exchange columns ``j`` of ``X*`` and ``Xk`` for every ``j`` in ``A``."""
        A = np.asarray(sorted(set(int(j) for j in A)), dtype=int)
        Xs = self.X_star.copy()
        Xt = self.X_tilde.copy()
        if A.size:
            Xs[:, A], Xt[:, A] = self.X_tilde[:, A], self.X_star[:, A]
        M = np.hstack([Xs, Xt])
        return replace(self, X_star=Xs, X_tilde=Xt, gram=M.T @ M)


def gram_matrix(X_star):
    X_star = np.asarray(X_star, dtype=float)
    if not np.all(np.isfinite(X_star)):
        raise ValidationError("X_star contains non-finite values")
    S = X_star.T @ X_star
    return 0.5 * (S + S.T)


def equicorrelated_s(Sigma):
    """``s_j = min(2 lambda_min(Sigma), 1)`` for every j (unit-diagonal Sigma)."""
    Sigma = np.asarray(Sigma, dtype=float)
    lam_min = float(np.linalg.eigvalsh(Sigma)[0])
    if lam_min <= 1e-10:
        raise SingularGram(f"Gram matrix is singular (lambda_min = {lam_min:.3g})")
    return np.full(Sigma.shape[0], min(2.0 * lam_min, 1.0))


def _factor(M, jitter):
    """Upper factor ``C`` with ``C'C ~= M``; returns (C, flag)."""
    M = 0.5 * (M + M.T)
    try:
        return cholesky(M, lower=False), None
    except np.linalg.LinAlgError:
        pass
    try:
        return cholesky(M + jitter * np.eye(M.shape[0]), lower=False), "jitter"
    except np.linalg.LinAlgError:
        pass
    vals, vecs = eigh(M)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))).T, "eigen_clip"


def random_complement(A, k, rng=None):
    """``k`` orthonormal columns orthogonal to ``col(A)``, uniformly oriented.

    A Gaussian matrix is projected off ``col(A)`` and orthonormalized, so the
    columns spread their mass evenly over the rows. Row-structured bases (such
    as the trailing columns of a complete QR) concentrate on a few rows, which
    makes knockoffs look different from the originals on row subsamples.
    """
    n = A.shape[0]
    U, sv, _ = np.linalg.svd(A, full_matrices=False)
    rank = int(np.sum(sv > 1e-10 * max(sv.max() if sv.size else 0.0, 1.0)))
    if n - rank < k:
        raise DimensionError(
            f"only {n - rank} dimensions orthogonal to the design; need {k}"
        )
    B = U[:, :rank]
    G = np.random.default_rng(rng).standard_normal((n, k))
    for _ in range(2):
        G -= B @ (B.T @ G)
    Q, _ = np.linalg.qr(G)
    # second pass keeps Q orthogonal to col(A) to rounding
    Q -= B @ (B.T @ Q)
    Q, _ = np.linalg.qr(Q)
    return Q


def orthogonal_complement(A, k):
    """``k`` orthonormal columns orthogonal to ``col(A)``; deterministic."""
    n = A.shape[0]
    Q, R = np.linalg.qr(A, mode="complete")
    diag = np.abs(np.diag(R)) if R.size else np.empty(0)
    rank = int(np.sum(diag > 1e-10 * max(diag.max() if diag.size else 0.0, 1.0)))
    if n - rank < k:
        raise DimensionError(
            f"only {n - rank} dimensions orthogonal to the design; need {k}"
        )
    if rank < A.shape[1]:
        # rank-deficient A: rely on the SVD for the complement
        U, sv, _ = np.linalg.svd(A, full_matrices=True)
        rank = int(np.sum(sv > 1e-10 * max(sv.max(), 1.0)))
        return U[:, rank:rank + k]
    return Q[:, A.shape[1]:A.shape[1] + k]


def construct_gknockoff(X_star, s=None, Z=None, config=None, rng=None):
    """Build generalized knockoffs for ``X_star``.

    Parameters
    ----------
    X_star : ndarray, shape (n, p)
        Projected design with unit-norm columns.
    s : ndarray, shape (p,), optional
        Knockoff gaps; equicorrelated when omitted.
    Z : ndarray, shape (n, K), optional
        Spline basis the design was projected off. When given, the random
        part ``U`` is chosen orthogonal to ``Z`` too, which needs
        ``n - K >= 2p``.
    config : KnockoffConfig, optional
    rng : int or Generator, optional
        Seeds the random complement basis (``config.complement == "random"``);
        ``None`` means seed 0, so construction is deterministic by default.

    Returns
    -------
    AugmentedDesign
    """
    config = config or KnockoffConfig()
    X_star = np.asarray(X_star, dtype=float)
    n, p = X_star.shape
    K = 0 if Z is None else np.asarray(Z).shape[1]
    if n - K < 2 * p:
        raise DimensionError(
            f"knockoff construction needs n - K >= 2p (n={n}, K={K}, p={p}); "
            "row-augment first"
        )
    Sigma = gram_matrix(X_star)
    if s is None:
        if config.s_mode == "user_supplied":
            s = np.asarray(config.s_user, dtype=float)
        else:
            s = equicorrelated_s(Sigma)
    s = np.asarray(s, dtype=float)
    if s.shape != (p,):
        raise ValidationError(f"s must have shape ({p},), got {s.shape}")
    if np.any(s < 0):
        raise ValidationError("s entries must be >= 0")
    flags = []
    if np.all(s == 0):
        flags.append("s_zero")
        warnings.warn("s = 0: knockoffs equal the originals", DegenerateKnockoff,
                      stacklevel=2)
    try:
        Sinv = np.linalg.inv(Sigma)
    except np.linalg.LinAlgError as exc:
        raise SingularGram("Gram matrix is not invertible") from exc
    D = np.diag(s)
    if float(np.linalg.eigvalsh(2 * Sigma - D)[0]) < -config.psd_tolerance:
        raise ValidationError("2 Sigma - diag(s) is not positive semidefinite")
    M = 2 * D - D @ Sinv @ D
    if float(np.linalg.eigvalsh(0.5 * (M + M.T))[0]) < -max(config.psd_tolerance,
                                                              1e3 * config.jitter):
        raise CholeskyFailure("2 diag(s) - diag(s) Sigma^{-1} diag(s) is indefinite")
    C = np.zeros((p, p))
    flag = None
    pos = np.flatnonzero(s > 0)
    if pos.size:
        C_pos, flag = _factor(M[np.ix_(pos, pos)], config.jitter)
        C[np.ix_(pos, pos)] = C_pos
    if flag:
        flags.append(flag)
        if flag == "eigen_clip":
            warnings.warn("knockoff factor used eigenvalue clipping", DegenerateKnockoff,
                          stacklevel=2)
    basis = X_star if Z is None else np.hstack([np.asarray(Z, dtype=float), X_star])
    if config.complement == "random":
        U = random_complement(basis, p, 0 if rng is None else rng)
    else:
        U = orthogonal_complement(basis, p)
    X_tilde = X_star @ (np.eye(p) - Sinv @ D) + U @ C
    M2 = np.hstack([X_star, X_tilde])
    gram = M2.T @ M2
    gram = 0.5 * (gram + gram.T)
    res = (
        float(np.max(np.abs(X_tilde.T @ X_tilde - Sigma))),
        float(np.max(np.abs(X_tilde.T @ X_star - (Sigma - D)))),
    )
    return AugmentedDesign(X_star=X_star, X_tilde=X_tilde, s=s, gram=gram,
                           construction_residuals=res, U_tilde=U, flags=tuple(flags))


def verify_exchangeability(aug, A):
    """Max-abs change of the ``2p x 2p`` Gram after swapping the pairs in ``A``."""
    swapped = aug.swap(A)
    M = swapped.matrix
    return float(np.max(np.abs(M.T @ M - aug.matrix.T @ aug.matrix)))


def row_augment(projected, sigma2_hat, rng=None, target_rows=None):
    """Append zero design rows and N(0, sigma2_hat) pseudo-responses.

    ``target_rows`` defaults to ``2p``. The spline basis gets matching zero
    rows, so the projector acts as the identity on the new rows and the Gram
    matrix of ``X*`` is unchanged.
    """
    if not sigma2_hat > 0:
        raise BadVariance(f"sigma2_hat must be > 0, got {sigma2_hat}")
    n, p = projected.X_star.shape
    if target_rows is None:
        target_rows = 2 * p
    extra = int(target_rows) - n
    if extra <= 0:
        return projected
    rng = np.random.default_rng(rng)
    K = projected.Z.shape[1]
    X_star = np.vstack([projected.X_star, np.zeros((extra, p))])
    Y_star = np.concatenate([projected.Y_star,
                             rng.normal(0.0, np.sqrt(sigma2_hat), size=extra)])
    Z = np.vstack([projected.Z, np.zeros((extra, K))])
    return replace(projected, X_star=X_star, Y_star=Y_star, Z=Z, projector=None,
                   augmented_rows=projected.augmented_rows + extra)


def estimate_sigma2(X_star, Y_star, rng=None, basis_dim=0, folds=10):
    """Residual variance of a cross-validated Lasso fit.

    Degrees of freedom: projected rows minus the basis dimension minus the
    size of the selected support.
    """
    from .lasso import cv_lambda, fit_lasso

    X_star = np.asarray(X_star, dtype=float)
    Y_star = np.asarray(Y_star, dtype=float)
    n = X_star.shape[0]
    lam = cv_lambda(X_star, Y_star, folds=min(folds, n), rng=rng)
    fit = fit_lasso(X_star, Y_star, lam)
    r = Y_star - X_star @ fit.beta
    df = n - basis_dim - int(np.count_nonzero(fit.beta))
    if df <= 0:
        raise BadVariance("no residual degrees of freedom left for sigma^2")
    return float(r @ r) / df
