"""B-spline basis for the nonparametric covariate and the projection that
removes it from a partially linear model.

For ``Y = X beta + g(U) + eps`` with ``g(U) ~ Z theta``, multiplying by
``W = I - Z (Z'Z)^{-1} Z'`` leaves the linear problem ``WY = WX beta + W eps``.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.interpolate import BSpline

from .errors import (
    DegenerateKnots,
    RankDeficient,
    ValidationError,
    ZeroColumn,
)

COND_LIMIT = 1e12
DENSE_LIMIT = 4000


@dataclass(frozen=True)
class SplineSpec:
    """Polynomial spline of ``order`` m (degree m - 1) with ``interior_knots`` K*."""

    order: int = 3
    interior_knots: int = 1
    knot_rule: str = "quantile"

    def __post_init__(self):
        if self.order < 1:
            raise ValidationError(f"spline order must be >= 1, got {self.order}")
        if self.interior_knots < 0:
            raise ValidationError(
                f"interior_knots must be >= 0, got {self.interior_knots}"
            )
        if self.knot_rule not in ("quantile", "uniform"):
            raise ValidationError(f"unknown knot_rule {self.knot_rule!r}")

    @property
    def basis_dim(self):
        return self.interior_knots + self.order

    @classmethod
    def default(cls, n, order=3, knot_rule="quantile"):
        """K* = floor(n^(1/9)), the rate used in the simulation designs."""
        return cls(order=order, interior_knots=default_interior_knots(n),
                   knot_rule=knot_rule)


def default_interior_knots(n):
    # n ** (1/9) in floating point can land just under an integer (2**9 -> 1.999...)
    r = round(n ** (1.0 / 9.0))
    return r if r ** 9 <= n else int(math.floor(n ** (1.0 / 9.0)))


@dataclass(frozen=True)
class DesignTriple:
    """Raw observations: design ``X`` (n x p), covariate ``U`` and response ``Y``."""

    X: np.ndarray
    U: np.ndarray
    Y: np.ndarray
    names: tuple = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        U = np.asarray(self.U, dtype=float).ravel()
        Y = np.asarray(self.Y, dtype=float).ravel()
        n, p = X.shape
        if n < 1 or p < 1:
            raise ValidationError(f"empty design of shape {X.shape}")
        if U.shape[0] != n or Y.shape[0] != n:
            raise ValidationError(
                f"row mismatch: X has {n} rows, U has {U.shape[0]}, Y has {Y.shape[0]}"
            )
        for name, arr in (("X", X), ("U", U), ("Y", Y)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")
        names = self.names
        if names is None:
            names = tuple(f"x{j + 1}" for j in range(p))
        elif len(names) != p:
            raise ValidationError(f"{len(names)} column names for {p} columns")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "names", tuple(names))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def subset(self, rows=None, cols=None):
        X, U, Y, names = self.X, self.U, self.Y, self.names
        if rows is not None:
            rows = np.asarray(rows)
            X, U, Y = X[rows], U[rows], Y[rows]
        if cols is not None:
            cols = np.asarray(cols, dtype=int)
            X = X[:, cols]
            names = tuple(names[j] for j in cols)
        return DesignTriple(X, U, Y, names)


def knot_vector(U, spec):
    """Full knot vector with ``order``-fold boundary knots at min/max of ``U``."""
    U = np.asarray(U, dtype=float)
    lo, hi = float(U.min()), float(U.max())
    if not hi > lo:
        raise DegenerateKnots("U is constant; the knot span is empty")
    kstar = spec.interior_knots
    if kstar > 0:
        if np.unique(U).size < kstar:
            raise DegenerateKnots(
                f"{np.unique(U).size} distinct U values for {kstar} interior knots"
            )
        probs = np.arange(1, kstar + 1) / (kstar + 1)
        if spec.knot_rule == "quantile":
            inner = np.quantile(U, probs)
        else:
            inner = lo + probs * (hi - lo)
    else:
        inner = np.empty(0)
    m = spec.order
    return np.concatenate([np.full(m, lo), inner, np.full(m, hi)])


def build_basis(U, spec, knots=None):
    """Evaluate the B-spline basis at ``U``.

    Parameters
    ----------
    U : array-like, shape (n,)
    spec : SplineSpec
    knots : array-like, optional
        Full knot vector; computed from ``U`` by ``spec.knot_rule`` if omitted.

    Returns
    -------
    Z : ndarray, shape (n, K)
        ``Z[i, k] = B_k(U_i)``; rows sum to one.
    """
    U = np.asarray(U, dtype=float).ravel()
    if not np.all(np.isfinite(U)):
        raise ValidationError("U contains non-finite values")
    K = spec.basis_dim
    if U.shape[0] <= K:
        raise ValidationError(f"need n > K, got n={U.shape[0]}, K={K}")
    t = knot_vector(U, spec) if knots is None else np.asarray(knots, dtype=float)
    # points outside the span (new data) are clipped onto it
    x = np.clip(U, t[0], t[-1])
    Z = BSpline.design_matrix(x, t, spec.order - 1).toarray()
    _check_rank(Z)
    return Z


def _check_rank(Z):
    s = np.linalg.svd(Z, compute_uv=False)
    if s[-1] <= 0 or (s[0] / s[-1]) ** 2 > COND_LIMIT:
        cond = np.inf if s[-1] <= 0 else (s[0] / s[-1]) ** 2
        raise RankDeficient(f"Z'Z is numerically singular (condition {cond:.3g})")


class Projector:
    """Action of ``W = I - P_Z``.

    The dense ``n x n`` matrix is materialized when ``n <= dense_limit``;
    otherwise ``W`` is applied through an orthonormal basis of ``col(Z)``.
    """

    def __init__(self, Z, dense_limit=DENSE_LIMIT):
        Z = np.asarray(Z, dtype=float)
        _check_rank(Z)
        self.n, self.K = Z.shape
        self.Q, _ = np.linalg.qr(Z)
        self.dense = None
        if self.n <= dense_limit:
            W = -self.Q @ self.Q.T
            W[np.diag_indices_from(W)] += 1.0
            self.dense = 0.5 * (W + W.T)

    def apply(self, A):
        A = np.asarray(A, dtype=float)
        if self.dense is not None:
            return self.dense @ A
        return self.apply_factored(A)

    def apply_factored(self, A):
        A = np.asarray(A, dtype=float)
        return A - self.Q @ (self.Q.T @ A)

    def matrix(self):
        if self.dense is not None:
            return self.dense
        return self.apply_factored(np.eye(self.n))

    @property
    def rank(self):
        return self.n - self.K


def projection_complement(Z, dense_limit=DENSE_LIMIT):
    """Return the projector onto the orthogonal complement of ``col(Z)``."""
    return Projector(Z, dense_limit=dense_limit)


@dataclass(frozen=True)
class ProjectedData:
    """Projected, column-standardized design and projected response.

    ``augmented_rows`` counts synthetic rows appended for knockoff
    construction; for those rows ``Z`` is zero and the projector acts as the
    identity.
    """

    X_star: np.ndarray
    Y_star: np.ndarray
    col_scales: np.ndarray
    basis: SplineSpec
    Z: np.ndarray
    knots: np.ndarray
    projector: Projector = field(repr=False, default=None)
    augmented_rows: int = 0

    @property
    def n(self):
        return self.X_star.shape[0]

    @property
    def p(self):
        return self.X_star.shape[1]

    @property
    def residual_dim(self):
        """Dimension of the range of the projector."""
        return self.n - self.Z.shape[1]


def project_data(d, spec=None):
    """Project the design and response off the spline space and standardize.

    Columns of ``X_star`` have unit Euclidean norm; ``col_scales`` keeps the
    norms of ``W X`` so coefficients can be mapped back to the raw scale.
    """
    if spec is None:
        spec = SplineSpec.default(d.n)
    knots = knot_vector(d.U, spec)
    Z = build_basis(d.U, spec, knots=knots)
    P = projection_complement(Z)
    WX = P.apply(d.X)
    norms = np.sqrt(np.einsum("ij,ij->j", WX, WX))
    bad = np.flatnonzero(norms < 1e-12)
    if bad.size:
        raise ZeroColumn(int(bad[0]), float(norms[bad[0]]))
    X_star = WX / norms
    Y_star = P.apply(d.Y)
    return ProjectedData(X_star=X_star, Y_star=Y_star, col_scales=norms,
                         basis=spec, Z=Z, knots=knots, projector=P)


def recover_nonparametric(Z, Y, X, beta_hat):
    """Least-squares spline fit of the partial residual ``Y - X beta_hat``.

    Returns
    -------
    theta_hat : ndarray, shape (K,)
    g_hat : ndarray, shape (n,)
    """
    Z = np.asarray(Z, dtype=float)
    _check_rank(Z)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    r = np.asarray(Y, dtype=float).ravel() - X @ np.asarray(beta_hat, dtype=float).ravel()
    Q, R = np.linalg.qr(Z)
    theta = np.linalg.solve(R, Q.T @ r)
    return theta, Z @ theta


def select_interior_knots_bic(d, order=3, max_knots=None, knot_rule="quantile"):
    """Choose K* by BIC of the unpenalized least-squares fit of Y on [X, Z].

    BIC = n log(RSS / n) + (p + K) log n. When ``p + K >= n`` the linear part
    is dropped from the fit and only the spline part is scored.
    """
    n, p = d.n, d.p
    if max_knots is None:
        max_knots = max(1, int(np.ceil(2 * n ** (1.0 / 5.0))))
    best = None
    for kstar in range(0, max_knots + 1):
        spec = SplineSpec(order=order, interior_knots=kstar, knot_rule=knot_rule)
        K = spec.basis_dim
        if n <= K + 1:
            break
        try:
            Z = build_basis(d.U, spec)
        except (RankDeficient, DegenerateKnots):
            continue
        use_x = p + K < n
        M = np.hstack([d.X, Z]) if use_x else Z
        coef, *_ = np.linalg.lstsq(M, d.Y, rcond=None)
        rss = float(np.sum((d.Y - M @ coef) ** 2))
        bic = n * np.log(max(rss, 1e-300) / n) + M.shape[1] * np.log(n)
        if best is None or bic < best[0]:
            best = (bic, kstar)
    if best is None:
        raise DegenerateKnots("no admissible knot count for BIC selection")
    return best[1]
