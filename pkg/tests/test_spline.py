import numpy as np
import pytest
from hypothesis import given, strategies as st

from stabgknock.errors import DegenerateKnots, ValidationError, ZeroColumn
from stabgknock.spline import (
    DesignTriple,
    Projector,
    SplineSpec,
    build_basis,
    default_interior_knots,
    knot_vector,
    project_data,
    recover_nonparametric,
    select_interior_knots_bic,
)


def cox_de_boor(x, t, k, i):
    """Plain recursion for the i-th B-spline of degree k on knots t."""
    if k == 0:
        if t[i] <= x < t[i + 1]:
            return 1.0
        # right end of the span belongs to the last non-empty interval
        if x == t[-1] and t[i] < t[i + 1] == t[-1]:
            return 1.0
        return 0.0
    out = 0.0
    if t[i + k] > t[i]:
        out += (x - t[i]) / (t[i + k] - t[i]) * cox_de_boor(x, t, k - 1, i)
    if t[i + k + 1] > t[i + 1]:
        out += (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * cox_de_boor(x, t, k - 1, i + 1)
    return out


@pytest.mark.parametrize("order,kstar", [(1, 2), (2, 1), (3, 2), (4, 3)])
def test_basis_matches_recursion(order, kstar, rng):
    U = rng.uniform(size=40)
    spec = SplineSpec(order=order, interior_knots=kstar)
    t = knot_vector(U, spec)
    Z = build_basis(U, spec)
    ref = np.array([[cox_de_boor(u, t, order - 1, i) for i in range(spec.basis_dim)]
                    for u in U])
    np.testing.assert_allclose(Z, ref, atol=1e-12)


def test_order_one_without_knots_is_ones(rng):
    U = rng.normal(size=17)
    Z = build_basis(U, SplineSpec(order=1, interior_knots=0))
    np.testing.assert_array_equal(Z, np.ones((17, 1)))


def test_partition_of_unity_uniform_points():
    U = np.linspace(0, 1, 100)
    Z = build_basis(U, SplineSpec(order=3, interior_knots=2))
    assert np.max(np.abs(Z.sum(axis=1) - 1)) <= 1e-12


@given(st.integers(1, 5), st.integers(0, 4), st.integers(0, 10_000))
def test_partition_of_unity_property(order, kstar, seed):
    U = np.random.default_rng(seed).uniform(-3, 5, size=60)
    Z = build_basis(U, SplineSpec(order=order, interior_knots=kstar))
    assert np.max(np.abs(Z.sum(axis=1) - 1)) <= 1e-12
    assert np.all(Z >= -1e-15)


def test_default_knot_count():
    assert default_interior_knots(300) == 1
    assert SplineSpec.default(300).basis_dim == 4
    assert default_interior_knots(512) == 2
    assert default_interior_knots(511) == 1


def test_constant_u_rejected():
    with pytest.raises(DegenerateKnots):
        build_basis(np.full(20, 0.3), SplineSpec())


def test_too_few_distinct_values():
    U = np.repeat([0.0, 1.0], 10)
    with pytest.raises(DegenerateKnots):
        build_basis(U, SplineSpec(order=3, interior_knots=3))


def test_bad_spec():
    with pytest.raises(ValidationError):
        SplineSpec(order=0)
    with pytest.raises(ValidationError):
        SplineSpec(interior_knots=-1)


def test_projector_on_axis():
    W = Projector(np.array([[1.0], [0.0]])).matrix()
    np.testing.assert_allclose(W, np.diag([0.0, 1.0]), atol=1e-15)


def test_projector_idempotent_and_trace(rng):
    Z = rng.normal(size=(50, 4))
    P = Projector(Z)
    W = P.matrix()
    assert np.max(np.abs(W @ W - W)) <= 1e-8
    assert np.trace(W) == pytest.approx(46, abs=1e-10)
    assert np.max(np.abs(W @ Z)) <= 1e-10
    A = rng.normal(size=(50, 3))
    np.testing.assert_allclose(P.apply(A), P.apply_factored(A), atol=1e-8)


def test_factored_path_used_above_limit(rng):
    Z = rng.normal(size=(30, 3))
    P = Projector(Z, dense_limit=10)
    assert P.dense is None
    np.testing.assert_allclose(P.matrix(), Projector(Z).matrix(), atol=1e-12)


def _triple(n, p, rng, g=np.sin):
    X = rng.normal(size=(n, p))
    U = rng.uniform(size=n)
    Y = X[:, 0] + g(2 * np.pi * U) + 0.1 * rng.normal(size=n)
    return DesignTriple(X, U, Y)


def test_projection_off_constant_centers(rng):
    n = 30
    X = rng.normal(size=(n, 3))
    d = DesignTriple(X, rng.uniform(size=n), rng.normal(size=n))
    pd = project_data(d, SplineSpec(order=1, interior_knots=0))
    Xc = X - X.mean(axis=0)
    np.testing.assert_allclose(pd.X_star, Xc / np.linalg.norm(Xc, axis=0), atol=1e-12)
    np.testing.assert_allclose(pd.col_scales, np.linalg.norm(Xc, axis=0), atol=1e-12)


def test_unit_norm_columns(rng):
    pd = project_data(_triple(80, 6, rng))
    np.testing.assert_allclose(np.sum(pd.X_star ** 2, axis=0), 1.0, atol=1e-10)
    assert pd.residual_dim == 80 - pd.Z.shape[1]


def test_projected_rank_n300_p150(rng):
    pd = project_data(_triple(300, 150, rng), SplineSpec(order=3, interior_knots=1))
    assert np.linalg.matrix_rank(pd.projector.matrix()) == 296
    assert np.linalg.matrix_rank(pd.X_star) == 150


def test_zero_column_detected(rng):
    n = 40
    U = rng.uniform(size=n)
    X = np.column_stack([rng.normal(size=n), np.ones(n)])
    with pytest.raises(ZeroColumn) as info:
        project_data(DesignTriple(X, U, rng.normal(size=n)))
    assert info.value.j == 1


def test_recover_sine():
    rng = np.random.default_rng(7)
    n = 500
    X = rng.normal(size=(n, 3))
    U = rng.uniform(size=n)
    beta = np.array([1.0, -0.5, 0.0])
    Y = X @ beta + np.sin(2 * np.pi * U)
    Z = build_basis(U, SplineSpec(order=3, interior_knots=5))
    _, g_hat = recover_nonparametric(Z, Y, X, beta)
    assert np.max(np.abs(g_hat - np.sin(2 * np.pi * U))) <= 0.05


def test_recover_exact_and_orthogonal(rng):
    U = rng.uniform(size=60)
    Z = build_basis(U, SplineSpec(order=3, interior_knots=2))
    theta0 = rng.normal(size=Z.shape[1])
    X = rng.normal(size=(60, 2))
    theta, _ = recover_nonparametric(Z, Z @ theta0, X, np.zeros(2))
    np.testing.assert_allclose(theta, theta0, atol=1e-8)
    y = rng.normal(size=60)
    y -= Z @ np.linalg.lstsq(Z, y, rcond=None)[0]
    _, g = recover_nonparametric(Z, y, X, np.zeros(2))
    assert np.max(np.abs(g)) <= 1e-8


@given(st.floats(0.01, 100.0), st.integers(0, 1000))
def test_projection_scale_equivariance(c, seed):
    rng = np.random.default_rng(seed)
    d = _triple(40, 3, rng)
    a = project_data(d)
    b = project_data(DesignTriple(c * d.X, d.U, c * d.Y))
    np.testing.assert_allclose(a.X_star, b.X_star, atol=1e-9)
    np.testing.assert_allclose(c * a.Y_star, b.Y_star, atol=1e-9 * max(c, 1))


def test_bic_knot_count(rng):
    d = _triple(200, 2, rng)
    kstar = select_interior_knots_bic(d, max_knots=6)
    # a sine over one period needs more than a single cubic piece
    assert 1 <= kstar <= 6


def test_subset_keeps_names(rng):
    d = _triple(10, 3, rng)
    s = d.subset(rows=[0, 2], cols=[2, 0])
    assert s.names == ("x3", "x1")
    assert s.X.shape == (2, 2)
