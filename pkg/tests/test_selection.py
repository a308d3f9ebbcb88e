import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from stabgknock.errors import ValidationError
from stabgknock.selection import bh_select, knockoff_threshold, select, univariate_pvalues


def brute_threshold(W, q, mode):
    off = 1 if mode == "knockoff_plus" else 0
    for t in sorted({abs(w) for w in W if w != 0}):
        neg = sum(1 for w in W if w <= -t)
        pos = sum(1 for w in W if w >= t)
        if (off + neg) / max(pos, 1) <= q:
            return t
    return float("inf")


def test_worked_example():
    W = [3, -1, 2, -2, 1]
    out = select(W, 0.5, "knockoff")
    assert out.threshold_T == 2 and out.selected == (0, 2)
    assert out.fdp_hat == 0.5
    plus = select(W, 0.5, "knockoff_plus")
    assert np.isinf(plus.threshold_T) and plus.selected == ()


def test_degenerate_inputs():
    out = select(np.zeros(5), 0.1)
    assert np.isinf(out.threshold_T) and out.selected == ()
    assert select([0.4], 0.1, "knockoff_plus").selected == ()
    out = select([0.5, 0.2, 0.9], 0.05, "knockoff")
    assert out.threshold_T == 0.2 and out.selected == (0, 1, 2)


def test_bad_arguments():
    with pytest.raises(ValidationError):
        knockoff_threshold([1.0], 0.0)
    with pytest.raises(ValidationError):
        knockoff_threshold([1.0], 0.1, mode="other")


def test_thousand_random_vectors():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        p = int(rng.integers(1, 21))
        W = rng.integers(-5, 6, size=p) * rng.choice([0.5, 1.0])
        for mode in ("knockoff", "knockoff_plus"):
            for q in (0.05, 0.1, 0.2, 0.3, 0.5):
                assert knockoff_threshold(W, q, mode) == brute_threshold(W, q, mode)


w_lists = st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=30)


@given(w_lists, st.floats(0.01, 0.99))
def test_plus_is_more_conservative(W, q):
    assert knockoff_threshold(W, q, "knockoff_plus") >= knockoff_threshold(W, q, "knockoff")


@given(w_lists, st.floats(0.01, 0.5), st.floats(0.0, 0.49))
def test_selection_grows_with_q(W, q, dq):
    a = set(select(W, q, "knockoff_plus").selected)
    b = set(select(W, q + dq, "knockoff_plus").selected)
    assert a <= b


@given(w_lists, st.floats(0.01, 0.99), st.floats(0.1, 100.0))
def test_scale_invariance(W, q, c):
    W = np.asarray(W)
    assert select(W, q).selected == select(c * W, q).selected


@given(w_lists, st.floats(0.01, 0.99))
def test_selected_satisfy_bound(W, q):
    out = select(W, q, "knockoff")
    if out.selected:
        assert out.fdp_hat <= q + 1e-12
        assert all(W[j] >= out.threshold_T for j in out.selected)


def test_bh_examples():
    assert bh_select([0.01, 0.02, 0.9], 0.05) == (0, 1)
    assert bh_select(np.ones(4), 0.1) == ()
    assert bh_select(np.zeros(4), 0.1) == (0, 1, 2, 3)
    # step-up: the largest passing rank wins even if earlier ones fail
    assert bh_select([0.04, 0.03, 0.5], 0.1) == (0, 1)


def naive_bh(pv, q):
    m = len(pv)
    order = np.argsort(pv, kind="stable")
    kstar = 0
    for k in range(1, m + 1):
        if pv[order[k - 1]] <= k * q / m:
            kstar = k
    return tuple(sorted(order[:kstar].tolist()))


@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0.01, 0.5))
def test_bh_oracle(pv, q):
    assert bh_select(pv, q) == naive_bh(np.asarray(pv), q)


def test_pvalue_examples(rng):
    X = rng.normal(size=(40, 3))
    X /= np.linalg.norm(X, axis=0)
    pv = univariate_pvalues(X, 2.5 * X[:, 1])
    assert pv[1] < 1e-12
    y = rng.normal(size=40)
    y -= X[:, 0] * (X[:, 0] @ y)
    assert univariate_pvalues(X, y)[0] == pytest.approx(1.0, abs=1e-10)


def test_null_pvalues_uniform():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(150, 200))
    X /= np.linalg.norm(X, axis=0)
    pv = univariate_pvalues(X, rng.normal(size=150))
    assert stats.kstest(pv, "uniform").pvalue > 0.01
