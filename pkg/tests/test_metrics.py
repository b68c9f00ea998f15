import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from odetwin.dynamics import Lorenz96Field, Lorenz96Params, lorenz96_jacobian
from odetwin.lyapunov import error_growth, mle_estimate, mle_flow
from odetwin.metrics import (UndefinedMetric, dtw, dtw_matrix, dtw_normalized, l1_error, mre,
                             soft_dtw, soft_dtw_divergence, soft_dtw_grad)
from odetwin.trajectory import Trajectory


def alignment_paths(n, m):
    """Every monotone alignment path from (0, 0) to (n-1, m-1)."""
    def walk(i, j):
        if (i, j) == (n - 1, m - 1):
            yield [(i, j)]
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            if i + di < n and j + dj < m:
                for rest in walk(i + di, j + dj):
                    yield [(i, j)] + rest
    return list(walk(0, 0))


def path_costs(x, y):
    x, y = np.atleast_2d(np.asarray(x, float).T).T, np.atleast_2d(np.asarray(y, float).T).T
    return [math.fsum(np.linalg.norm(x[i] - y[j]) for i, j in p) for p in alignment_paths(len(x), len(y))]


def brute_dtw(x, y):
    return min(path_costs(x, y))


def brute_soft_dtw(x, y, gamma):
    c = np.array(path_costs(x, y))
    lo = c.min()
    return lo - gamma * math.log(np.sum(np.exp(-(c - lo) / gamma)))


def test_l1_examples():
    t = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert l1_error(t, t) == 0.0
    assert l1_error(t + 0.5, t) == 0.5
    assert l1_error([1.0, 2.0], [2.0, 4.0]) == 1.5


def test_l1_grid_mismatch():
    a = Trajectory([0.0, 1.0], [1.0, 2.0])
    b = Trajectory([0.0, 2.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        l1_error(a, b)
    with pytest.raises(ValueError):
        l1_error([1.0, 2.0], [1.0])


def test_mre_examples():
    assert mre([3.0, -1.0], [3.0, -1.0]) == 0.0
    assert mre([1.0, 2.0], [2.0, 4.0]) == 0.5
    res = mre([1.0, 5.0, 2.0], [2.0, 0.0, 4.0], details=True)
    assert res.value == 0.5 and res.n_used == 2 and res.excluded == (1,)
    with pytest.raises(UndefinedMetric):
        mre([1.0, 2.0], [0.0, 1e-12])


def test_dtw_examples():
    x = np.array([0.3, 1.7, -0.2, 4.0])
    assert dtw(x, x) == 0.0
    assert dtw([1.0, 2.0, 3.0], [1.0, 3.0]) == 1.0
    assert dtw_normalized([1.0, 2.0, 3.0], [1.0, 3.0]) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        dtw([], [1.0])


def test_dtw_table_boundary():
    m = dtw_matrix([1.0, 2.0], [1.0, 2.0, 2.0])
    assert m.acc[0, 0] == 0.0 and np.isinf(m.acc[0, 1:]).all() and np.isinf(m.acc[1:, 0]).all()


def test_dtw_exhaustive_oracle():
    r = np.random.default_rng(0)
    for _ in range(300):
        n, m = r.integers(1, 7, size=2)
        d = int(r.integers(1, 3))
        x, y = r.standard_normal((n, d)), r.standard_normal((m, d))
        assert abs(dtw(x, y) - brute_dtw(x, y)) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.lists(st.floats(-5, 5), min_size=1, max_size=8))
def test_dtw_symmetric_nonnegative(x, y):
    assert dtw(x, y) == pytest.approx(dtw(y, x), abs=1e-12)
    assert dtw(x, y) >= 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=10))
def test_dtw_bounded_by_diagonal_path(pairs):
    x, y = np.array(pairs).T
    assert dtw(x, y) <= np.sum(np.abs(x - y)) + 1e-12


def test_dtw_zero_iff_zero_cost_path():
    assert dtw([1.0, 1.0, 2.0], [1.0, 2.0, 2.0]) == 0.0
    assert dtw([1.0, 2.0], [1.0, 2.5]) > 0.0


def test_soft_dtw_single_point():
    for gamma in (0.01, 1.0, 10.0):
        assert soft_dtw([1.5], [-0.25], gamma) == pytest.approx(1.75, abs=1e-14)


def test_soft_dtw_small_gamma_limit():
    r = np.random.default_rng(3)
    for _ in range(20):
        x, y = r.standard_normal(5), r.standard_normal(5)
        assert abs(soft_dtw(x, y, 1e-4) - dtw(x, y)) <= 1e-3


def test_soft_dtw_path_enumeration_oracle():
    r = np.random.default_rng(4)
    for gamma in (0.1, 1.0, 3.0):
        x, y = r.standard_normal(3), r.standard_normal(3)
        assert soft_dtw(x, y, gamma) == pytest.approx(brute_soft_dtw(x, y, gamma), abs=1e-12)
    x, y = r.standard_normal((4, 2)), r.standard_normal((3, 2))
    assert soft_dtw(x, y, 0.5) == pytest.approx(brute_soft_dtw(x, y, 0.5), abs=1e-12)


def test_soft_dtw_gradient_finite_differences():
    r = np.random.default_rng(5)
    for d in (1, 3):
        x, y = r.standard_normal((6, d)), r.standard_normal((6, d))
        _, g = soft_dtw_grad(x, y, 1.0)
        fd = np.zeros_like(x)
        h = 1e-6
        for idx in np.ndindex(x.shape):
            e = np.zeros_like(x)
            e[idx] = h
            fd[idx] = (soft_dtw(x + e, y) - soft_dtw(x - e, y)) / (2 * h)
        assert np.max(np.abs(g - fd)) <= 1e-4 * np.max(np.abs(fd))


def test_soft_dtw_divergence_zero_at_match():
    x = np.random.default_rng(6).standard_normal((7, 2))
    v, g = soft_dtw_divergence(x, x.copy())
    assert v == 0.0 and not g.any()
    with pytest.raises(ValueError):
        soft_dtw(x, x, 0.0)


def test_mle_maps():
    est = mle_estimate(lambda x: 2 * x, lambda x: 2.0, 0.3, 10)
    assert est.lam == pytest.approx(math.log(2))
    dbl = mle_estimate(lambda x: (2 * x) % 1.0, lambda x: 2.0, 0.1234, 1000)
    assert abs(dbl.lam - math.log(2)) <= 0.01 * math.log(2)
    assert dbl.lyapunov_time * dbl.lam == pytest.approx(1.0)
    half = mle_estimate(lambda x: x / 2, lambda x: 0.5, 1.0, 50)
    assert half.lam == pytest.approx(-math.log(2)) and math.isinf(half.lyapunov_time)
    with pytest.raises(ValueError):
        mle_estimate(lambda x: x, lambda x: 1.0, 0.0, 0)


def test_mle_linear_flow():
    est = mle_flow(lambda x, t: x, lambda x, t: np.eye(2), np.ones(2), 0.01, 500)
    assert est.lam == pytest.approx(1.0, rel=1e-9)
    assert est.lyapunov_time == pytest.approx(1.0, rel=1e-9)


def test_mle_lorenz96_positive():
    fld = Lorenz96Field(Lorenz96Params())
    est = mle_flow(fld, fld.jacobian, np.array([-1.2061, 0.0617, 1.1632, -1.5008, -1.5944, -0.0187]),
                   0.01, 5000, transient=1000)
    assert 0.5 < est.lam < 1.5


def test_lorenz96_jacobian_finite_differences():
    p = Lorenz96Params()
    x = np.random.default_rng(8).standard_normal(6) * 3
    fld = Lorenz96Field(p)
    h = 1e-6
    fd = np.stack([(fld(x + h * e, 0) - fld(x - h * e, 0)) / (2 * h) for e in np.eye(6)], axis=1)
    np.testing.assert_allclose(lorenz96_jacobian(p, x), fd, atol=1e-7)


def test_error_growth_horizons():
    truth = np.zeros((100, 2))
    pred = np.arange(100)[:, None] * np.ones((1, 2))
    curve = error_growth(pred, truth, dt=0.1, lyapunov_time=1.5)
    assert [c[0] for c in curve] == [1, 2, 3, 4, 5, 6]
    assert curve[0] == (1, pytest.approx(1.5), 15.0)
