import numpy as np
import pytest
from scipy import stats
from hypothesis import given, settings, strategies as st

from oracles import ibp_grid_best, probit_grid_oracle
from pxlmirt.errors import ParameterError
from pxlmirt.solvers import (SolverWarning, fit_penalized_linear, fit_penalized_ordered_probit,
                             fit_penalized_probit, ibp_objective, optimize_ibp_weights,
                             ordered_probit_gradient, ordered_probit_objective, penalty_weights,
                             probit_objective, px_rotation, update_sigma)


def _probit_instance(seed, n=50, K=1):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, K))
    b = rng.normal(size=K)
    y = (X @ b + 0.3 + rng.normal(size=n) > 0).astype(float)
    return X, y


def _ordinal_instance(seed, n=200, K=2, L=3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, K))
    eta = X @ rng.normal(size=K)
    th = np.sort(rng.normal(size=L))
    y = (rng.normal(size=n)[:, None] > eta[:, None] + th[None, :]).sum(1)
    return X, y, th


def test_penalty_weights_range():
    g = np.linspace(0, 1, 11)
    w = penalty_weights(g, 40.0, 0.5)
    assert w[0] == 40.0 and w[-1] == 0.5
    assert np.all((w >= 0.5) & (w <= 40.0))


def test_probit_huge_penalty_zeroes_slopes():
    X, y = _probit_instance(0, K=3)
    r = fit_penalized_probit(X, y, np.full(3, 1e6), lambda_d=0.5)
    assert np.all(r.beta == 0.0)
    # intercept solves the one-dimensional penalised problem
    xb, db = probit_grid_oracle(np.zeros(len(y)), y, 0.0, 0.5)
    assert r.intercept == pytest.approx(db, abs=1e-3)


def test_probit_symmetric_zero_intercept():
    y = np.array([0.0, 1.0] * 20)
    r = fit_penalized_probit(np.zeros((40, 1)), y, [0.5], lambda_d=0.5)
    assert r.intercept == 0.0 and r.beta[0] == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_probit_grid_oracle(seed):
    X, y = _probit_instance(seed)
    r = fit_penalized_probit(X, y, [0.7], lambda_d=0.5)
    b, d = probit_grid_oracle(X[:, 0], y, 0.7, 0.5)
    assert abs(r.beta[0] - b) < 1e-3 and abs(r.intercept - d) < 1e-3


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 3.0), st.integers(1, 4))
def test_probit_ascends_from_init(seed, lam, M):
    rng = np.random.default_rng(seed)
    X, y = _probit_instance(seed, n=30 * M, K=3)
    init = (rng.normal(size=3), rng.normal())
    r = fit_penalized_probit(X, y, np.full(3, lam), init=init, n_copies=M)
    f0 = probit_objective(X, y, init[0], init[1], np.full(3, lam), 0.5, M)
    assert r.objective >= f0 - 1e-12
    assert r.objective == pytest.approx(probit_objective(X, y, r.beta, r.intercept, np.full(3, lam), 0.5, M))
    # reported zeros are exact
    small = np.abs(r.beta) < 1e-9
    assert np.all(r.beta[small] == 0.0)


def test_probit_copies_equal_weighting():
    X, y = _probit_instance(4, K=2)
    a = fit_penalized_probit(X, y, [0.3, 0.3])
    b = fit_penalized_probit(np.vstack([X, X]), np.concatenate([y, y]), [0.3, 0.3], n_copies=2)
    np.testing.assert_allclose(a.beta, b.beta, atol=1e-7)


def test_probit_rejects_bad_input():
    with pytest.raises(ParameterError):
        fit_penalized_probit(np.zeros((3, 1)), [0, 1, 2], [1.0])
    with pytest.raises(ParameterError):
        fit_penalized_probit(np.zeros((3, 1)), [0, 1, 1], [-1.0])


def test_ordered_gradient_finite_differences():
    for seed in range(5):
        X, y, th = _ordinal_instance(seed)
        rng = np.random.default_rng(seed + 100)
        beta = rng.normal(size=X.shape[1])
        g = ordered_probit_gradient(X, y, beta, th)
        v = np.concatenate([beta, th])
        K = beta.size
        h = 1e-5
        fd = np.empty_like(v)
        for i in range(v.size):
            e = np.zeros_like(v)
            e[i] = h
            fp = ordered_probit_objective(X, y, (v + e)[:K], (v + e)[K:], 0.0)
            fm = ordered_probit_objective(X, y, (v - e)[:K], (v - e)[K:], 0.0)
            fd[i] = (fp - fm) / (2 * h)
        assert np.max(np.abs(fd - g)) < 1e-5


def test_two_level_ordinal_matches_probit():
    X, y = _probit_instance(5, n=120, K=2)
    # P(Y <= 0) = Phi(eta + d0) corresponds to binary response 1
    o = fit_penalized_ordered_probit(X, (1 - y).astype(int), [0.4, 0.4], n_levels=1)
    p = fit_penalized_probit(X, y, [0.4, 0.4], lambda_d=0.0)
    np.testing.assert_allclose(o.beta, p.beta, atol=1e-6)
    assert o.intercept[0] == pytest.approx(p.intercept, abs=1e-6)


def test_ordinal_no_covariates_quantiles():
    y = np.repeat([0, 1, 2, 3], [7, 19, 11, 3])
    r = fit_penalized_ordered_probit(np.zeros((y.size, 1)), y, [1.0])
    cum = np.cumsum(np.bincount(y))[:-1] / y.size
    np.testing.assert_allclose(r.intercept, stats.norm.ppf(cum), atol=1e-6)
    assert r.beta[0] == 0.0


def test_ordinal_thresholds_increasing_and_ascent():
    X, y, th = _ordinal_instance(6, L=4)
    init = (np.zeros(2), th)
    r = fit_penalized_ordered_probit(X, y, [0.2, 0.2], init=init)
    assert np.all(np.diff(r.intercept) >= 1e-6)
    f0 = ordered_probit_objective(X, y, init[0], init[1], [0.2, 0.2])
    assert r.objective >= f0 - 1e-12
    assert r.objective == pytest.approx(ordered_probit_objective(X, y, r.beta, r.intercept, [0.2, 0.2]))


def test_ordinal_missing_level_merges():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(80, 1))
    y = rng.choice([0, 1, 3], size=80)
    with pytest.warns(SolverWarning, match="absent"):
        r = fit_penalized_ordered_probit(X, y, [0.5], n_levels=4)
    d = r.intercept
    assert d.shape == (4,) and np.all(np.diff(d) > 0)
    # a level that never occurs has a negligible fitted probability
    eta = X[:, 0] * r.beta[0]
    p2 = stats.norm.cdf(eta + d[2]) - stats.norm.cdf(eta + d[1])
    assert np.max(p2) < 1e-5


def test_linear_limits():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(30, 3))
    y = X @ np.array([1.0, -2.0, 0.5]) + rng.normal(size=30)
    r = fit_penalized_linear(X, y, np.full(3, 1e9), 1.0, fit_intercept=False)
    assert np.all(r.beta == 0.0)
    assert update_sigma(X, y, r.beta) == pytest.approx((y @ y + 1) / (30 + 3))
    Xs = rng.normal(size=(3, 3))
    ys = rng.normal(size=3)
    r = fit_penalized_linear(Xs, ys, np.zeros(3), 1.0, fit_intercept=False)
    np.testing.assert_allclose(r.beta, np.linalg.solve(Xs, ys), atol=1e-10)


def test_linear_scalar_soft_threshold():
    rng = np.random.default_rng(9)
    x = rng.normal(size=40)
    y = 0.8 * x + rng.normal(size=40)
    for s2, lam in ((1.0, 3.0), (0.5, 10.0), (2.0, 100.0)):
        r = fit_penalized_linear(x[:, None], y, [lam], s2, fit_intercept=False)
        z = x @ y
        expect = np.sign(z) * max(abs(z) - s2 * lam, 0.0) / (x @ x)
        assert r.beta[0] == pytest.approx(expect, abs=1e-12)


def test_linear_intercept_and_sigma():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(50, 2))
    y = 1.5 + X @ np.array([0.7, 0.0]) + 0.3 * rng.normal(size=50)
    r = fit_penalized_linear(X, y, np.zeros(2), 1.0)
    A = np.column_stack([X, np.ones(50)])
    ls = np.linalg.lstsq(A, y, rcond=None)[0]
    np.testing.assert_allclose(np.append(r.beta, r.intercept), ls, atol=1e-9)
    s = update_sigma(X, y, r.beta, r.intercept)
    res = y - A @ ls
    assert s == pytest.approx((res @ res + 1) / 53)


def test_ibp_weight_examples():
    G = np.zeros((10, 2))
    G[:8, 0] = 1
    G[:3, 1] = 1
    np.testing.assert_allclose(optimize_ibp_weights(G, 1.0), [0.8, 0.3])
    G = np.zeros((10, 2))
    G[:2, 0] = 1
    G[:6, 1] = 1
    np.testing.assert_allclose(optimize_ibp_weights(G, 1.0), [0.4, 0.4])
    np.testing.assert_allclose(optimize_ibp_weights(np.full((5, 3), 0.5), 1.0), 0.5)
    with pytest.raises(ParameterError):
        optimize_ibp_weights(G, 0.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.sampled_from([0.5, 1.0, 2.0, 5.0]))
def test_ibp_weights_beat_grid(seed, K, alpha):
    rng = np.random.default_rng(seed)
    G = rng.random((12, K)) ** rng.uniform(0.3, 3.0, K)
    C = optimize_ibp_weights(G, alpha)
    assert np.all(np.diff(C) <= 0)
    assert ibp_objective(C, G, alpha) >= ibp_grid_best(G, alpha) - 1e-9


def test_px_rotation_examples():
    rng = np.random.default_rng(11)
    Z = rng.normal(size=(500, 3))
    # whiten to an exact identity second moment
    Z = Z @ np.linalg.inv(np.linalg.cholesky(Z.T @ Z / 500)).T
    A, AL = px_rotation(Z)
    np.testing.assert_allclose(A, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(AL, np.eye(3), atol=1e-12)
    A, AL = px_rotation(2 * Z)
    np.testing.assert_allclose(AL, 2 * np.eye(3), atol=1e-12)
    S = np.array([[2.0, 1.0], [1.0, 2.0]])
    T = np.sqrt(2.0) * np.array([[np.sqrt(2), 1 / np.sqrt(2)], [0.0, np.sqrt(1.5)]])
    A, AL = px_rotation(T)
    np.testing.assert_allclose(A, S, atol=1e-12)
    np.testing.assert_allclose(AL, [[np.sqrt(2), 0], [1 / np.sqrt(2), np.sqrt(1.5)]], atol=1e-12)
    np.testing.assert_allclose(AL @ AL.T, A, atol=1e-12)
    with pytest.raises(ParameterError):
        px_rotation(np.ones((1, 2)))


def test_px_rotation_identity_random():
    rng = np.random.default_rng(12)
    for _ in range(10):
        T = rng.normal(size=(200, 5)) @ rng.normal(size=(5, 5))
        A, AL = px_rotation(T)
        assert np.linalg.norm(AL @ AL.T - A) < 1e-10
        assert np.allclose(np.triu(AL, 1), 0.0)
