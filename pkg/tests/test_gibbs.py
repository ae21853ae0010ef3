import csv
import math

import numpy as np
import pytest
from scipy import stats

from pxlmirt.errors import ConfigError, ParameterError
from pxlmirt.gibbs import (GibbsHyper, draw_indicators, draw_proportion, draw_tau2, draw_theta,
                           gibbs_sweep, init_state, pg_mean, run_gibbs, sample_pg, sample_pg_array,
                           support, write_chain_csv)


def test_pg_mean_closed_form():
    assert pg_mean(0.0) == 0.25
    assert pg_mean(2.0) == pytest.approx(math.tanh(1) / 4)
    assert pg_mean(2.0) == pytest.approx(0.190399, abs=1e-6)
    assert pg_mean(1e-9) == pytest.approx(0.25, abs=1e-15)
    assert np.all(np.diff(pg_mean(np.linspace(0, 20, 50))) < 0)


@pytest.mark.parametrize("c", [0.0, 0.5, 1.0, 2.0, 4.0, 10.0])
def test_pg_empirical_mean(c):
    x = sample_pg_array(np.full(100_000, c), np.random.default_rng(int(c * 10)))
    assert np.all(x > 0)
    assert abs(x.mean() - pg_mean(c)) < 4 * x.std() / math.sqrt(x.size)


def test_pg_variance_at_zero():
    # Var PG(1, 0) = 1/24
    x = sample_pg_array(np.zeros(100_000), np.random.default_rng(1))
    se = np.sqrt(np.var((x - x.mean()) ** 2) / x.size)
    assert abs(x.var() - 1 / 24) < 4 * se


def test_pg_symmetric_in_c():
    rng = np.random.default_rng(2)
    a = sample_pg_array(np.full(10_000, 1.5), rng)
    b = sample_pg_array(np.full(10_000, -1.5), rng)
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_pg_reproducible():
    a = sample_pg_array(np.linspace(-3, 3, 20), np.random.default_rng(3))
    b = sample_pg_array(np.linspace(-3, 3, 20), np.random.default_rng(3))
    assert np.array_equal(a, b)
    assert isinstance(sample_pg(1.0, np.random.default_rng(4)), float)


def test_theta_conditional_without_loadings():
    rng = np.random.default_rng(5)
    N, J, K = 5000, 3, 2
    W = sample_pg_array(np.zeros((N, J)), rng)
    kap = rng.integers(0, 2, (N, J)) - 0.5
    th = draw_theta(np.zeros((J, K)), np.zeros(J), W, kap, rng)
    assert stats.kstest(th.ravel(), "norm").pvalue > 0.01


def test_theta_conditional_one_dim():
    # K=1, J=1: precision b^2 w + 1, mean b (kappa - w d) / precision
    rng = np.random.default_rng(6)
    b, d, w, kap = 0.8, 0.3, 0.2, 0.5
    th = draw_theta(np.array([[b]]), np.array([d]), np.full((200_000, 1), w), np.full((200_000, 1), kap), rng)
    prec = b * b * w + 1
    assert abs(th.mean() - b * (kap - w * d) / prec) < 4 / math.sqrt(prec * th.size)
    assert th.var() == pytest.approx(1 / prec, rel=0.02)


def test_indicator_equal_likelihood_gives_prior_weight():
    v0, tau2 = 0.01, 2.0
    b = math.sqrt(tau2 * v0 * math.log(1 / v0) / (1 - v0))
    g = draw_indicators(np.full((100_000, 1), b), np.full((100_000, 1), tau2), 0.3, v0,
                        np.random.default_rng(7))
    p = np.mean(g == 1.0)
    assert abs(p - 0.3) < 4 * math.sqrt(0.21 / g.size)
    assert set(np.unique(g)) <= {v0, 1.0}


def test_tau2_conditional_is_inverse_gamma():
    a1, a2 = 1.0, 1.0
    t2 = draw_tau2(np.zeros((20_000, 1)), np.ones((20_000, 1)), a1, a2, np.random.default_rng(8))
    assert stats.kstest(t2.ravel(), stats.invgamma(a1 + 0.5, scale=a2).cdf).pvalue > 0.01


def test_proportion_conditional():
    free = np.ones((4, 2), bool)
    free[0, 1] = False
    g = np.array([[1, 1], [1, 0.01], [0.01, 0.01], [1, 1]], float)
    x = np.array([draw_proportion(g, free, np.random.default_rng(s)) for s in range(4000)])
    # 4 slab, 3 spike among the free entries -> Beta(5, 4)
    assert stats.kstest(x, stats.beta(5, 4).cdf).pvalue > 0.01


def test_lower_triangular_pinning_survives_sweeps():
    rng = np.random.default_rng(9)
    Y = (rng.random((30, 6)) < 0.5).astype(float)
    s = init_state(30, 6, 3, rng=rng)
    for _ in range(5):
        s = gibbs_sweep(s, Y, GibbsHyper(), rng)
        s.check(GibbsHyper().v0)
    assert s.B[0, 1] == s.B[0, 2] == s.B[1, 2] == 0.0
    assert np.all(s.B[3:] != 0)
    free = init_state(30, 6, 3, rng=rng, lower_triangular=False).free
    assert free.all()


def test_single_retained_sweep_is_the_mean():
    Y = (np.random.default_rng(10).random((20, 4)) < 0.5).astype(float)
    r = run_gibbs(Y, 2, iters=4, burn_in=3, rng=np.random.default_rng(11), keep_chain=True)
    assert r.n_retained == 1
    assert np.array_equal(r.B_mean, r.final_state.B) and np.array_equal(r.D_mean, r.final_state.D)
    assert np.array_equal(r.chain[0], np.concatenate([r.B_mean.ravel(), r.D_mean]))


def test_run_gibbs_counts_and_determinism():
    Y = (np.random.default_rng(12).random((20, 4)) < 0.5).astype(float)
    seen = []
    a = run_gibbs(Y, 2, iters=25, burn_in=5, thin=3, rng=np.random.default_rng(13), callback=seen.append)
    b = run_gibbs(Y, 2, iters=25, burn_in=5, thin=3, rng=np.random.default_rng(13))
    assert a.n_retained == 7 and seen == list(range(1, 26))
    assert np.array_equal(a.B_mean, b.B_mean)
    assert np.all((a.gamma_mean >= 0) & (a.gamma_mean <= 1))


def test_run_gibbs_errors():
    Y = np.zeros((3, 2))
    with pytest.raises(ConfigError):
        run_gibbs(Y, 1, iters=5, burn_in=5)
    with pytest.raises(ConfigError):
        run_gibbs(Y, 1, iters=5, burn_in=1, thin=0)
    with pytest.raises(ParameterError):
        GibbsHyper(v0=1.5)


def test_support_shrinks_with_threshold():
    B = np.random.default_rng(14).normal(size=(20, 3))
    counts = [support(B, t).sum() for t in (0.0, 0.1, 0.5, 1.0, 5.0)]
    assert counts == sorted(counts, reverse=True) and counts[-1] == 0


def test_chain_csv(tmp_path):
    Y = (np.random.default_rng(15).random((10, 3)) < 0.5).astype(float)
    r = run_gibbs(Y, 2, iters=6, burn_in=2, rng=np.random.default_rng(16), keep_chain=True)
    path = tmp_path / "chain.csv"
    write_chain_csv(path, r, 3, 2)
    rows = list(csv.reader(open(path)))
    assert rows[0][:3] == ["sweep", "B_1_1", "B_1_2"] and rows[0][-1] == "D_3"
    assert len(rows) == 1 + r.n_retained
    np.testing.assert_array_equal(np.array(rows[-1][1:], float), r.chain[-1])


def test_recovers_strong_single_factor():
    rng = np.random.default_rng(17)
    N, J = 2000, 6
    b = np.array([2.0, 1.5, -1.5, 2.0, 0.0, 0.0])
    th = rng.normal(size=N)
    Y = (rng.random((N, J)) < 1 / (1 + np.exp(-(np.outer(th, b))))).astype(float)
    r = run_gibbs(Y, 1, iters=800, burn_in=300, rng=rng)
    est = r.B_mean[:, 0] * np.sign(r.B_mean[0, 0])
    assert np.all(np.abs(est[:4] - b[:4]) < 0.35) and np.all(np.abs(est[4:]) < 0.2)
