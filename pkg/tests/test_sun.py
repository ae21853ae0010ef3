import math

import numpy as np
import pytest
from scipy import stats

from oracles import moment_zscores, quad_posterior_mean_1d, rejection_posterior
from pxlmirt.errors import DataError, ParameterError
from pxlmirt.model import BINARY, CONTINUOUS, ModelParams, ordinal
from pxlmirt.sun import (SunParams, binary_sun_params, cdf_difference, cdf_difference_2d,
                         mixed_sun_params, sample_sun, score_factors)

ONE_OVER_SQRT_PI = 1 / math.sqrt(math.pi)   # E[t Phi(t)] / E[Phi(t)] under N(0, 1)


def _rng(s=0):
    return np.random.default_rng(s)


def _omega_star(p):
    w = np.sqrt(np.diag(p.omega_mat))
    Obar = p.omega_mat / np.outer(w, w)
    top = np.hstack([p.gamma_mat, p.delta.T])
    bot = np.hstack([p.delta, Obar])
    return np.vstack([top, bot])


def test_flat_likelihood_gives_prior():
    p = binary_sun_params(np.zeros((3, 2)), np.zeros(3), [1, 0, 1])
    assert np.all(p.delta == 0) and np.all(p.gamma_vec == 0)
    X = sample_sun(p, 100_000, _rng(1))
    se = 1 / math.sqrt(len(X))
    assert np.all(np.abs(X.mean(0)) < 4 * se)
    C = np.cov(X.T)
    assert np.all(np.abs(C - np.eye(2)) < 4 * math.sqrt(2) * se)


def test_sign_symmetry():
    rng = _rng(2)
    B, D, y = rng.normal(size=(4, 2)), rng.normal(size=4), np.array([1, 0, 0, 1])
    a = binary_sun_params(B, D, y)
    b = binary_sun_params(-B, -D, 1 - y)
    for f in ("xi", "omega_mat", "delta", "gamma_vec"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    np.testing.assert_array_equal(a.gamma_mat, b.gamma_mat)


def test_one_dim_closed_form():
    p = binary_sun_params([[1.0]], [0.0], [1])
    assert p.s_diag[0] == pytest.approx(math.sqrt(2))
    assert p.gamma_vec[0] == 0.0
    assert p.delta[0, 0] == pytest.approx(1 / math.sqrt(2))
    assert p.gamma_mat[0, 0] == 1.0
    oracle = quad_posterior_mean_1d(lambda t: stats.norm.cdf(t))
    assert oracle == pytest.approx(ONE_OVER_SQRT_PI, abs=1e-10)
    assert oracle == pytest.approx(0.5642, abs=1e-4)
    X = sample_sun(p, 100_000, _rng(3))[:, 0]
    assert abs(X.mean() - oracle) < 4 * X.std() / math.sqrt(X.size)


def test_invariants_on_random_instances():
    rng = _rng(4)
    for _ in range(20):
        K, J = rng.integers(1, 4), rng.integers(1, 6)
        kinds = list(rng.choice([BINARY, ordinal(3), CONTINUOUS], size=J))
        B = rng.normal(size=(J, K))
        D = [np.sort(rng.normal(size=3)) if k.is_ordinal else rng.normal() for k in kinds]
        y = [rng.integers(0, 4) if k.is_ordinal else (rng.normal() if k.is_continuous else rng.integers(0, 2))
             for k in kinds]
        p = mixed_sun_params(B, D, np.full(J, 0.7), y, kinds)
        if p.n_skew:
            assert np.max(np.abs(np.diag(p.gamma_mat) - 1)) < 1e-10
            assert np.linalg.eigvalsh(_omega_star(p))[0] > -1e-8


def test_mixed_all_binary_is_byte_identical():
    rng = _rng(5)
    B, D, y = rng.normal(size=(6, 3)), rng.normal(size=6), rng.integers(0, 2, 6)
    a = binary_sun_params(B, D, y)
    b = mixed_sun_params(B, list(D), None, y, [BINARY] * 6)
    for f in ("xi", "omega_mat", "delta", "gamma_vec", "s_diag"):
        assert getattr(a, f).tobytes() == getattr(b, f).tobytes()
    assert a.gamma_mat.tobytes() == b.gamma_mat.tobytes()


def test_two_level_ordinal_matches_binary():
    # an ordinal item with top level 1 responding 0 is a binary item responding 1
    rng = _rng(6)
    B, d = rng.normal(size=(2, 2)), rng.normal(size=2)
    a = binary_sun_params(B, d, [1, 0])
    b = mixed_sun_params(B, [np.array([d[0]]), np.array([d[1]])], None, [0, 1], [ordinal(1)] * 2)
    np.testing.assert_allclose(a.delta, b.delta, atol=1e-15)
    np.testing.assert_allclose(a.gamma_vec, b.gamma_vec, atol=1e-15)
    Xa = sample_sun(a, 2000, _rng(7))
    Xb = sample_sun(b, 2000, _rng(7))
    np.testing.assert_allclose(Xa, Xb, atol=1e-12)


def test_all_continuous_is_conjugate_gaussian():
    rng = _rng(8)
    B = rng.normal(size=(4, 2))
    d, s2 = rng.normal(size=4), rng.uniform(0.5, 2, 4)
    y = rng.normal(size=4)
    p = mixed_sun_params(B, list(d), s2, y, [CONTINUOUS] * 4)
    assert p.n_skew == 0 and p.delta.size == 0
    prec = np.eye(2) + B.T @ (B / s2[:, None])
    np.testing.assert_allclose(p.omega_mat, np.linalg.inv(prec), atol=1e-12)
    np.testing.assert_allclose(p.xi, np.linalg.solve(prec, B.T @ ((y - d) / s2)), atol=1e-12)


def _sun_density_pair(p, theta):
    """Unnormalised SUN density for K=1 with one interior ordinal pair.

    The conditional covariance of the skew part is singular; its orthant
    probability is taken from the two-dimensional CDF path.
    """
    om = math.sqrt(p.omega_mat[0, 0])
    Obar = 1.0
    C = p.gamma_mat - p.delta.T @ p.delta / Obar
    s1, s2 = 1 / math.sqrt(C[0, 0]), 1 / math.sqrt(C[1, 1])
    assert C[0, 1] * s1 * s2 == pytest.approx(-1.0, abs=1e-12)
    out = []
    for t in theta:
        x = p.gamma_vec + p.delta[0] * (t - p.xi[0]) / om
        out.append(stats.norm.pdf(t, p.xi[0], om) * cdf_difference_2d(-x[1] * s2, x[0] * s1))
    return np.array(out)


def test_ordinal_interior_density_ratio():
    b, th = 1.3, np.array([-0.4, 0.9])
    p = mixed_sun_params([[b]], [th], None, [1], [ordinal(2)])
    assert p.blocks.pairs.tolist() == [0]
    np.testing.assert_array_equal(p.blocks.i_bar, [[1, -1], [-1, 1]])
    t = np.linspace(-4, 4, 81)
    f = _sun_density_pair(p, t)
    g = stats.norm.pdf(t) * (stats.norm.cdf(b * t + th[1]) - stats.norm.cdf(b * t + th[0]))
    f, g = f / f.sum(), g / g.sum()
    assert np.max(np.abs(f - g)) < 1e-8


def test_two_dim_vs_rejection_oracle():
    rng = _rng(9)
    B, D, y = rng.normal(size=(2, 2)), rng.normal(scale=0.5, size=2), np.array([1, 0])
    p = binary_sun_params(B, D, y)
    X = sample_sun(p, 100_000, _rng(10))
    R = rejection_posterior(B, D, None, y, [BINARY] * 2, 100_000, _rng(11))
    assert np.all(np.abs(moment_zscores(X, R)) < 4)


def test_mixed_vs_rejection_oracle():
    rng = _rng(12)
    kinds = [BINARY, ordinal(3), ordinal(2), CONTINUOUS]
    B = rng.normal(size=(4, 2))
    D = [0.3, np.array([-1.0, 0.2, 1.1]), np.array([-0.5, 0.5]), 0.1]
    y = [1, 2, 0, 0.7]
    p = mixed_sun_params(B, D, np.array([np.nan, np.nan, np.nan, 0.8]), y, kinds)
    X = sample_sun(p, 50_000, _rng(13))
    R = rejection_posterior(B, D, [0, 0, 0, 0.8], y, kinds, 50_000, _rng(14))
    assert np.all(np.abs(moment_zscores(X, R)) < 4)


def test_generic_path_matches_structured():
    rng = _rng(15)
    B, D, y = rng.normal(size=(3, 2)), rng.normal(size=3), np.array([0, 1, 1])
    p = binary_sun_params(B, D, y)
    g = SunParams.from_arrays(p.xi, p.omega_mat, p.delta, p.gamma_vec, p.gamma_mat)
    X = sample_sun(p, 50_000, _rng(16))
    Y = sample_sun(g, 50_000, _rng(17))
    assert np.all(np.abs(moment_zscores(X, Y)) < 4)


def test_nonstandard_prior():
    rng = _rng(18)
    B, D, y = rng.normal(size=(2, 2)), rng.normal(size=2), np.array([1, 1])
    xi = np.array([0.5, -0.3])
    Om = np.array([[1.5, 0.4], [0.4, 0.8]])
    p = binary_sun_params(B, D, y, xi, Om)
    X = sample_sun(p, 50_000, _rng(19))
    R = rejection_posterior(B, D, None, y, [BINARY] * 2, 50_000, _rng(20), xi=xi, Om=Om)
    assert np.all(np.abs(moment_zscores(X, R)) < 4)


def test_sun_errors():
    with pytest.raises(DataError):
        binary_sun_params([[1.0]], [0.0], [2])
    with pytest.raises(ParameterError):
        mixed_sun_params([[1.0]], [0.0], [0.0], [0.3], [CONTINUOUS])
    with pytest.raises(ParameterError):
        sample_sun(binary_sun_params([[1.0]], [0.0], [1]), 0, _rng())


def test_cdf_difference_examples():
    assert cdf_difference(-1, 1) == pytest.approx(0.682689, abs=1e-6)
    assert cdf_difference(0, 0) == 0.0
    assert cdf_difference(-np.inf, 0) == pytest.approx(0.5, abs=1e-15)
    assert cdf_difference_2d(-np.inf, 0) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ParameterError):
        cdf_difference(1, 0)


def test_cdf_difference_two_paths():
    grid = np.linspace(-6, 6, 10)
    for a in grid:
        for b in a + np.array([0.0, 0.3, 1.0, 4.0]):
            assert abs(cdf_difference(a, b) - cdf_difference_2d(a, b)) < 1e-8


def test_score_factors():
    kinds = [BINARY] * 3
    flat = ModelParams(np.zeros((3, 2)), (0.0, 0.0, 0.0), [0.5, 0.5], None)
    mean, sd = score_factors(flat, [1, 0, 1], kinds, m=20_000, rng=_rng(21))
    assert np.all(np.abs(mean) < 0.05) and np.all(np.abs(sd - 1) < 0.05)
    one = ModelParams(np.array([[1.0]]), (0.0,), [0.5], None)
    mean, sd = score_factors(one, [1], [BINARY], m=100_000, rng=_rng(22))
    assert abs(mean[0] - ONE_OVER_SQRT_PI) < 4 * sd[0] / math.sqrt(100_000)
    a = score_factors(one, [1], [BINARY], rng=_rng(23))
    b = score_factors(one, [1], [BINARY], rng=_rng(23))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
