import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.integrate import trapezoid

from pxlmirt.metrics import (align_loadings, apply_alignment, fdr_fnr, intercept_mse, loading_mse,
                             metrics_report, predictive_means, reconstruction_mse)
from pxlmirt.model import BINARY, ModelParams, ResponseMatrix
from pxlmirt.sun import binary_sun_params, sample_sun


def _truth(seed=0, J=12, K=3):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(J, K)) * (rng.random((J, K)) < 0.5)


def test_alignment_recovers_swap_and_sign():
    B = _truth()
    E = B[:, [1, 0, 2]].copy()
    E[:, 0] *= -1
    al = align_loadings(E, B)
    assert al.perm.tolist() == [1, 0, 2]
    assert al.signs.tolist() == [1, -1, 1]
    assert np.max(np.abs(apply_alignment(E, al) - B)) == 0.0
    assert align_loadings(B, B).is_identity()


def test_alignment_duplicate_columns_tie():
    b = np.array([1.0, 0.5, 0.0, -1.0])
    B = np.column_stack([b, b])
    E = np.column_stack([b * 0.9, b * 1.1])
    al = align_loadings(E, B)
    alt = type(al)(al.perm[::-1].copy(), al.signs.copy())
    assert loading_mse(E, B, al) == pytest.approx(loading_mse(E, B, alt), abs=1e-15)


def test_mse_examples():
    B = _truth(1)
    assert loading_mse(B, B) == 0.0
    F = np.count_nonzero(B)
    Bt = (B != 0).astype(float)
    assert loading_mse(np.zeros_like(Bt), Bt) == pytest.approx(F / Bt.size)
    assert intercept_mse([0.0, np.array([1.0, 2.0])], [1.0, np.array([1.0, 0.0])]) == pytest.approx(5 / 3)


def test_fdr_fnr_examples():
    B = _truth(2)
    assert fdr_fnr(B, B) == (0.0, 0.0)
    T = np.zeros((4, 2))
    T[:2, 0] = T[2:, 1] = 1.0
    fdr, fnr = fdr_fnr(np.ones((4, 2)), T)
    assert fdr == 0.5 and fnr == 0.0


def test_extra_estimated_columns_are_discoveries():
    T = np.zeros((4, 1))
    T[:2, 0] = 1.0
    E = np.column_stack([T[:, 0], [0.0, 0.0, 0.3, 0.3]])
    fdr, fnr = fdr_fnr(E, T)
    assert fdr == pytest.approx(0.5) and fnr == 0.0


def test_unmatched_true_columns():
    B = _truth(3)
    E = B[:, :2]
    al = align_loadings(E, B)
    assert al.unmatched_true == (2,)
    assert loading_mse(E, B, al) == pytest.approx(np.mean(B[:, 2] ** 2) / 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_metric_invariance_and_bounds(seed):
    rng = np.random.default_rng(seed)
    B = _truth(seed % 97, J=10, K=3)
    E = B + rng.normal(scale=0.3, size=B.shape) * (rng.random(B.shape) < 0.5)
    perm = rng.permutation(3)
    s = rng.choice([-1.0, 1.0], 3)
    m1 = loading_mse(E, B)
    m2 = loading_mse(E[:, perm] * s, B[:, perm] * s)
    assert m1 == pytest.approx(m2, abs=1e-12)
    fdr, fnr = fdr_fnr(E, B)
    assert 0 <= fdr <= 1 and 0 <= fnr <= 1
    # aligning an aligned estimate gives the identity
    A = apply_alignment(E, align_loadings(E, B))
    al = align_loadings(A, B)
    assert np.array_equal(al.perm[al.perm >= 0], np.arange(3)[al.perm >= 0]) and np.all(al.signs == 1)


def test_report_zero_on_truth():
    B = _truth(4)
    p = ModelParams(B, tuple(np.linspace(-1, 1, 12)), np.full(3, 0.5), None)
    r = metrics_report(p, p)
    assert r["loading_mse"] == 0 and r["intercept_mse"] == 0 and r["fdr"] == 0 and r["fnr"] == 0


def test_reconstruction_flat_model():
    y = np.array([[0, 1], [1, 0]] * 10, float)
    data = ResponseMatrix(y, [BINARY] * 2)
    p = ModelParams(np.zeros((2, 1)), (0.0, 0.0), [0.5], None)
    assert reconstruction_mse(p, data, 50, np.random.default_rng(0)) == pytest.approx(0.25, abs=1e-15)


def test_reconstruction_saturated_model():
    rng = np.random.default_rng(1)
    theta = rng.normal(size=40)
    y = np.column_stack([(theta > 0), (theta > 0)]).astype(float)
    p = ModelParams(np.array([[30.0], [30.0]]), (0.0, 0.0), [0.9], None)
    assert reconstruction_mse(p, ResponseMatrix(y, [BINARY] * 2), 200, rng) < 1e-3


def test_reconstruction_vs_quadrature():
    b, d = np.array([1.2, -0.7]), np.array([0.3, -0.2])
    p = ModelParams(b[:, None], tuple(d), [0.8], None)
    t = np.linspace(-10, 10, 40001)
    m = 20_000
    rng = np.random.default_rng(2)
    for y in ([1, 1], [1, 0], [0, 1], [0, 0]):
        y = np.array(y, float)
        lik = np.prod([stats.norm.cdf((2 * y[j] - 1) * (b[j] * t + d[j])) for j in range(2)], axis=0)
        w = stats.norm.pdf(t) * lik
        w /= trapezoid(w, t)
        exact = [trapezoid(stats.norm.cdf(b[j] * t + d[j]) * w, t) for j in range(2)]
        th = sample_sun(binary_sun_params(b[:, None], d, y), m, rng)
        mc = predictive_means(p, [BINARY] * 2, th)
        se = [stats.norm.cdf(th[:, 0] * b[j] + d[j]).std() / math.sqrt(m) for j in range(2)]
        assert np.all(np.abs(mc - exact) < 4 * np.array(se))
