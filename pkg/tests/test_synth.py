import math

import numpy as np
import pytest
from scipy import stats

from pxlmirt.errors import ParameterError, PxlError
from pxlmirt.model import BINARY, CONTINUOUS, ordinal, validate
from pxlmirt.synth import (SynthSpec, draw_ibp_loading, draw_ibp_pattern, generate, ibp_preset,
                           overlap_pairs_design, overlap_preset, simulate_responses)


def _within(p_hat, p, n, z=4):
    return abs(p_hat - p) < z * math.sqrt(p * (1 - p) / n)


def test_ibp_weights_non_increasing():
    rng = np.random.default_rng(0)
    for _ in range(50):
        _, c = draw_ibp_pattern(10, 2.0, 25, rng)
        assert np.all(np.diff(c) <= 0)


def test_ibp_first_column_rate():
    rng = np.random.default_rng(1)
    rates = np.array([draw_ibp_pattern(350, 2.0, 25, rng)[0][:, 0].mean() for _ in range(10_000)])
    se = rates.std(ddof=1) / math.sqrt(rates.size)
    assert abs(rates.mean() - 2 / 3) < 4 * se


def test_ibp_vanishing_intensity():
    rng = np.random.default_rng(2)
    active = sum(draw_ibp_pattern(350, 1e-6, 25, rng)[0].any() for _ in range(10_000))
    assert active <= 1
    with pytest.raises(PxlError, match="empty"):
        draw_ibp_loading(30, 1e-6, 2, rng=rng, max_tries=3)


def test_ibp_loading_layout():
    B, P, info = draw_ibp_loading(350, 2.0, 5, magnitude=1.0, rng=np.random.default_rng(3))
    assert B.shape == (350, 5) and info["truncation"] == 25
    assert np.array_equal(B != 0, P) and set(np.unique(B)) <= {0.0, 1.0}
    support = P.sum(0)
    assert np.all(np.diff(support) <= 0)
    assert sorted(info["display_rows"]) == list(range(350))
    with pytest.raises(ParameterError):
        draw_ibp_loading(10, 2.0, 0)
    with pytest.raises(ParameterError):
        draw_ibp_loading(10, 2.0, 6, truncation=5)


def test_overlap_design_counts():
    B = overlap_pairs_design(100, 4, 0.5)
    rows = (B != 0).sum(1)
    assert np.sum(rows == 2) == 50 and np.sum(rows == 1) == 50
    assert np.all((B != 0).sum(0) >= 1)
    B0 = overlap_pairs_design(40, 4, 0.0)
    assert np.all((B0 != 0).sum(1) == 1)
    # balanced one-factor blocks
    assert np.all((B0 != 0).sum(0) == 10)
    # every unordered pair is used
    pairs = {tuple(np.flatnonzero(r)) for r in (B != 0) if r.sum() == 2}
    assert len(pairs) == 6
    with pytest.raises(ParameterError):
        overlap_pairs_design(10, 1)
    with pytest.raises(ParameterError):
        overlap_pairs_design(10, 4, 1.5)


def test_binary_marginals():
    n = 100_000
    rng = np.random.default_rng(4)
    data = simulate_responses(np.zeros((2, 1)), [0.0, 1.0], None, [BINARY] * 2, n, rng)
    p = data.values.mean(0)
    assert _within(p[0], 0.5, n)
    assert _within(p[1], stats.norm.cdf(1), n)
    assert stats.norm.cdf(1) == pytest.approx(0.8413, abs=1e-4)


def test_ordinal_marginals():
    n = 100_000
    data = simulate_responses(np.zeros((1, 1)), [np.array([-1.0, 1.0])], None, [ordinal(2)], n,
                              np.random.default_rng(5))
    freq = np.bincount(data.values[:, 0].astype(int), minlength=3) / n
    expect = [stats.norm.cdf(-1), stats.norm.cdf(1) - stats.norm.cdf(-1), 1 - stats.norm.cdf(1)]
    for f, e in zip(freq, expect):
        assert _within(f, e, n)


def test_continuous_marginals():
    n = 100_000
    data = simulate_responses(np.array([[0.6]]), [0.4], [0.5], [CONTINUOUS], n, np.random.default_rng(6))
    y = data.values[:, 0]
    v = 0.36 + 0.5
    assert abs(y.mean() - 0.4) < 4 * math.sqrt(v / n)
    assert abs(y.var() - v) < 4 * v * math.sqrt(2 / n)


def test_simulate_errors():
    rng = np.random.default_rng(7)
    with pytest.raises(ParameterError):
        simulate_responses(np.zeros((1, 1)), [np.array([1.0, -1.0])], None, [ordinal(2)], 5, rng)
    with pytest.raises(ParameterError):
        simulate_responses(np.zeros((1, 1)), [0.0], [0.0], [CONTINUOUS], 5, rng)


def test_generate_reproducible_and_valid():
    spec = ibp_preset(seed=11, n_obs=40, n_items=30, keep_k=3)
    d1, t1, i1 = generate(spec)
    d2, t2, i2 = generate(spec)
    assert d1.values.tobytes() == d2.values.tobytes()
    assert t1.loading.tobytes() == t2.loading.tobytes() and i1 == i2
    assert validate(t1, d1) == []
    sd = np.std(t1.intercept_vector())
    assert 0.2 < sd < 0.9


def test_generate_mixed_and_explicit():
    spec = SynthSpec(n_obs=50, n_items=3, design="explicit", loading=[[0.0], [0.0], [0.0]],
                     kinds=["binary", "ordinal:3", "continuous"], seed=3)
    data, truth, _ = generate(spec)
    assert [str(k) for k in data.kinds] == ["binary", "ordinal:3", "continuous"]
    assert np.all(np.diff(truth.intercepts[1]) >= 0) and truth.resid_var[2] == 1.0
    with pytest.raises(ParameterError):
        generate(SynthSpec(n_obs=5, n_items=2, design="nope"))


def test_presets_shape():
    data, truth, _ = generate(overlap_preset())
    assert data.n_obs < data.n_items and truth.loading.shape[1] == 4
    spec = ibp_preset()
    assert (spec.n_obs, spec.n_items, spec.alpha, spec.keep_k) == (250, 350, 2.0, 5)
