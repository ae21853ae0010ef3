"""Synthetic benchmark generators.

Two loading designs are provided: loadings drawn from a truncated
stick-breaking IBP, and a fixed overlapping-pairs pattern where part of
the items load on one factor and the rest on two.  `simulate_responses`
generates binary, ordinal and continuous items from a loading matrix.
"""
from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, PxlError
from .model import BINARY, ItemKind, ModelParams, ResponseMatrix

__all__ = ["SynthSpec", "draw_ibp_pattern", "draw_ibp_loading", "overlap_pairs_design",
           "simulate_responses", "generate", "ibp_preset", "overlap_preset", "IBP_TRUNCATION_FACTOR"]

IBP_TRUNCATION_FACTOR = 5


def draw_ibp_pattern(j_items: int, alpha: float, truncation: int, rng: np.random.Generator):
    """Stick-breaking IBP pattern: v_l ~ Beta(alpha, 1), c_k = prod v_l, gamma_jk ~ Bern(c_k)."""
    if not alpha > 0:
        raise ParameterError("IBP intensity must be positive")
    if truncation < 1 or j_items < 1:
        raise ParameterError("need at least one item and one column")
    v = rng.beta(alpha, 1.0, size=truncation)
    c = np.cumprod(v)
    pattern = rng.random((j_items, truncation)) < c
    return pattern, c


def _magnitudes(magnitude, rng, size):
    if callable(magnitude):
        return np.asarray(magnitude(rng, size), float)
    return np.full(size, float(magnitude))


def draw_ibp_loading(j_items: int, alpha: float, keep_k: int, magnitude=1.0,
                     rng: np.random.Generator | None = None, truncation: int | None = None,
                     max_tries: int = 10):
    """IBP loading matrix restricted to its ``keep_k`` best-supported columns.

    Returns ``(B, pattern, info)``.  Columns are ordered by decreasing
    support; rows stay in generation order.  ``info["display_rows"]`` is the
    row order that groups identical patterns for plotting (display only).
    ``magnitude`` is a constant, or ``f(rng, size)`` for random values.
    """
    if keep_k < 1:
        raise ParameterError("keep_k must be at least 1")
    rng = np.random.default_rng() if rng is None else rng
    T = IBP_TRUNCATION_FACTOR * keep_k if truncation is None else int(truncation)
    if keep_k > T:
        raise ParameterError("keep_k exceeds the stick-breaking truncation")
    for attempt in range(1, max_tries + 1):
        pattern, c = draw_ibp_pattern(j_items, alpha, T, rng)
        support = pattern.sum(axis=0)
        cols = np.argsort(-support, kind="stable")[:keep_k]
        P = pattern[:, cols]
        if P.any():
            break
    else:
        raise PxlError(f"IBP draw produced an empty pattern in {max_tries} tries")
    B = np.zeros(P.shape)
    B[P] = _magnitudes(magnitude, rng, int(P.sum()))
    # display order: rows sorted by their binary pattern, most-loaded first
    keys = P.astype(int) @ (2 ** np.arange(keep_k)[::-1])
    display_rows = np.argsort(-keys, kind="stable")
    info = {"inclusion": c[cols].tolist(), "columns_kept": cols.tolist(), "tries": attempt,
            "display_rows": display_rows.tolist(), "truncation": T}
    return B, P, info


def overlap_pairs_design(j_items: int, k: int = 4, pair_fraction: float = 0.5, magnitude=1.0,
                         rng: np.random.Generator | None = None):
    """Items loading on one factor (balanced) or on a pair of factors.

    The first ``round((1 - pair_fraction) J)`` items load on factor
    ``j mod k``.  The remaining items cycle through all unordered pairs;
    with ``rng`` the pair assignment is shuffled instead.
    """
    if k < 2:
        raise ParameterError("overlap design needs k >= 2")
    if not 0.0 <= pair_fraction <= 1.0:
        raise ParameterError("pair_fraction must lie in [0, 1]")
    n_single = int(round((1.0 - pair_fraction) * j_items))
    pairs = list(itertools.combinations(range(k), 2))
    P = np.zeros((j_items, k), dtype=bool)
    for j in range(n_single):
        P[j, j % k] = True
    n_pair = j_items - n_single
    assign = np.arange(n_pair) % len(pairs)
    if rng is not None:
        assign = rng.permutation(assign)
    for i, a in enumerate(assign):
        P[n_single + i, list(pairs[a])] = True
    B = np.zeros((j_items, k))
    r = rng if rng is not None else np.random.default_rng(0)
    B[P] = _magnitudes(magnitude, r, int(P.sum()))
    return B


def simulate_responses(B, D, Sigma, kinds, n_obs: int, rng: np.random.Generator,
                       return_theta: bool = False):
    """Draw theta ~ N(0, I) and responses from each item's law.

    binary:      P(y=1) = Phi(B_j'theta + d_j)
    ordinal:     P(y <= l) = Phi(B_j'theta + d_{j,l}),  y in 0..L
    continuous:  y = d_j + B_j'theta + N(0, sigma_j^2)
    """
    B = np.atleast_2d(np.asarray(B, float))
    J, K = B.shape
    kinds = list(kinds)
    if len(kinds) != J or len(D) != J:
        raise ParameterError("B, D and kinds disagree on the number of items")
    Sigma = np.full(J, np.nan) if Sigma is None else np.asarray(Sigma, float).ravel()
    theta = rng.standard_normal((n_obs, K))
    eta = theta @ B.T
    Y = np.empty((n_obs, J))
    for j, kind in enumerate(kinds):
        e = rng.standard_normal(n_obs)
        if kind.is_binary:
            Y[:, j] = (eta[:, j] + float(D[j]) + e > 0).astype(float)
        elif kind.is_ordinal:
            th = np.asarray(D[j], float)
            if th.shape != (kind.levels,) or np.any(np.diff(th) < 0):
                raise ParameterError(f"item {j + 1}: thresholds must be {kind.levels} increasing values")
            Y[:, j] = (e[:, None] > eta[:, j, None] + th[None, :]).sum(axis=1)
        else:
            if not Sigma[j] > 0:
                raise ParameterError(f"item {j + 1}: residual variance must be positive")
            Y[:, j] = float(D[j]) + eta[:, j] + np.sqrt(Sigma[j]) * e
    data = ResponseMatrix(Y, kinds)
    return (data, theta) if return_theta else data


@dataclass
class SynthSpec:
    """Benchmark description.  ``design`` is "ibp", "overlap" or "explicit"."""

    n_obs: int
    n_items: int
    design: str = "ibp"
    alpha: float = 2.0
    keep_k: int = 5
    k: int = 4
    pair_fraction: float = 0.5
    magnitude: float = 1.0
    intercept_sd: float = 0.5
    kinds: list | None = None
    loading: list | None = None
    intercepts: list | None = None
    resid_var: list | None = None
    seed: int = 0

    def to_dict(self):
        d = dict(self.__dict__)
        d["kinds"] = None if self.kinds is None else [str(k) for k in self.kinds]
        return d


def generate(spec: SynthSpec):
    """Build the truth and the dataset.  Returns ``(data, truth_params, info)``."""
    ss = np.random.SeedSequence(spec.seed)
    r_design, r_int, r_resp = (np.random.default_rng(s) for s in ss.spawn(3))
    info = {}
    J = spec.n_items
    if spec.design == "ibp":
        B, _, info = draw_ibp_loading(J, spec.alpha, spec.keep_k, spec.magnitude, r_design)
    elif spec.design == "overlap":
        B = overlap_pairs_design(J, spec.k, spec.pair_fraction, spec.magnitude)
    elif spec.design == "explicit":
        if spec.loading is None:
            raise ParameterError("explicit design needs a loading matrix")
        B = np.atleast_2d(np.asarray(spec.loading, float))
        if B.shape[0] != J:
            raise ParameterError("explicit loading does not match n_items")
    else:
        raise ParameterError(f"unknown design {spec.design!r}")
    kinds = [BINARY] * J if spec.kinds is None else [k if isinstance(k, ItemKind) else ItemKind.parse(k)
                                                    for k in spec.kinds]
    if spec.intercepts is not None:
        D = [d if np.ndim(d) == 0 else np.asarray(d, float) for d in spec.intercepts]
    else:
        D = []
        for kind in kinds:
            if kind.is_ordinal:
                D.append(np.sort(r_int.normal(0.0, 1.0, kind.levels)))
            else:
                D.append(float(r_int.normal(0.0, spec.intercept_sd)))
    rv = np.full(J, np.nan)
    for j, kind in enumerate(kinds):
        if kind.is_continuous:
            rv[j] = 1.0 if spec.resid_var is None else float(spec.resid_var[j])
    data = simulate_responses(B, D, rv, kinds, spec.n_obs, r_resp)
    truth = ModelParams(B, tuple(D), np.ones(B.shape[1]) * (1 - 1e-8), rv)
    return data, truth, info


def ibp_preset(seed: int = 2024, n_obs: int = 250, n_items: int = 350, keep_k: int = 5) -> SynthSpec:
    return SynthSpec(n_obs=n_obs, n_items=n_items, design="ibp", alpha=2.0, keep_k=keep_k, seed=seed)


def overlap_preset(seed: int = 2024, n_obs: int = 200, n_items: int = 300) -> SynthSpec:
    return SynthSpec(n_obs=n_obs, n_items=n_items, design="overlap", k=4, pair_fraction=0.5, seed=seed)
