"""Recovery metrics for estimated loadings.

Exploratory loadings are identified only up to column order and sign, so
estimates are first matched to the truth by optimal assignment on the
absolute cosine similarity of columns.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import ndtr

from .model import ModelParams, ResponseMatrix
from .sun import mixed_sun_params, sample_sun

__all__ = ["Alignment", "align_loadings", "apply_alignment", "loading_mse", "intercept_mse",
           "fdr_fnr", "reconstruction_mse", "predictive_means", "metrics_report", "write_report"]


@dataclass(frozen=True)
class Alignment:
    """``perm[k]`` is the estimated column matched to true column k (-1 if none)."""

    perm: np.ndarray
    signs: np.ndarray
    unmatched_true: tuple = ()
    n_est: int = 0

    @property
    def matched_est(self):
        return set(int(p) for p in self.perm if p >= 0)

    def is_identity(self):
        return bool(np.all(self.perm == np.arange(self.perm.size)) and np.all(self.signs == 1))


def align_loadings(B_est, B_true) -> Alignment:
    B_est = np.atleast_2d(np.asarray(B_est, float))
    B_true = np.atleast_2d(np.asarray(B_true, float))
    if B_est.shape[0] != B_true.shape[0]:
        raise ValueError("loading matrices must have the same number of rows")
    Kt, Ke = B_true.shape[1], B_est.shape[1]
    ne = np.linalg.norm(B_est, axis=0)
    nt = np.linalg.norm(B_true, axis=0)
    live = np.flatnonzero(ne > 0)
    perm = -np.ones(Kt, dtype=int)
    signs = np.ones(Kt, dtype=int)
    if live.size:
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = (B_true.T @ B_est[:, live]) / np.outer(np.where(nt > 0, nt, 1.0), ne[live])
        rows, cols = linear_sum_assignment(-np.abs(cos))
        for r, c in zip(rows, cols):
            perm[r] = live[c]
            signs[r] = -1 if cos[r, c] < 0 else 1
    unmatched = tuple(int(k) for k in np.flatnonzero(perm < 0))
    return Alignment(perm, signs, unmatched, Ke)


def apply_alignment(B_est, alignment: Alignment):
    """Estimated columns arranged (and sign-flipped) to match the truth."""
    B_est = np.atleast_2d(np.asarray(B_est, float))
    out = np.zeros((B_est.shape[0], alignment.perm.size))
    for k, (p, s) in enumerate(zip(alignment.perm, alignment.signs)):
        if p >= 0:
            out[:, k] = s * B_est[:, p]
    return out


def loading_mse(B_est, B_true, alignment: Alignment | None = None) -> float:
    B_true = np.atleast_2d(np.asarray(B_true, float))
    al = align_loadings(B_est, B_true) if alignment is None else alignment
    return float(np.mean((apply_alignment(B_est, al) - B_true) ** 2))


def _flat_intercepts(D):
    return np.concatenate([np.atleast_1d(np.asarray(d, float)) for d in D])


def intercept_mse(D_est, D_true) -> float:
    """Mean squared difference over all intercepts and thresholds."""
    a, b = _flat_intercepts(D_est), _flat_intercepts(D_true)
    if a.shape != b.shape:
        raise ValueError("intercept layouts differ")
    return float(np.mean((a - b) ** 2))


def fdr_fnr(B_est, B_true, alignment: Alignment | None = None, threshold: float = 0.0):
    """False discovery and false negative rates of the support.

    Entries of estimated columns that matched no true column count as
    (false) discoveries.
    """
    B_est = np.atleast_2d(np.asarray(B_est, float))
    B_true = np.atleast_2d(np.asarray(B_true, float))
    al = align_loadings(B_est, B_true) if alignment is None else alignment
    A = apply_alignment(B_est, al)
    disc = np.abs(A) > threshold
    true = B_true != 0
    extra = [k for k in range(B_est.shape[1]) if k not in al.matched_est]
    n_extra = int(np.sum(np.abs(B_est[:, extra]) > threshold)) if extra else 0
    n_disc = int(disc.sum()) + n_extra
    fd = int(np.sum(disc & ~true)) + n_extra
    fn = int(np.sum(true & ~disc))
    return fd / max(1, n_disc), fn / max(1, int(true.sum()))


def predictive_means(params: ModelParams, kinds, thetas):
    """E[Y_j | theta] averaged over the rows of ``thetas`` (M x K)."""
    eta = thetas @ params.loading.T
    out = np.empty(params.n_items)
    for j, kind in enumerate(kinds):
        d = params.intercepts[j]
        if kind.is_binary:
            out[j] = ndtr(eta[:, j] + d).mean()
        elif kind.is_ordinal:
            # E[Y] = sum_l P(Y > l)
            out[j] = (1.0 - ndtr(eta[:, j, None] + np.asarray(d)[None, :])).sum(axis=1).mean()
        else:
            out[j] = d + eta[:, j].mean()
    return out


def reconstruction_mse(params: ModelParams, data: ResponseMatrix, m_draws: int = 100,
                       rng: np.random.Generator | None = None) -> float:
    """In-sample mean squared gap between responses and posterior-predictive means."""
    rng = np.random.default_rng() if rng is None else rng
    sq = 0.0
    for i in range(data.n_obs):
        sp = mixed_sun_params(params.loading, params.intercepts, params.resid_var,
                              data.values[i], data.kinds)
        th = sample_sun(sp, m_draws, rng)
        sq += float(np.sum((data.values[i] - predictive_means(params, data.kinds, th)) ** 2))
    return sq / data.values.size


def metrics_report(est: ModelParams, truth: ModelParams, threshold: float = 0.0) -> dict:
    al = align_loadings(est.loading, truth.loading)
    fdr, fnr = fdr_fnr(est.loading, truth.loading, al, threshold)
    return {
        "loading_mse": loading_mse(est.loading, truth.loading, al),
        "intercept_mse": intercept_mse(est.intercepts, truth.intercepts),
        "fdr": fdr,
        "fnr": fnr,
        "threshold": threshold,
        "alignment": {"perm": al.perm.tolist(), "signs": al.signs.tolist(),
                      "unmatched_true": list(al.unmatched_true)},
        "nonzero_columns": int(np.sum(np.any(est.loading != 0, axis=0))),
    }


def write_report(path, report: dict):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
