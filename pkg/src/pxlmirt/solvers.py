"""M-step optimizers.

Every item's update is a penalized regression of its responses on the
E-step factor draws, with one row per (respondent, draw).  All objectives
are per-respondent averages over the M draws, i.e. the stacked sums are
divided by M.

* binary:     probit with weighted L1 on the slopes and on the intercept
* ordinal:    graded-response probit, thresholds in log-gap form
* continuous: lasso on sufficient statistics, then a closed-form variance

Probit-type fits use proximal Newton: a quadratic model of the smooth part,
coordinate descent with soft-thresholding on that model, and a backtracking
line search on the true objective.  Zeros are produced by the threshold
step and are exact.
"""
from __future__ import annotations

import warnings
from typing import NamedTuple

import numba as nb
import numpy as np
from scipy.special import log_ndtr, ndtri

from ._normal import LOG_SQRT_2PI, log_cdf_diff
from .errors import NumericError, ParameterError

__all__ = ["penalty_weights", "fit_penalized_probit", "fit_penalized_ordered_probit",
           "ordered_probit_objective", "ordered_probit_gradient", "probit_objective",
           "fit_penalized_linear", "update_sigma", "optimize_ibp_weights", "ibp_objective",
           "px_rotation", "SolverResult", "SolverWarning", "GAP_FLOOR"]

GAP_FLOOR = 1e-6
MAX_OUTER = 200
TOL = 1e-7


class SolverWarning(UserWarning):
    pass


class SolverResult(NamedTuple):
    beta: np.ndarray
    intercept: object          # float, or threshold array for ordinal fits
    objective: float
    n_iter: int
    converged: bool
    note: str = ""


def penalty_weights(gamma_expect, lambda0, lambda1):
    """Per-entry L1 weights lambda1 * g + lambda0 * (1 - g)."""
    g = np.asarray(gamma_expect, float)
    return lambda1 * g + lambda0 * (1.0 - g)


@nb.njit(cache=True)
def _cd_quadratic(g, H, v0, pen, v, max_sweeps, tol):
    """Coordinate descent on g'(v-v0) + 0.5 (v-v0)'H(v-v0) + sum pen|v|.

    ``pen[k] < 0`` marks an unpenalized coordinate.  ``v`` is updated in
    place, starting from its incoming value.
    """
    p = v.size
    r = H @ (v - v0) + g                   # gradient of the smooth part at v
    for _ in range(max_sweeps):
        delta = 0.0
        for k in range(p):
            hk = H[k, k]
            if hk <= 0.0:
                hk = 1e-12
            z = hk * v[k] - r[k]
            if pen[k] < 0.0:
                new = z / hk
            elif z > pen[k]:
                new = (z - pen[k]) / hk
            elif z < -pen[k]:
                new = (z + pen[k]) / hk
            else:
                new = 0.0
            step = new - v[k]
            if step != 0.0:
                for i in range(p):
                    r[i] += H[i, k] * step
                v[k] = new
                if abs(step) > delta:
                    delta = abs(step)
        if delta < tol:
            break
    return v


def _pen_value(v, pen):
    m = pen >= 0
    return float(np.sum(pen[m] * np.abs(v[m])))


# ------------------------------------------------------------------ probit

def probit_objective(X, y, beta, d, w, lambda_d, n_copies=1):
    """(1/M) sum log Phi((2y-1)(x'beta + d)) - sum w|beta| - lambda_d |d|."""
    s = 2.0 * np.asarray(y, float) - 1.0
    eta = np.asarray(X, float) @ beta + d
    return float(log_ndtr(s * eta).sum() / n_copies - np.sum(w * np.abs(beta)) - lambda_d * abs(d))


def fit_penalized_probit(X, y, w, init=None, lambda_d=0.5, n_copies=1, tol=TOL,
                         max_iter=MAX_OUTER) -> SolverResult:
    """Weighted-L1 probit regression with an L1-penalized intercept.

    ``X`` is the stacked (respondent x draw) design, ``y`` the matching
    0/1 responses, ``w`` the K slope weights.  The objective never decreases
    from ``init`` (default zeros).
    """
    X = np.ascontiguousarray(X, float)
    y = np.asarray(y, float).ravel()
    n, K = X.shape
    if y.shape != (n,):
        raise ParameterError("X and y disagree on the number of rows")
    if np.any((y != 0) & (y != 1)):
        raise ParameterError("probit responses must be 0/1")
    if not np.all(np.isfinite(X)):
        raise ParameterError("design contains non-finite values")
    w = np.broadcast_to(np.asarray(w, float), (K,))
    if np.any(w < 0) or lambda_d < 0:
        raise ParameterError("penalty weights must be non-negative")
    s = 2.0 * y - 1.0
    M = float(n_copies)
    v = np.zeros(K + 1)
    if init is not None:
        v[:K] = np.asarray(init[0], float)
        v[K] = float(init[1])
    pen = np.append(w, lambda_d).astype(float)

    def smooth(vv):
        return -float(log_ndtr(s * (X @ vv[:K] + vv[K])).sum()) / M

    f_cur = smooth(v) + _pen_value(v, pen)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        u = s * (X @ v[:K] + v[K])
        lr = log_ndtr(u)
        r = np.exp(-0.5 * u * u - LOG_SQRT_2PI - lr)      # phi(u)/Phi(u)
        h = r * (u + r) / M                             # curvature of -log Phi, in (0, 1/M]
        gz = -s * r / M
        g = np.empty(K + 1)
        g[:K] = X.T @ gz
        g[K] = gz.sum()
        H = np.empty((K + 1, K + 1))
        Xh = X * h[:, None]
        H[:K, :K] = X.T @ Xh
        H[:K, K] = H[K, :K] = Xh.sum(axis=0)
        H[K, K] = h.sum()
        H[np.diag_indices(K + 1)] += 1e-10
        vn = _cd_quadratic(g, H, v, pen, v.copy(), 500, 1e-12)
        step = vn - v
        if np.max(np.abs(step)) < tol:
            converged = True
            break
        # Armijo on the composite objective
        decr = g @ step + _pen_value(vn, pen) - _pen_value(v, pen)
        t = 1.0
        accepted = False
        while t > 1e-10:
            cand = vn if t == 1.0 else v + t * step
            f_new = smooth(cand) + _pen_value(cand, pen)
            if f_new <= f_cur + 1e-4 * t * min(decr, 0.0):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            converged = True        # no further decrease available in floating point
            break
        if f_new > f_cur + 1e-12 * max(1.0, abs(f_cur)):
            raise NumericError("probit solver failed to ascend")
        v, f_cur = cand, f_new
        if t == 1.0 and np.max(np.abs(step)) < tol:
            converged = True
            break
    note = "" if converged else "probit solver hit the iteration cap"
    if note:
        warnings.warn(note, SolverWarning, stacklevel=2)
    return SolverResult(v[:K].copy(), float(v[K]), -f_cur, it, converged, note)


# ---------------------------------------------------------- ordered probit

def _thresholds(a, g):
    return a + np.concatenate([[0.0], np.cumsum(np.exp(g))])


def _ord_parts(X, y, beta, d):
    """log P(y_i) and the bound positions for each row."""
    L = d.size
    eta = X @ beta
    yi = y.astype(np.int64)
    dd = np.concatenate([[-np.inf], d, [np.inf]])
    hi = eta + dd[yi + 1]
    lo = eta + dd[yi]
    return log_cdf_diff(lo, hi), lo, hi, yi


def ordered_probit_objective(X, y, beta, thresholds, w, n_copies=1):
    """(1/M) sum log[Phi(x'beta + d_y) - Phi(x'beta + d_{y-1})] - sum w|beta|."""
    X = np.asarray(X, float)
    d = np.asarray(thresholds, float)
    lp, *_ = _ord_parts(X, np.asarray(y), np.asarray(beta, float), d)
    return float(lp.sum() / n_copies - np.sum(np.asarray(w) * np.abs(beta)))


def _ord_derivs(X, y, beta, d, n_copies, hessian=True):
    """Gradient and negative Hessian of the smooth log-likelihood in (beta, d)."""
    n, K = X.shape
    L = d.size
    lp, lo, hi, yi = _ord_parts(X, y, beta, d)
    with np.errstate(over="ignore", invalid="ignore"):
        a_hi = np.where(np.isfinite(hi), np.exp(-0.5 * hi * hi - LOG_SQRT_2PI - lp), 0.0)
        a_lo = np.where(np.isfinite(lo), np.exp(-0.5 * lo * lo - LOG_SQRT_2PI - lp), 0.0)
    hi_f = np.where(np.isfinite(hi), hi, 0.0)
    lo_f = np.where(np.isfinite(lo), lo, 0.0)
    M = float(n_copies)
    # one-hot threshold columns for each bound (zero where the bound is infinite)
    idx_hi = yi            # threshold index of the upper bound
    idx_lo = yi - 1
    geta = (a_hi - a_lo) / M
    grad = np.empty(K + L)
    grad[:K] = X.T @ geta
    grad[K:] = (np.bincount(idx_hi[yi < L], weights=a_hi[yi < L], minlength=L)
                - np.bincount(idx_lo[yi > 0], weights=a_lo[yi > 0], minlength=L)) / M
    if not hessian:
        return lp, grad, None
    w_hh = (hi_f * a_hi + a_hi * a_hi) / M
    w_ll = (-lo_f * a_lo + a_lo * a_lo) / M
    c_hl = a_hi * a_lo / M
    H = np.zeros((K + L, K + L))
    wxx = w_hh + w_ll - 2.0 * c_hl
    H[:K, :K] = X.T @ (X * wxx[:, None])
    m_hi, m_lo = yi < L, yi > 0
    # beta - threshold blocks
    for l in range(L):
        sel_h = m_hi & (idx_hi == l)
        sel_l = m_lo & (idx_lo == l)
        col = X[sel_h].T @ (w_hh[sel_h] - c_hl[sel_h]) + X[sel_l].T @ (w_ll[sel_l] - c_hl[sel_l])
        H[:K, K + l] = H[K + l, :K] = col
    H[K:, K:] += np.diag(np.bincount(idx_hi[m_hi], weights=w_hh[m_hi], minlength=L)
                         + np.bincount(idx_lo[m_lo], weights=w_ll[m_lo], minlength=L))
    both = m_hi & m_lo            # interior rows couple d_{y-1} and d_y
    off = np.bincount(idx_lo[both], weights=c_hl[both], minlength=L)[: L - 1] if L > 1 else np.zeros(0)
    for l in range(L - 1):
        H[K + l, K + l + 1] -= off[l]
        H[K + l + 1, K + l] -= off[l]
    return lp, grad, H


def ordered_probit_gradient(X, y, beta, thresholds, n_copies=1):
    """Analytic gradient of the smooth log-likelihood in (beta, thresholds)."""
    X = np.asarray(X, float)
    _, g, _ = _ord_derivs(X, np.asarray(y), np.asarray(beta, float),
                          np.asarray(thresholds, float), n_copies, hessian=False)
    return g


def _merge_levels(y, L):
    present = np.flatnonzero(np.bincount(y.astype(int), minlength=L + 1) > 0)
    remap = np.full(L + 1, -1)
    remap[present] = np.arange(present.size)
    return present, remap[y.astype(int)]


def fit_penalized_ordered_probit(X, y, w, n_levels=None, init=None, n_copies=1, tol=TOL,
                                 max_iter=MAX_OUTER) -> SolverResult:
    """Weighted-L1 graded-response probit; returns slopes and L thresholds.

    ``y`` takes values 0..L (``n_levels`` = L, the top level).  The model is
    P(Y <= l) = Phi(x'beta + d_l).  Levels absent from ``y`` are merged into
    a neighbour (with a warning) and their thresholds placed next to it.
    """
    X = np.ascontiguousarray(X, float)
    y = np.asarray(y).ravel()
    n, K = X.shape
    if y.shape != (n,):
        raise ParameterError("X and y disagree on the number of rows")
    if np.any(y != np.round(y)) or np.any(y < 0):
        raise ParameterError("ordinal responses must be non-negative integers")
    y = y.astype(np.int64)
    L = int(y.max()) if n_levels is None else int(n_levels)
    if L < 1 or np.any(y > L):
        raise ParameterError("ordinal responses exceed the declared top level")
    w = np.broadcast_to(np.asarray(w, float), (K,))
    notes = []

    present, ym = _merge_levels(y, L)
    Lm = present.size - 1
    if Lm < L:
        notes.append(f"levels {sorted(set(range(L + 1)) - set(present.tolist()))} absent; merged")
    if Lm == 0:
        beta = np.zeros(K)
        d = np.where(np.arange(L) < present[0], -8.0, 8.0) + GAP_FLOOR * np.arange(L)
        note = "; ".join(notes + ["single observed level; slopes fixed at 0"])
        warnings.warn(note, SolverWarning, stacklevel=2)
        return SolverResult(beta, d, 0.0, 0, True, note)

    # initial point on the merged scale
    if init is not None and Lm == L:
        beta0 = np.asarray(init[0], float).copy()
        d0 = np.maximum.accumulate(np.asarray(init[1], float))
        gaps = np.maximum(np.diff(d0), GAP_FLOOR)
        v = np.concatenate([beta0, [d0[0]], np.log(gaps)])
    else:
        cum = np.cumsum(np.bincount(ym, minlength=Lm + 1))[:-1] / n
        d0 = ndtri(np.clip(cum, 1e-6, 1 - 1e-6))
        gaps = np.maximum(np.diff(d0), GAP_FLOOR)
        v = np.concatenate([np.zeros(K), [d0[0]], np.log(gaps)])
    gfloor = np.log(GAP_FLOOR)
    pen = np.concatenate([w, -np.ones(Lm)])
    M = float(n_copies)

    def unpack(vv):
        return vv[:K], _thresholds(vv[K], vv[K + 1:])

    def fval(vv):
        b, d = unpack(vv)
        lp, *_ = _ord_parts(X, ym, b, d)
        return -float(lp.sum()) / M + _pen_value(vv, pen)

    f_cur = fval(v)
    converged = False
    clipped = False
    it = 0
    for it in range(1, max_iter + 1):
        b, d = unpack(v)
        _, grad, Hd = _ord_derivs(X, ym, b, d, M)
        # chain rule to (a, g): d_l = a + sum_{m<=l} exp(g_m)
        Jm = np.zeros((K + Lm, K + Lm))
        Jm[:K, :K] = np.eye(K)
        Jm[K:, K] = 1.0
        eg = np.exp(v[K + 1:])
        for m in range(1, Lm):
            Jm[K + m:, K + m] = eg[m - 1]
        g = -(Jm.T @ grad)
        H = Jm.T @ Hd @ Jm
        H = 0.5 * (H + H.T)
        H[np.diag_indices_from(H)] += 1e-10
        vn = _cd_quadratic(g, H, v, pen, v.copy(), 500, 1e-12)
        if Lm > 1 and np.any(vn[K + 1:] < gfloor):
            vn[K + 1:] = np.maximum(vn[K + 1:], gfloor)
            clipped = True
        step = vn - v
        if np.max(np.abs(step)) < tol:
            converged = True
            break
        decr = g @ step + _pen_value(vn, pen) - _pen_value(v, pen)
        t = 1.0
        accepted = False
        while t > 1e-10:
            cand = vn if t == 1.0 else v + t * step
            f_new = fval(cand)
            if np.isfinite(f_new) and f_new <= f_cur + 1e-4 * t * min(decr, 0.0):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            converged = True
            break
        if f_new > f_cur + 1e-12 * max(1.0, abs(f_cur)):
            raise NumericError("ordered-probit solver failed to ascend")
        v, f_cur = cand, f_new
        if t == 1.0 and np.max(np.abs(step)) < tol:
            converged = True
            break
    beta, dm = unpack(v)
    if clipped and np.any(np.isclose(np.diff(dm), GAP_FLOOR, rtol=1e-6, atol=0)):
        notes.append("threshold gap held at the floor")
    if not converged:
        notes.append("ordered-probit solver hit the iteration cap")
    d = _expand_thresholds(dm, present, L)
    note = "; ".join(notes)
    if note:
        warnings.warn(note, SolverWarning, stacklevel=2)
    return SolverResult(beta.copy(), d, -f_cur, it, converged, note)


def _expand_thresholds(dm, present, L):
    """Map thresholds fitted on merged levels back to the declared scale.

    Threshold l separates level l from l+1, so it takes the merged
    threshold below the first present level above l.  Missing end levels
    get thresholds 8 units outside the fitted range.
    """
    d = np.empty(L)
    for l in range(L):
        k = np.searchsorted(present, l, side="right") - 1     # merged level containing l
        if k < 0:
            d[l] = dm[0] - 8.0
        elif k >= dm.size:
            d[l] = dm[-1] + 8.0
        else:
            d[l] = dm[k]
    # restore strict increase
    for l in range(1, L):
        d[l] = max(d[l], d[l - 1] + GAP_FLOOR)
    return d


# ------------------------------------------------------------------ linear

def fit_penalized_linear(X, y, w, sigma2, init=None, n_copies=1, fit_intercept=True,
                         intercept_penalty=0.0, gram=None, tol=1e-12, max_sweeps=10_000) -> SolverResult:
    """Weighted-L1 least squares for one continuous item.

    Minimises (1/(2 sigma2 M)) sum (y - d - x'beta)^2 + sum w|beta| (+ an
    optional L1 term on d) by coordinate descent on sufficient statistics.
    ``gram`` may pass a precomputed ``(X'X, X'1)`` to share across items.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float).ravel()
    n, K = X.shape
    if not sigma2 > 0:
        raise ParameterError("sigma2 must be positive")
    w = np.broadcast_to(np.asarray(w, float), (K,))
    M = float(n_copies)
    G, sx = gram if gram is not None else (X.T @ X, X.sum(axis=0))
    p = K + int(fit_intercept)
    H = np.empty((p, p))
    H[:K, :K] = G / M
    c = np.empty(p)
    c[:K] = X.T @ y / M
    if fit_intercept:
        H[:K, K] = H[K, :K] = sx / M
        H[K, K] = n / M
        c[K] = y.sum() / M
    pen = np.empty(p)
    pen[:K] = sigma2 * w
    if fit_intercept:
        pen[K] = sigma2 * intercept_penalty if intercept_penalty > 0 else -1.0
    v = np.zeros(p)
    if init is not None:
        v[:K] = np.asarray(init[0], float)
        if fit_intercept:
            v[K] = float(init[1])
    # objective in sigma2-scaled form: 0.5 v'Hv - c'v + sum pen|v|
    v = _cd_quadratic(-c, H, np.zeros(p), pen, v, max_sweeps, tol)
    d = float(v[K]) if fit_intercept else 0.0
    obj = -(0.5 * v @ H @ v - c @ v + 0.5 * (y @ y) / M) / sigma2 - _pen_value(v, pen) / sigma2
    return SolverResult(v[:K].copy(), d, float(obj), 0, True)


def update_sigma(X, y, beta, intercept=0.0, n_copies=1, ig_shape=0.5, ig_rate=0.5):
    """Posterior-mode residual variance (RSS/M + 2b) / (n + 2a + 2).

    n is the number of respondents, i.e. rows / M.  With a = b = 1/2 this
    is (RSS/M + 1)/(n + 3).
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float).ravel()
    r = y - intercept - X @ np.asarray(beta, float)
    n = y.size / n_copies
    return float((r @ r / n_copies + 2.0 * ig_rate) / (n + 2.0 * ig_shape + 2.0))


# -------------------------------------------------------------- IBP weights

_C_LO, _C_HI = 1e-8, 1.0 - 1e-8


def ibp_objective(C, gamma_expect, alpha):
    """Expected log stick-breaking prior of the inclusion indicators."""
    C = np.asarray(C, float)
    G = np.atleast_2d(np.asarray(gamma_expect, float))
    s = G.sum(axis=0)
    J = G.shape[0]
    return float(np.sum(s * np.log(C) + (J - s) * np.log1p(-C)) + (alpha - 1.0) * np.log(C[-1]))


def optimize_ibp_weights(gamma_expect, alpha) -> np.ndarray:
    """Non-increasing IBP weights maximising `ibp_objective` (PAVA)."""
    if not alpha > 0:
        raise ParameterError("IBP intensity alpha must be positive")
    G = np.atleast_2d(np.asarray(gamma_expect, float))
    if np.any(G < 0) or np.any(G > 1) or not np.all(np.isfinite(G)):
        raise ParameterError("gamma expectations must lie in [0, 1]")
    J, K = G.shape
    succ = G.sum(axis=0)
    wts = np.full(K, float(J))
    succ[-1] += alpha - 1.0
    wts[-1] += alpha - 1.0
    # pool adjacent violators for a non-increasing fit
    blocks = []                                  # [successes, weight, count]
    for k in range(K):
        blocks.append([succ[k], wts[k], 1])
        while len(blocks) > 1 and blocks[-2][0] / blocks[-2][1] < blocks[-1][0] / blocks[-1][1]:
            s2, w2, n2 = blocks.pop()
            blocks[-1][0] += s2
            blocks[-1][1] += w2
            blocks[-1][2] += n2
    out = np.concatenate([np.full(n, s / w) for s, w, n in blocks])
    return np.clip(out, _C_LO, _C_HI)


# ---------------------------------------------------------------- rotation

def px_rotation(theta_samples):
    """Second moment A of the pooled draws and its lower Cholesky factor."""
    T = np.atleast_2d(np.asarray(theta_samples, float))
    n, K = T.shape
    if n < K:
        raise ParameterError("need at least K draws for the expansion step")
    A = T.T @ T / n
    A = 0.5 * (A + A.T)
    try:
        AL = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        jit = 1e-8 * max(np.max(np.diag(A)), 1e-300)
        try:
            AL = np.linalg.cholesky(A + jit * np.eye(K))
        except np.linalg.LinAlgError:
            raise NumericError("factor second moment is singular") from None
    return A, AL
