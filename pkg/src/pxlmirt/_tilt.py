"""Compiled kernels for minimax-tilted truncated normal sampling.

The permuted Cholesky factor L of the covariance is kept in generator form:
off-diagonal entries are ``L[k, i] = A[k] @ G[i]`` for ``i < k`` and the
diagonal is ``Ld``.  A dense factor is the special case ``A = tril(L, -1)``,
``G = I``.  When the covariance is ``diag(delta) + W W'`` the factorisation,
the saddlepoint Newton solve and the sequential proposal all run in
O(d r^2) time instead of O(d^3).

Notation follows the usual separation-of-variables setup: scaled bounds
``lt = l / Ld``, strictly-lower scaled factor ``Ls = L / Ld[:, None] - I``,
free variables x and mu (both with last entry pinned at 0) and

    psi(x, mu) = sum_k lnq(lt_k - mu_k - (Ls x)_k) + mu_k^2 / 2 - x_k mu_k.
"""
import math

import numba as nb
import numpy as np

from ._normal import lnq_s, mills_s, tail_draw, trandn_lower

TINY = 1e-300


@nb.njit(cache=True)
def cholperm_factor(delta, W, lower):
    """Greedy-ordered Cholesky of diag(delta) + W W' in generator form.

    At each step the remaining coordinate with the smallest conditional
    tail probability (evaluated at the running truncated means) is placed
    next.  Returns (perm, Ld, A, G, delta_perm, lower_perm).
    """
    d, r = W.shape
    perm = np.arange(d)
    A = W.copy()
    dp = delta.copy()
    lp = lower.copy()
    s2 = dp.copy()
    for i in range(d):
        for q in range(r):
            s2[i] += A[i, q] * A[i, q]
    mean = np.zeros(d)
    P = np.eye(r)
    G = np.zeros((d, r))
    Ld = np.zeros(d)
    pw = np.zeros(r)
    for j in range(d):
        best = j
        bestv = np.inf
        for i in range(j, d):
            s = math.sqrt(max(s2[i], TINY))
            v = lnq_s((lp[i] - mean[i]) / s)
            if v < bestv:
                bestv = v
                best = i
        if best != j:
            perm[j], perm[best] = perm[best], perm[j]
            dp[j], dp[best] = dp[best], dp[j]
            lp[j], lp[best] = lp[best], lp[j]
            s2[j], s2[best] = s2[best], s2[j]
            mean[j], mean[best] = mean[best], mean[j]
            for q in range(r):
                A[j, q], A[best, q] = A[best, q], A[j, q]
        s2j = dp[j]
        for a in range(r):
            acc = 0.0
            for b in range(r):
                acc += P[a, b] * A[j, b]
            pw[a] = acc
            s2j += A[j, a] * acc
        s2j = max(s2j, TINY)
        sj = math.sqrt(s2j)
        Ld[j] = sj
        for a in range(r):
            G[j, a] = pw[a] / sj
        zj = mills_s((lp[j] - mean[j]) / sj)
        for a in range(r):
            for b in range(r):
                P[a, b] -= G[j, a] * G[j, b]
        for i in range(j + 1, d):
            lij = 0.0
            for q in range(r):
                lij += A[i, q] * G[j, q]
            s2[i] -= lij * lij
            mean[i] += lij * zj
    return perm, Ld, A, G, dp, lp


@nb.njit(cache=True)
def cholperm_dense(S, lower):
    """Greedy-ordered dense Cholesky (same ordering rule as the factor form)."""
    d = S.shape[0]
    S = S.copy()
    lp = lower.copy()
    perm = np.arange(d)
    L = np.zeros((d, d))
    s2 = np.empty(d)
    for i in range(d):
        s2[i] = S[i, i]
    mean = np.zeros(d)
    for j in range(d):
        best = j
        bestv = np.inf
        for i in range(j, d):
            s = math.sqrt(max(s2[i], TINY))
            v = lnq_s((lp[i] - mean[i]) / s)
            if v < bestv:
                bestv = v
                best = i
        if best != j:
            perm[j], perm[best] = perm[best], perm[j]
            lp[j], lp[best] = lp[best], lp[j]
            s2[j], s2[best] = s2[best], s2[j]
            mean[j], mean[best] = mean[best], mean[j]
            for c in range(d):
                S[j, c], S[best, c] = S[best, c], S[j, c]
            for c in range(d):
                S[c, j], S[c, best] = S[c, best], S[c, j]
            for c in range(j):
                L[j, c], L[best, c] = L[best, c], L[j, c]
        s2j = S[j, j]
        for c in range(j):
            s2j -= L[j, c] * L[j, c]
        s2j = max(s2j, TINY)
        sj = math.sqrt(s2j)
        L[j, j] = sj
        zj = mills_s((lp[j] - mean[j]) / sj)
        for i in range(j + 1, d):
            acc = S[i, j]
            for c in range(j):
                acc -= L[i, c] * L[j, c]
            lij = acc / sj
            L[i, j] = lij
            s2[i] -= lij * lij
            mean[i] += lij * zj
    return perm, L, lp


# ------------------------------------------------------------ saddlepoint

@nb.njit(cache=True)
def _ls_mul(v, Ld, A, G):
    """(Ls v)_k = sum_{i<k} L[k,i] v_i / Ld_k."""
    d, r = A.shape
    out = np.empty(d)
    R = np.zeros(r)
    for k in range(d):
        c = 0.0
        for q in range(r):
            c += A[k, q] * R[q]
        out[k] = c / Ld[k]
        for q in range(r):
            R[q] += G[k, q] * v[k]
    return out


@nb.njit(cache=True)
def _lst_mul(u, Ld, A, G):
    """(Ls' u)_i = sum_{k>i} L[k,i] u_k / Ld_k."""
    d, r = A.shape
    out = np.empty(d)
    S = np.zeros(r)
    for i in range(d - 1, -1, -1):
        c = 0.0
        for q in range(r):
            c += G[i, q] * S[q]
        out[i] = c
        f = u[i] / Ld[i]
        for q in range(r):
            S[q] += f * A[i, q]
    return out


@nb.njit(cache=True)
def _l_solve(v, Ld, A, G):
    """Solve L y = v."""
    d, r = A.shape
    y = np.empty(d)
    R = np.zeros(r)
    for k in range(d):
        c = 0.0
        for q in range(r):
            c += A[k, q] * R[q]
        y[k] = (v[k] - c) / Ld[k]
        for q in range(r):
            R[q] += G[k, q] * y[k]
    return y


@nb.njit(cache=True)
def _lt_solve(v, Ld, A, G):
    """Solve L' y = v."""
    d, r = A.shape
    y = np.empty(d)
    S = np.zeros(r)
    for i in range(d - 1, -1, -1):
        c = 0.0
        for q in range(r):
            c += G[i, q] * S[q]
        y[i] = (v[i] - c) / Ld[i]
        for q in range(r):
            S[q] += A[i, q] * y[i]
    return y


@nb.njit(cache=True)
def psi_grad(x, mu, Ld, A, G, lt):
    """psi value, gradient pieces and curvature terms at (x, mu).

    Returns (psi, gx, gmu, dP) with dP = dP_k/dmu_k <= 0.
    """
    d = lt.shape[0]
    c = _ls_mul(x, Ld, A, G)
    P = np.empty(d)
    dP = np.empty(d)
    psi = 0.0
    for k in range(d):
        t = lt[k] - mu[k] - c[k]
        if t == -np.inf:
            P[k] = 0.0
            dP[k] = 0.0
        else:
            p = mills_s(t)
            P[k] = p
            dP[k] = p * (t - p)
            psi += lnq_s(t)
        psi += 0.5 * mu[k] * mu[k] - x[k] * mu[k]
    lp = _lst_mul(P, Ld, A, G)
    gx = lp - mu
    gmu = P + mu - x
    gx[d - 1] = 0.0
    gmu[d - 1] = 0.0
    return psi, gx, gmu, dP


@nb.njit(cache=True)
def _solve_m_factor(v, Ld, A, G, delta, qs):
    """Solve (I + L' diag(qs) L) y = v with L L' = diag(delta) + A A'."""
    d, r = A.shape
    u = _lt_solve(v, Ld, A, G)
    den = np.empty(d)
    for k in range(d):
        den[k] = 1.0 + delta[k] * qs[k]
    N = np.eye(r)
    for k in range(d):
        f = qs[k] / den[k]
        for a in range(r):
            fa = f * A[k, a]
            for b in range(r):
                N[a, b] += fa * A[k, b]
    t = np.zeros(r)
    for k in range(d):
        f = u[k] / den[k]
        for a in range(r):
            t[a] += A[k, a] * f
    s = np.linalg.solve(N, t) if r > 0 else t
    w = np.empty(d)
    for k in range(d):
        acc = 0.0
        for a in range(r):
            acc += A[k, a] * s[a]
        w[k] = (delta[k] * u[k] + acc) / den[k]
    return _l_solve(w, Ld, A, G)


@nb.njit(cache=True)
def _solve_m_dense(v, Ld, A, qs):
    d = Ld.shape[0]
    L = A.copy()
    for k in range(d):
        L[k, k] = Ld[k]
    M = np.eye(d)
    for k in range(d):
        for i in range(k + 1):
            a = qs[k] * L[k, i]
            for j in range(k + 1):
                M[i, j] += a * L[k, j]
    return np.linalg.solve(M, v)


@nb.njit(cache=True)
def newton_step(x, mu, gx, gmu, dP, Ld, A, G, delta, factor):
    """Exact Newton direction for the saddlepoint system.

    The mu block is eliminated analytically; the remaining x system is
    (I + T' |F| T) restricted to the free coordinates, T = I + Ls.
    """
    d = Ld.shape[0]
    e = np.zeros(d)
    qs = np.empty(d)
    for k in range(d - 1):
        e[k] = gmu[k] / (1.0 + dP[k])
        qs[k] = -dP[k] / (1.0 + dP[k]) / (Ld[k] * Ld[k])
    qs[d - 1] = -dP[d - 1] / (Ld[d - 1] * Ld[d - 1])
    de = dP * e
    b = gx + e - _lst_mul(de, Ld, A, G)
    b[d - 1] = 0.0
    ed = np.zeros(d)
    ed[d - 1] = 1.0
    if factor:
        y1 = _solve_m_factor(b, Ld, A, G, delta, qs)
        y2 = _solve_m_factor(ed, Ld, A, G, delta, qs)
    else:
        y1 = _solve_m_dense(b, Ld, A, qs)
        y2 = _solve_m_dense(ed, Ld, A, qs)
    dx = y1 - y2 * (y1[d - 1] / y2[d - 1])
    dx[d - 1] = 0.0
    cdx = -dx + dP * _ls_mul(dx, Ld, A, G)
    dmu = np.zeros(d)
    for k in range(d - 1):
        dmu[k] = (-gmu[k] - cdx[k]) / (1.0 + dP[k])
    return dx, dmu


@nb.njit(cache=True)
def solve_saddle(x0, mu0, Ld, A, G, lt, delta, factor, tol, max_iter):
    """Damped Newton on the gradient norm.  Returns (x, mu, psi, resid, iters)."""
    x = x0.copy()
    mu = mu0.copy()
    psi, gx, gmu, dP = psi_grad(x, mu, Ld, A, G, lt)
    res = max(np.max(np.abs(gx)), np.max(np.abs(gmu)))
    it = 0
    while res > tol and it < max_iter:
        it += 1
        dx, dmu = newton_step(x, mu, gx, gmu, dP, Ld, A, G, delta, factor)
        merit = np.sum(gx * gx) + np.sum(gmu * gmu)
        step = 1.0
        ok = False
        for _ in range(40):
            xn = x + step * dx
            mn = mu + step * dmu
            psin, gxn, gmun, dPn = psi_grad(xn, mn, Ld, A, G, lt)
            mn_ = np.sum(gxn * gxn) + np.sum(gmun * gmun)
            if np.isfinite(mn_) and mn_ < merit:
                ok = True
                break
            step *= 0.5
        if not ok:
            break
        x, mu, psi, gx, gmu, dP = xn, mn, psin, gxn, gmun, dPn
        res = max(np.max(np.abs(gx)), np.max(np.abs(gmu)))
    return x, mu, psi, res, it


# --------------------------------------------------------------- proposal

@nb.njit(cache=True)
def propose(Ld, A, G, lt, mu, U, Zn, seed):
    """Sequential tilted proposals from uniforms ``U`` and normals ``Zn`` (n x d).

    Returns X (n x d, permuted order, X = L Z) and the log importance
    weights psi(Z, mu); accept a row when -log V > psi* - logw.
    """
    np.random.seed(seed)
    n = U.shape[0]
    d, r = A.shape
    X = np.empty((n, d))
    logw = np.empty(n)
    R = np.empty(r)
    for s in range(n):
        for q in range(r):
            R[q] = 0.0
        lw = 0.0
        for k in range(d):
            c = 0.0
            for q in range(r):
                c += A[k, q] * R[q]
            c /= Ld[k]
            t = lt[k] - mu[k] - c
            e, lq = tail_draw(t, U[s, k], Zn[s, k])
            z = mu[k] + e
            X[s, k] = Ld[k] * (z + c)
            lw += lq + 0.5 * mu[k] * mu[k] - mu[k] * z
            for q in range(r):
                R[q] += G[k, q] * z
        logw[s] = lw
    return X, logw


@nb.njit(cache=True)
def gibbs_tmvn(Q, lower, x0, n, burn, seed):
    """Systematic-scan Gibbs for N(0, Q^{-1}) truncated below ``lower``."""
    np.random.seed(seed)
    d = Q.shape[0]
    x = x0.copy()
    out = np.empty((n, d))
    for it in range(burn + n):
        for k in range(d):
            acc = 0.0
            for j in range(d):
                if j != k:
                    acc += Q[k, j] * x[j]
            sd = 1.0 / math.sqrt(Q[k, k])
            m = -acc / Q[k, k]
            z = trandn_lower((lower[k] - m) / sd)
            x[k] = max(m + sd * z, lower[k])
        if it >= burn:
            out[it - burn] = x
    return out
