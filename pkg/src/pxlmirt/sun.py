"""Unified skew-normal posteriors of latent factors under probit-type items.

For binary items the posterior of a respondent's factor vector is
SUN(xi, Omega, Delta, gamma, Gamma) with

    D1 = diag(2y-1) B,  D2 = diag(2y-1) d,  S = diag(sqrt(D1_j' Omega D1_j + 1)),
    Delta = Omega_bar omega D1' S^-1,  gamma = S^-1 (D1 xi + D2),
    Gamma = S^-1 (D1 Omega D1' + I) S^-1,

and a draw is ``xi + omega (V0 + Delta Gamma^-1 V1)`` with V0 Gaussian and V1
a lower-truncated normal (see `tmvn`).  Mixed data reuses the construction
after three changes: continuous items condition the Gaussian prior
first; ordinal responses in the end categories behave like binary rows
with a sign flip; interior ordinal responses contribute two rows (B, -B)
whose noise block is the singular [[1, -1], [-1, 1]] (the CDF difference
Phi(b) - Phi(a) written as a bivariate normal CDF).

The sampler never forms J x J inverses.  With ``Ibar`` the block-diagonal
noise matrix (jittered on ordinal blocks), the combination step reduces
via the push-through identity to K-dimensional algebra:

    omega Delta Gamma^-1 V1 = P Dbar' Ibar^-1 S V1,
    omega V0 ~ N(0, P),  P = (Omega^-1 + Dbar' Ibar^-1 Dbar)^-1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from ._normal import log_cdf_diff
from .errors import DataError, NumericError, ParameterError
from .model import ItemKind, ModelParams
from .tmvn import SampleReport, TruncationSpec, sample_tmvn, solve_tilting

__all__ = ["SunParams", "MixedBlocks", "binary_sun_params", "mixed_sun_params", "sample_sun",
           "score_factors", "cdf_difference", "cdf_difference_2d", "ORDINAL_JITTER"]

ORDINAL_JITTER = 1e-6


@dataclass(frozen=True, eq=False)
class MixedBlocks:
    """Stacked skew rows and the Gaussian-conditioned prior.

    Rows of ``d_bar`` are ordered binary, then end-category ordinal, then
    interior ordinal pairs; ``pairs`` lists the first row of each pair.
    """

    d_bar: np.ndarray
    v_bar: np.ndarray
    pairs: np.ndarray
    xi_post: np.ndarray
    omega_post: np.ndarray

    @property
    def i_bar(self) -> np.ndarray:
        n = self.d_bar.shape[0]
        I = np.eye(n)
        for a in self.pairs:
            I[a, a + 1] = I[a + 1, a] = -1.0
        return I


@dataclass(frozen=True, eq=False)
class SunParams:
    """SUN_{K,J} parameters.  ``gamma_mat`` is assembled on demand."""

    xi: np.ndarray
    omega_mat: np.ndarray
    delta: np.ndarray
    gamma_vec: np.ndarray
    blocks: MixedBlocks | None = field(default=None, repr=False)
    s_diag: np.ndarray | None = field(default=None, repr=False)
    _gamma_mat: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self):
        return self.xi.size

    @property
    def n_skew(self):
        return self.gamma_vec.size

    @property
    def gamma_mat(self) -> np.ndarray:
        if self._gamma_mat is not None:
            return self._gamma_mat
        b, s = self.blocks, self.s_diag
        G = (b.d_bar @ b.omega_post @ b.d_bar.T + b.i_bar) / np.outer(s, s)
        G[np.diag_indices_from(G)] = 1.0
        return G

    @classmethod
    def from_arrays(cls, xi, omega_mat, delta, gamma_vec, gamma_mat) -> "SunParams":
        """Generic parameters without the probit structure (dense sampling path)."""
        xi = np.asarray(xi, float).ravel()
        gm = np.asarray(gamma_mat, float)
        return cls(xi, np.asarray(omega_mat, float), np.asarray(delta, float).reshape(xi.size, -1),
                   np.asarray(gamma_vec, float).ravel(), None, None, gm)


def _check_prior(K, prior_mean, prior_cov):
    xi = np.zeros(K) if prior_mean is None else np.asarray(prior_mean, float).ravel()
    Om = np.eye(K) if prior_cov is None else np.asarray(prior_cov, float)
    if xi.shape != (K,) or Om.shape != (K, K):
        raise ParameterError("prior mean/covariance do not match the factor dimension")
    if np.max(np.abs(Om - Om.T), initial=0.0) > 1e-12:
        raise ParameterError("prior covariance must be symmetric")
    try:
        np.linalg.cholesky(Om)
    except np.linalg.LinAlgError:
        raise ParameterError("prior covariance must be positive definite") from None
    return xi, Om


def _assemble(blocks: MixedBlocks) -> SunParams:
    dbar, Om, xi = blocks.d_bar, blocks.omega_post, blocks.xi_post
    w = np.sqrt(np.diag(Om))
    s = np.sqrt(np.einsum("jk,kl,jl->j", dbar, Om, dbar) + 1.0)
    # Omega_bar omega = Omega omega^-1
    delta = (Om / w[None, :]).T @ (dbar / s[:, None]).T
    gam = (dbar @ xi + blocks.v_bar) / s
    return SunParams(xi, Om, delta, gam, blocks, s)


def binary_sun_params(B, D, y, prior_mean=None, prior_cov=None) -> SunParams:
    """Posterior SUN parameters for one respondent's binary responses ``y``."""
    B = np.atleast_2d(np.asarray(B, float))
    D = np.asarray(D, float).ravel()
    y = np.asarray(y, float).ravel()
    J, K = B.shape
    if D.shape != (J,) or y.shape != (J,):
        raise ParameterError("B, D and y disagree on the number of items")
    if np.any((y != 0) & (y != 1)):
        raise DataError("binary responses must be 0 or 1")
    xi, Om = _check_prior(K, prior_mean, prior_cov)
    sg = 2.0 * y - 1.0
    blocks = MixedBlocks(sg[:, None] * B, sg * D, np.zeros(0, dtype=int), xi, Om)
    return _assemble(blocks)


def mixed_sun_params(B, D, sigma2, y, kinds, prior_mean=None, prior_cov=None) -> SunParams:
    """Posterior SUN parameters for a mixed binary/ordinal/continuous row.

    ``D`` holds per-item intercepts (a float, or the threshold array of an
    ordinal item); for a continuous item the float is its mean.  ``sigma2``
    gives residual variances, read only at continuous items.
    """
    B = np.atleast_2d(np.asarray(B, float))
    J, K = B.shape
    y = np.asarray(y, float).ravel()
    kinds = list(kinds)
    if len(kinds) != J or y.shape != (J,) or len(D) != J:
        raise ParameterError("B, D, y and kinds disagree on the number of items")
    sigma2 = np.full(J, np.nan) if sigma2 is None else np.asarray(sigma2, float).ravel()
    xi, Om = _check_prior(K, prior_mean, prior_cov)

    cont = [j for j, k in enumerate(kinds) if k.is_continuous]
    if cont:
        s2 = sigma2[cont]
        if not np.all(s2 > 0):
            raise ParameterError("continuous residual variances must be positive")
        Bc = B[cont]
        resid = y[cont] - np.array([float(D[j]) for j in cont])
        Oinv = np.linalg.inv(Om)
        prec = Bc.T @ (Bc / s2[:, None]) + Oinv
        cf = cho_factor(prec, lower=True)
        Om_post = cho_solve(cf, np.eye(K))
        Om_post = 0.5 * (Om_post + Om_post.T)
        xi_post = cho_solve(cf, Bc.T @ (resid / s2) + Oinv @ xi)
    else:
        Om_post, xi_post = Om, xi

    rows_b, v_b, rows_o2, v_o2, rows_o1, v_o1 = [], [], [], [], [], []
    for j, kind in enumerate(kinds):
        if kind.is_binary:
            if y[j] not in (0.0, 1.0):
                raise DataError(f"binary response must be 0 or 1, got {y[j]}", col=j + 1)
            sg = 2.0 * y[j] - 1.0
            rows_b.append(sg * B[j])
            v_b.append(sg * float(D[j]))
        elif kind.is_ordinal:
            lev = y[j]
            L = kind.levels
            th = np.asarray(D[j], float)
            if lev != round(lev) or not 0 <= lev <= L:
                raise DataError(f"ordinal response must be in 0..{L}, got {lev}", col=j + 1)
            if th.shape != (L,):
                raise ParameterError(f"item {j + 1}: expected {L} thresholds")
            lev = int(lev)
            if lev == 0:
                rows_o2.append(B[j])
                v_o2.append(th[0])
            elif lev == L:
                rows_o2.append(-B[j])
                v_o2.append(-th[L - 1])
            else:
                rows_o1 += [B[j], -B[j]]
                v_o1 += [th[lev], -th[lev - 1]]
    rows = rows_b + rows_o2 + rows_o1
    dbar = np.array(rows, float).reshape(len(rows), K)
    vbar = np.array(v_b + v_o2 + v_o1, float)
    start = len(rows_b) + len(rows_o2)
    pairs = np.arange(start, len(rows), 2, dtype=int)
    return _assemble(MixedBlocks(dbar, vbar, pairs, xi_post, Om_post))


# ------------------------------------------------------------- sampling

def _pair_weighted(blocks: MixedBlocks, U, eps):
    """Rows of Ibar^-1 applied to the columns of U (n_skew x m)."""
    out = U.copy()
    p = blocks.pairs
    if p.size:
        ua, ub = U[p], U[p + 1]
        den = eps * (2.0 + eps)
        out[p] = ((1 + eps) * ua + ub) / den
        out[p + 1] = (ua + (1 + eps) * ub) / den
    return out


def _structured_spec(params: SunParams, eps):
    b, s = params.blocks, params.s_diag
    n = s.size
    Lo = np.linalg.cholesky(b.omega_post)
    W = (b.d_bar @ Lo) / s[:, None]
    delta = np.ones(n)
    p = b.pairs
    if p.size:
        delta[p] = delta[p + 1] = eps
        Wp = np.zeros((n, p.size))
        Wp[p, np.arange(p.size)] = 1.0
        Wp[p + 1, np.arange(p.size)] = -1.0
        W = np.hstack([W, Wp / s[:, None]])
    delta = delta / s**2
    lower = -params.gamma_vec
    if W.shape[1] <= n // 2:
        return TruncationSpec.from_factor(delta, W, lower)
    return TruncationSpec(np.diag(delta) + W @ W.T, lower)


def sample_sun(params: SunParams, m: int, rng: np.random.Generator, return_report: bool = False,
               eps: float = ORDINAL_JITTER):
    """Draw ``m`` samples (rows) from the SUN posterior ``params``."""
    if m < 1:
        raise ParameterError("sample count must be at least 1")
    K = params.dim
    if params.n_skew == 0:
        Lo = np.linalg.cholesky(params.omega_mat)
        out = params.xi + rng.standard_normal((m, K)) @ Lo.T
        return (out, SampleReport(m, m)) if return_report else out
    if params.blocks is None:
        return _sample_generic(params, m, rng, return_report)
    b, s = params.blocks, params.s_diag
    spec = _structured_spec(params, eps)
    V1, rep = sample_tmvn(spec, m, rng, return_report=True)
    # P = (Omega^-1 + Dbar' Ibar^-1 Dbar)^-1
    Dw = _pair_weighted(b, b.d_bar, eps)
    prec = np.linalg.inv(b.omega_post) + b.d_bar.T @ Dw
    try:
        cf = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        raise NumericError("posterior precision is not positive definite") from None
    U = _pair_weighted(b, (V1 * s).T, eps)            # n_skew x m
    rhs = b.d_bar.T @ U                               # K x m
    mean_part = cho_solve((cf, True), rhs)
    z = rng.standard_normal((K, m))
    v0 = solve_triangular(cf.T, z, lower=False)       # covariance prec^-1
    out = (b.xi_post[:, None] + v0 + mean_part).T
    return (out, rep) if return_report else out


def _sample_generic(params: SunParams, m, rng, return_report):
    K = params.dim
    Om = params.omega_mat
    w = np.sqrt(np.diag(Om))
    G = params.gamma_mat
    try:
        cf = cho_factor(G, lower=True)
    except np.linalg.LinAlgError:
        G = G + 1e-8 * np.eye(G.shape[0])
        cf = cho_factor(G, lower=True)
    DGi = cho_solve(cf, params.delta.T).T             # Delta Gamma^-1
    Obar = Om / np.outer(w, w)
    C0 = Obar - DGi @ params.delta.T
    C0 = 0.5 * (C0 + C0.T)
    ev = np.linalg.eigvalsh(C0)
    if ev[0] < -1e-8:
        raise NumericError("SUN Gaussian component covariance is not PSD")
    C0 = C0 + max(0.0, -ev[0]) * np.eye(K) + 1e-14 * np.eye(K)
    V0 = rng.standard_normal((m, K)) @ np.linalg.cholesky(C0).T
    V1, rep = sample_tmvn(TruncationSpec(0.5 * (G + G.T), -params.gamma_vec), m, rng, return_report=True)
    out = params.xi + (V0 + V1 @ DGi.T) * w
    return (out, rep) if return_report else out


def score_factors(params: ModelParams, y, kinds, m: int = 500, rng: np.random.Generator | None = None):
    """Posterior mean and sd of one respondent's factors from ``m`` SUN draws."""
    rng = np.random.default_rng() if rng is None else rng
    sp = mixed_sun_params(params.loading, params.intercepts, params.resid_var, y, kinds)
    th = sample_sun(sp, m, rng)
    return th.mean(axis=0), th.std(axis=0, ddof=1) if m > 1 else np.zeros(th.shape[1])


# -------------------------------------------------------- CDF identity

def cdf_difference(a, b):
    """Phi(b) - Phi(a) for b >= a."""
    a, b = float(a), float(b)
    if b < a:
        raise ParameterError("cdf_difference needs b >= a")
    if a == b:
        return 0.0
    return float(np.exp(log_cdf_diff(a, b)))


def cdf_difference_2d(a, b):
    """Phi(b) - Phi(a) evaluated as P(Z1 <= b, Z2 <= -a) for the singular
    bivariate normal with covariance [[1, -1], [-1, 1]].

    The covariance is v v' with v = (1, -1), so (Z1, Z2) = v e with e
    standard normal; the event is an interval for e, and its probability is
    integrated from the density directly (no use of the normal CDF).
    """
    a, b = float(a), float(b)
    if b < a:
        raise ParameterError("cdf_difference needs b >= a")
    v = np.array([1.0, -1.0])
    x = np.array([b, -a])
    lo, hi = -np.inf, np.inf
    for vi, xi in zip(v, x):
        if vi > 0:
            hi = min(hi, xi / vi)
        else:
            lo = max(lo, xi / vi)
    if hi <= lo:
        return 0.0
    dens = lambda e: np.exp(-0.5 * e * e) / np.sqrt(2 * np.pi)
    # split at 0 so quad sees the peak on an endpoint
    parts = [(lo, min(hi, 0.0)), (max(lo, 0.0), hi)]
    total = 0.0
    for l, h in parts:
        if h > l:
            total += integrate.quad(dens, l, h, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    return total
