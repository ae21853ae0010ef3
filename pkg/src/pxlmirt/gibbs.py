"""Logit-link MIRT Gibbs sampler with Polya-Gamma augmentation.

Model: P(y_ij = 1) = logistic(B_j'theta_i + d_j), theta_i ~ N(0, I),
d_j ~ N(0, 1), and an adaptive spike-and-slab Gaussian prior on loadings

    B_jk | gamma, tau2 ~ N(0, gamma_jk tau2_jk),   gamma_jk in {v0, 1},
    P(gamma_jk = 1) = p,  tau2_jk ~ IG(a1, a2),  p ~ U(0, 1).

Given w_ij ~ PG(1, eta_ij) the likelihood is Gaussian in every linear
parameter with kappa = y - 1/2, so theta, d and B have normal full
conditionals.  This is a comparison baseline; it targets a different
link from the EM.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numba as nb
import numpy as np

from .errors import ConfigError, NumericError, ParameterError
from .model import ResponseMatrix

__all__ = ["sample_pg", "sample_pg_array", "pg_mean", "GibbsState", "GibbsHyper", "GibbsResult",
           "init_state", "draw_theta", "draw_intercepts", "draw_loadings", "draw_indicators",
           "draw_tau2", "draw_proportion", "gibbs_sweep", "run_gibbs", "support", "write_chain_csv", "PG_TRUNC"]

PG_TRUNC = 0.64
_PI2_8 = math.pi ** 2 / 8.0


# ------------------------------------------------------- Polya-Gamma draws

@nb.njit(cache=True)
def _pnorm(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


@nb.njit(cache=True)
def _a_coef(n, x):
    # n-th term of the alternating series for the J*(1, z) density
    k = (n + 0.5) * math.pi
    if x > PG_TRUNC:
        return k * math.exp(-0.5 * k * k * x)
    if x <= 0.0:
        return 0.0
    return math.exp(-1.5 * (math.log(0.5 * math.pi) + math.log(x)) + math.log(k)
                    - 2.0 * (n + 0.5) ** 2 / x)


@nb.njit(cache=True)
def _mass_texpon(z):
    t = PG_TRUNC
    fz = _PI2_8 + 0.5 * z * z
    b = math.sqrt(1.0 / t) * (t * z - 1.0)
    a = -math.sqrt(1.0 / t) * (t * z + 1.0)
    x0 = math.log(fz) + fz * t
    xb = x0 - z + math.log(max(_pnorm(b), 1e-300))
    xa = x0 + z + math.log(max(_pnorm(a), 1e-300))
    qdivp = 4.0 / math.pi * (math.exp(xb) + math.exp(xa))
    return 1.0 / (1.0 + qdivp)


@nb.njit(cache=True)
def _rtigauss(z):
    # inverse Gaussian IG(mu = 1/z, 1) truncated to (0, PG_TRUNC)
    t = PG_TRUNC
    x = t + 1.0
    if z == 0.0 or 1.0 / z > t:
        alpha = 0.0
        while np.random.random() > alpha:
            e1 = -math.log(np.random.random())
            e2 = -math.log(np.random.random())
            while e1 * e1 > 2.0 * e2 / t:
                e1 = -math.log(np.random.random())
                e2 = -math.log(np.random.random())
            x = t / (1.0 + t * e1) ** 2
            alpha = math.exp(-0.5 * z * z * x)
    else:
        mu = 1.0 / z
        while x > t:
            y = np.random.standard_normal()
            y = y * y
            x = mu + 0.5 * mu * mu * y - 0.5 * mu * math.sqrt(4.0 * mu * y + (mu * y) ** 2)
            if np.random.random() > mu / (mu + x):
                x = mu * mu / x
    return x


@nb.njit(cache=True)
def _pg1(c):
    z = 0.5 * abs(c)
    fz = _PI2_8 + 0.5 * z * z
    while True:
        if np.random.random() < _mass_texpon(z):
            x = PG_TRUNC + (-math.log(np.random.random())) / fz
        else:
            x = _rtigauss(z)
        s = _a_coef(0, x)
        y = np.random.random() * s
        n = 0
        while True:
            n += 1
            if n % 2 == 1:
                s -= _a_coef(n, x)
                if y <= s:
                    return 0.25 * x
            else:
                s += _a_coef(n, x)
                if y > s:
                    break


@nb.njit(cache=True)
def _pg_array(c, seed):
    np.random.seed(seed)
    out = np.empty(c.size)
    for i in range(c.size):
        out[i] = _pg1(c[i])
    return out


def _seed(rng):
    return int(rng.integers(0, 2**31 - 1))


def sample_pg_array(c, rng: np.random.Generator):
    """Independent PG(1, c_i) draws, same shape as ``c``."""
    c = np.asarray(c, float)
    return _pg_array(np.ascontiguousarray(c.ravel()), _seed(rng)).reshape(c.shape)


def sample_pg(c: float, rng: np.random.Generator) -> float:
    """One exact PG(1, c) draw (alternating-series rejection sampler)."""
    return float(sample_pg_array(np.array([c], float), rng)[0])


def pg_mean(c):
    """E[PG(1, c)] = tanh(c/2) / (2c), with limit 1/4 at 0."""
    c = np.asarray(c, float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(np.abs(c) < 1e-8, 0.25 - c * c / 48.0, np.tanh(c / 2) / (2 * c))


# ------------------------------------------------------------ the sampler

@dataclass(frozen=True)
class GibbsHyper:
    v0: float = 0.01
    a1: float = 1.0
    a2: float = 1.0

    def __post_init__(self):
        if not (0 < self.v0 < 1 and self.a1 > 0 and self.a2 > 0):
            raise ParameterError("need 0 < v0 < 1 and positive inverse-gamma parameters")


@dataclass
class GibbsState:
    theta: np.ndarray       # N x K
    B: np.ndarray           # J x K
    D: np.ndarray           # J
    omega_pg: np.ndarray    # N x J
    gamma_ss: np.ndarray    # J x K, values in {v0, 1}
    tau2: np.ndarray        # J x K
    theta_prop: float
    free: np.ndarray | None = None    # J x K mask of unpinned loadings

    def copy(self) -> "GibbsState":
        return GibbsState(self.theta.copy(), self.B.copy(), self.D.copy(), self.omega_pg.copy(),
                          self.gamma_ss.copy(), self.tau2.copy(), float(self.theta_prop),
                          None if self.free is None else self.free.copy())

    def check(self, v0):
        if np.any(self.omega_pg <= 0) or np.any(self.tau2 <= 0):
            raise NumericError("Gibbs state has non-positive PG or variance entries")
        if not np.all(np.isin(self.gamma_ss, (v0, 1.0))):
            raise NumericError("spike-and-slab indicators must be v0 or 1")


def _lower_mask(J, K):
    free = np.ones((J, K), dtype=bool)
    for j in range(min(J, K)):
        free[j, j + 1:] = False
    return free


def init_state(n_obs, n_items, k, hyper: GibbsHyper = GibbsHyper(), rng=None,
               lower_triangular: bool = True) -> GibbsState:
    rng = np.random.default_rng() if rng is None else rng
    free = _lower_mask(n_items, k) if lower_triangular else np.ones((n_items, k), dtype=bool)
    B = np.where(free, rng.normal(0.0, 0.1, (n_items, k)), 0.0)
    return GibbsState(rng.standard_normal((n_obs, k)), B, np.zeros(n_items),
                      np.full((n_obs, n_items), 0.25), np.ones((n_items, k)), np.ones((n_items, k)),
                      0.5, free)


def _binary_values(data):
    Y = data.values if isinstance(data, ResponseMatrix) else np.asarray(data, float)
    if np.any((Y != 0) & (Y != 1)):
        raise ParameterError("the Gibbs baseline handles binary items only")
    return Y


def draw_theta(B, D, W, kap, rng):
    """theta_i | . ~ N(Sig B'(kappa_i - W_i d), Sig) with Sig = (B'W_iB + I)^-1."""
    N, K = W.shape[0], B.shape[1]
    prec = np.einsum("jk,ij,jl->ikl", B, W, B) + np.eye(K)
    rhs = (kap - W * D) @ B
    Lc = np.linalg.cholesky(prec)
    mu = np.linalg.solve(prec, rhs[..., None])[..., 0]
    z = rng.standard_normal((N, K))
    return mu + np.linalg.solve(np.swapaxes(Lc, 1, 2), z[..., None])[..., 0]


def draw_intercepts(eta0, W, kap, rng):
    """d_j | . under the N(0, 1) intercept prior; ``eta0`` excludes d."""
    pd = W.sum(axis=0) + 1.0
    md = (kap - W * eta0).sum(axis=0) / pd
    return md + rng.standard_normal(md.size) / np.sqrt(pd)


def draw_loadings(theta, B, D, W, kap, prior_var, free, rng):
    """Column-by-column update of B, vectorised over items."""
    B = B.copy()
    eta = theta @ B.T + D
    for k in range(B.shape[1]):
        th = theta[:, k]
        part = eta - np.outer(th, B[:, k])             # predictor without column k
        pb = (W * th[:, None] ** 2).sum(axis=0) + 1.0 / prior_var[:, k]
        mb = (th[:, None] * (kap - W * part)).sum(axis=0) / pb
        bk = mb + rng.standard_normal(B.shape[0]) / np.sqrt(pb)
        bk = np.where(free[:, k], bk, 0.0)
        B[:, k] = bk
        eta = part + np.outer(th, bk)
    return B, eta


def draw_indicators(B, tau2, theta_prop, v0, rng):
    """gamma_jk in {v0, 1}: N(B; 0, tau2) slab against N(B; 0, v0 tau2) spike."""
    l1 = np.log(theta_prop) - 0.5 * np.log(tau2) - B ** 2 / (2 * tau2)
    l0 = np.log1p(-theta_prop) - 0.5 * np.log(v0 * tau2) - B ** 2 / (2 * v0 * tau2)
    p1 = 1.0 / (1.0 + np.exp(l0 - l1))
    return np.where(rng.random(B.shape) < p1, 1.0, v0)


def draw_tau2(B, gamma_ss, a1, a2, rng):
    """tau2 | . ~ InverseGamma(a1 + 1/2, B^2 / (2 gamma) + a2)."""
    rate = B ** 2 / (2 * gamma_ss) + a2
    return rate / rng.gamma(a1 + 0.5, 1.0, size=B.shape)


def draw_proportion(gamma_ss, free, rng):
    """Slab proportion | . ~ Beta(#slab + 1, #spike + 1) over the free entries."""
    n1 = int(np.sum((gamma_ss == 1.0) & free))
    return float(rng.beta(n1 + 1, int(free.sum()) - n1 + 1))


def gibbs_sweep(state: GibbsState, data, hyper: GibbsHyper, rng: np.random.Generator) -> GibbsState:
    """One systematic scan: theta, D, B, gamma, tau2, proportion, then omega."""
    Y = _binary_values(data)
    s = state.copy()
    J, K = s.B.shape
    kap = Y - 0.5
    W = s.omega_pg
    free = np.ones((J, K), bool) if s.free is None else s.free
    step = "theta"
    try:
        s.theta = draw_theta(s.B, s.D, W, kap, rng)
        step = "D"
        s.D = draw_intercepts(s.theta @ s.B.T, W, kap, rng)
        step = "B"
        s.B, eta = draw_loadings(s.theta, s.B, s.D, W, kap, s.gamma_ss * s.tau2, free, rng)
        step = "gamma"
        s.gamma_ss = np.where(free, draw_indicators(s.B, s.tau2, s.theta_prop, hyper.v0, rng), s.gamma_ss)
        step = "tau2"
        s.tau2 = np.where(free, draw_tau2(s.B, s.gamma_ss, hyper.a1, hyper.a2, rng), s.tau2)
        step = "theta_prop"
        s.theta_prop = draw_proportion(s.gamma_ss, free, rng)
        step = "omega"
        s.omega_pg = sample_pg_array(eta, rng)
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        raise NumericError(f"Gibbs {step} update failed: {exc}") from exc
    if not np.all(np.isfinite(s.B)) or not np.all(np.isfinite(s.theta)):
        raise NumericError(f"Gibbs {step} update produced non-finite values")
    return s


@dataclass
class GibbsResult:
    B_mean: np.ndarray
    D_mean: np.ndarray
    gamma_mean: np.ndarray
    n_retained: int
    chain: list = field(default_factory=list)     # flattened (B, D) per retained sweep
    final_state: GibbsState | None = None


def support(B, threshold: float = 0.1):
    """Entries with |B| above the cutoff."""
    return np.abs(np.asarray(B)) > threshold


def run_gibbs(data, k: int, iters: int, burn_in: int, thin: int = 1, lower_triangular: bool = True,
              hyper: GibbsHyper = GibbsHyper(), rng: np.random.Generator | None = None,
              keep_chain: bool = False, callback=None) -> GibbsResult:
    """Posterior means of B and D over the retained sweeps."""
    if iters <= burn_in:
        raise ConfigError("iters must exceed burn_in")
    if thin < 1:
        raise ConfigError("thin must be at least 1")
    rng = np.random.default_rng() if rng is None else rng
    Y = _binary_values(data)
    N, J = Y.shape
    st = init_state(N, J, k, hyper, rng, lower_triangular)
    sB = np.zeros((J, k))
    sD = np.zeros(J)
    sG = np.zeros((J, k))
    n = 0
    chain = []
    for it in range(iters):
        st = gibbs_sweep(st, Y, hyper, rng)
        if it >= burn_in and (it - burn_in) % thin == 0:
            sB += st.B
            sD += st.D
            sG += st.gamma_ss == 1.0
            n += 1
            if keep_chain:
                chain.append(np.concatenate([st.B.ravel(), st.D]))
        if callback is not None:
            callback(it + 1)
    return GibbsResult(sB / n, sD / n, sG / n, n, chain, st)


def write_chain_csv(path, result: GibbsResult, n_items: int, k: int):
    cols = [f"B_{j + 1}_{c + 1}" for j in range(n_items) for c in range(k)]
    cols += [f"D_{j + 1}" for j in range(n_items)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sweep"] + cols)
        for i, row in enumerate(result.chain):
            w.writerow([i + 1] + [repr(float(x)) for x in row])
