"""PXL-EM for sparse probit-type MIRT, and the lambda0 ladder around it.

One iteration:

1. E-step: M draws per respondent from the exact SUN posterior of the
   factors given the current loadings; inclusion expectations <gamma_jk>
   from the spike-and-slab mixture at the current loadings.
2. M-step: one penalized regression per item on the pooled draws, then
   the isotonic IBP-weight update; columns are sorted by total inclusion.
3. Expansion: A = mean(theta theta'), loadings rotated by chol(A).

The loadings reported at the end of a rung are the M-step output, which
carries the exact zeros of the L1 fits; the rotated copy only feeds the
next E-step.

Randomness: observation i at iteration t of rung r draws from its own
stream ``SeedSequence(seed, spawn_key=(r, t, i))``, so results do not
depend on the number of worker threads.
"""
from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import ndtri

from .errors import NumericError, ParameterError, PxlError
from .model import (FitResult, ModelParams, PriorConfig, ResponseMatrix, RungRecord,
                    effective_dimension, log_laplace_density, validate)
from .solvers import (SolverWarning, fit_penalized_linear, fit_penalized_ordered_probit,
                      fit_penalized_probit, ibp_objective, optimize_ibp_weights,
                      ordered_probit_objective, penalty_weights, probit_objective, px_rotation,
                      update_sigma)
from .sun import binary_sun_params, mixed_sun_params, sample_sun

__all__ = ["LatentDraws", "LadderConfig", "FitPath", "MStep", "gamma_expectation", "e_step",
           "m_step", "run_pxl_em", "dynamic_posterior_exploration", "default_init",
           "surrogate_objective"]


@dataclass
class LatentDraws:
    """E-step output: ``samples`` has shape (N, M, K)."""

    samples: np.ndarray
    iteration: int = 0
    n_fallback: int = 0
    min_accept: float = float("nan")

    @property
    def n_draws(self):
        return self.samples.shape[1]

    @property
    def pooled(self):
        N, M, K = self.samples.shape
        return self.samples.reshape(N * M, K)

    @property
    def second_moment(self):
        T = self.pooled
        return T.T @ T / T.shape[0]

    def permuted(self, order) -> "LatentDraws":
        return LatentDraws(self.samples[..., order], self.iteration, self.n_fallback, self.min_accept)


@dataclass(frozen=True)
class LadderConfig:
    lambda1: float = 0.5
    lambda0s: tuple = (0.5, 1.0, 3.0, 6.0, 10.0, 20.0, 30.0, 40.0)
    tol: float = 0.06
    max_iter: int = 100

    def __post_init__(self):
        lad = tuple(float(x) for x in self.lambda0s)
        if not lad:
            raise ParameterError("ladder is empty")
        if any(b <= a for a, b in zip(lad, lad[1:])):
            raise ParameterError("lambda0 ladder must be strictly increasing")
        if lad[0] < self.lambda1:
            raise ParameterError("lambda0 values must be at least lambda1")
        if not self.tol > 0 or self.max_iter < 1:
            raise ParameterError("ladder needs tol > 0 and max_iter >= 1")
        object.__setattr__(self, "lambda0s", lad)

    @classmethod
    def from_prior(cls, prior: PriorConfig, tol=0.06, max_iter=100) -> "LadderConfig":
        return cls(prior.lambda1, prior.lambda0_ladder, tol, max_iter)


class FitPath(list):
    """Per-rung `FitResult` objects in ladder order."""

    error: str | None = None

    @property
    def final(self) -> FitResult:
        return self[-1]

    @property
    def records(self):
        return [r.trace[-1] for r in self]

    @property
    def stabilized_at(self):
        for i, r in enumerate(self.records):
            if r.stabilized:
                return i
        return None


def gamma_expectation(B, C, lambda0, lambda1):
    """<gamma_jk> = c psi(B|l1) / (c psi(B|l1) + (1-c) psi(B|l0)), elementwise."""
    B = np.asarray(B, float)
    C = np.asarray(C, float)
    a = np.log(C) + log_laplace_density(B, lambda1)
    b = np.log1p(-C) + log_laplace_density(B, lambda0)
    return 1.0 / (1.0 + np.exp(b - a))


def default_init(data: ResponseMatrix, k_star: int, rng: np.random.Generator) -> ModelParams:
    """Loadings U(-0.02, 0.02), C_k = 0.9^k, zero binary intercepts.

    Ordinal thresholds start at the normal quantiles of the cumulative
    level proportions; continuous items at their sample mean and variance.
    """
    J = data.n_items
    B = rng.uniform(-0.02, 0.02, size=(J, k_star))
    ints, rv = [], np.full(J, np.nan)
    Y = data.values
    for j, kind in enumerate(data.kinds):
        if kind.is_binary:
            ints.append(0.0)
        elif kind.is_ordinal:
            L = kind.levels
            cnt = np.bincount(Y[:, j].astype(int), minlength=L + 1)
            cum = np.cumsum(cnt)[:-1] / Y.shape[0]
            d = ndtri(np.clip(cum, 0.01, 0.99))
            for l in range(1, L):
                d[l] = max(d[l], d[l - 1] + 1e-3)
            ints.append(d)
        else:
            ints.append(float(Y[:, j].mean()))
            rv[j] = max(float(Y[:, j].var()), 1e-6)
    C = 0.9 ** np.arange(1, k_star + 1)
    return ModelParams(B, tuple(ints), C, rv)


# ------------------------------------------------------------------ E-step

def _obs_stream(seed, key, i):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key) + (i,)))


def e_step(data: ResponseMatrix, params: ModelParams, M: int, seed: int, key=(0, 0),
           lambda0: float = 40.0, lambda1: float = 0.5, n_jobs: int = 1):
    """Posterior factor draws for every respondent, plus <gamma>.

    Items whose loading row is zero are left out of each posterior: they
    do not depend on the factors.
    """
    if M < 1:
        raise ParameterError("M must be at least 1")
    B = params.loading
    N, K = data.n_obs, B.shape[1]
    act = np.flatnonzero(np.any(B != 0, axis=1))
    Y = data.values
    binary = data.all_binary()
    if binary:
        Dv = params.intercept_vector()[act]
    kinds = [data.kinds[j] for j in act]
    ints = [params.intercepts[j] for j in act]
    rv = params.resid_var[act]
    Ba = np.ascontiguousarray(B[act])
    out = np.empty((N, M, K))
    stats = np.zeros((N, 2))

    def one(i):
        rng = _obs_stream(seed, key, i)
        try:
            if binary:
                sp = binary_sun_params(Ba, Dv, Y[i, act])
            else:
                sp = mixed_sun_params(Ba, ints, rv, Y[i, act], kinds)
            th, rep = sample_sun(sp, M, rng, return_report=True)
        except PxlError as exc:
            raise type(exc)(f"E-step failed at observation {i + 1}: {exc}") from exc
        out[i] = th
        stats[i] = (rep.fallback, rep.acceptance_rate)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as ex:
            list(ex.map(one, range(N)))
    else:
        for i in range(N):
            one(i)
    draws = LatentDraws(out, int(key[-1]) if len(key) else 0, int(stats[:, 0].sum()),
                        float(np.nanmin(stats[:, 1])) if N else float("nan"))
    gam = gamma_expectation(B, params.ibp_weights, lambda0, lambda1)
    return draws, gam


# ------------------------------------------------------------------ M-step

class MStep(NamedTuple):
    params: ModelParams     # columns already sorted by `order`
    order: np.ndarray
    notes: list


def _item_fit(j, kind, T, y_rep, w, params, prior, M, gram):
    Bj = params.loading[j]
    dj = params.intercepts[j]
    if kind.is_binary:
        r = fit_penalized_probit(T, y_rep, w, init=(Bj, dj), lambda_d=prior.lambda_intercept, n_copies=M)
        return r.beta, r.intercept, np.nan, r.note
    if kind.is_ordinal:
        r = fit_penalized_ordered_probit(T, y_rep, w, n_levels=kind.levels, init=(Bj, dj), n_copies=M)
        return r.beta, r.intercept, np.nan, r.note
    s2 = params.resid_var[j]
    r = fit_penalized_linear(T, y_rep, w, s2, init=(Bj, dj), n_copies=M,
                             intercept_penalty=prior.lambda_intercept, gram=gram)
    s2n = update_sigma(T, y_rep, r.beta, r.intercept, n_copies=M,
                       ig_shape=prior.ig_shape, ig_rate=prior.ig_rate)
    return r.beta, r.intercept, s2n, r.note


def m_step(draws: LatentDraws, data: ResponseMatrix, gamma_expect, prior: PriorConfig,
           params: ModelParams, lambda0: float, sort_columns: bool = True, n_jobs: int = 1) -> MStep:
    """Item-wise penalized fits on the pooled draws, then the IBP weights.

    ``params`` supplies warm starts (and residual variances for continuous
    items).  Columns of the output are sorted by decreasing total
    inclusion; the same order must be applied to the draws before the
    expansion step.
    """
    T = draws.pooled
    M = draws.n_draws
    J, K = params.loading.shape
    G = np.asarray(gamma_expect, float)
    W = penalty_weights(G, lambda0, prior.lambda1)
    cont = [j for j, k in enumerate(data.kinds) if k.is_continuous]
    gram = (T.T @ T, T.sum(axis=0)) if cont else None
    notes = []

    def fit(j):
        y_rep = np.repeat(data.values[:, j], M)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SolverWarning)
            return _item_fit(j, data.kinds[j], T, y_rep, W[j], params, prior, M, gram)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as ex:
            res = list(ex.map(fit, range(J)))
    else:
        res = [fit(j) for j in range(J)]
    Bn = np.array([r[0] for r in res]).reshape(J, K)
    ints = tuple(r[1] for r in res)
    rv = np.array([r[2] for r in res])
    for j, r in enumerate(res):
        if r[3]:
            notes.append(f"item {j + 1}: {r[3]}")
    order = np.argsort(-G.sum(axis=0), kind="stable") if sort_columns else np.arange(K)
    C = optimize_ibp_weights(G[:, order], prior.alpha)
    return MStep(ModelParams(Bn[:, order], ints, C, rv), order, notes)


def surrogate_objective(draws: LatentDraws, data: ResponseMatrix, gamma_expect, prior: PriorConfig,
                        params: ModelParams, lambda0: float) -> float:
    """Penalized complete-data objective maximised by `m_step` for fixed draws."""
    T = draws.pooled
    M = draws.n_draws
    W = penalty_weights(gamma_expect, lambda0, prior.lambda1)
    total = 0.0
    for j, kind in enumerate(data.kinds):
        y_rep = np.repeat(data.values[:, j], M)
        Bj, dj = params.loading[j], params.intercepts[j]
        if kind.is_binary:
            total += probit_objective(T, y_rep, Bj, dj, W[j], prior.lambda_intercept, M)
        elif kind.is_ordinal:
            total += ordered_probit_objective(T, y_rep, Bj, dj, W[j], M)
        else:
            s2 = params.resid_var[j]
            r = y_rep - dj - T @ Bj
            total += -(r @ r) / (2 * s2 * M) - np.sum(W[j] * np.abs(Bj)) - prior.lambda_intercept * abs(dj)
    return float(total + ibp_objective(params.ibp_weights, gamma_expect, prior.alpha))


# --------------------------------------------------------------- the loop

def _eff_dim(B, C, lambda0, lambda1):
    if lambda0 <= lambda1:
        nz = np.flatnonzero(np.any(B != 0, axis=0))
        return int(nz.size)
    return effective_dimension(B, C, np.full(B.shape[1], lambda0), lambda1)


def run_pxl_em(data: ResponseMatrix, prior: PriorConfig, init: ModelParams, lambda0: float,
               tol: float = 0.06, max_iter: int = 100, seed: int = 0, rung: int = 0,
               rotate: bool = True, n_jobs: int = 1, callback: Callable | None = None,
               elapsed0: float = 0.0) -> FitResult:
    """PXL-EM at one lambda0 until the max-abs loading change drops below ``tol``.

    With ``rotate=False`` this is the plain EM.  The iteration counter for
    the MC schedule starts at zero.
    """
    if init.loading.shape[0] != data.n_items:
        raise ParameterError("initial loadings do not match the item count")
    bad = validate(init, data)
    if bad:
        raise ParameterError("invalid initial parameters: " + "; ".join(bad))
    t0 = time.perf_counter()
    B_cur = np.array(init.loading)       # rotated iterate used by the E-step
    params = init
    reported = init
    history, notes = [], []
    converged = False
    change = np.inf
    n_fb = 0
    for t in range(max_iter):
        M = prior.mc_samples(t)
        draws, gam = e_step(data, params.replace(loading=B_cur), M, seed, (rung, t),
                            lambda0, prior.lambda1, n_jobs=n_jobs)
        n_fb += draws.n_fallback
        ms = m_step(draws, data, gam, prior, params.replace(loading=B_cur), lambda0, n_jobs=n_jobs)
        order = ms.order
        reported = ms.params
        if rotate:
            _, AL = px_rotation(draws.pooled[:, order])
            B_new = reported.loading @ AL
        else:
            B_new = np.array(reported.loading)
        change = float(np.max(np.abs(B_new - B_cur[:, order]))) if B_new.size else 0.0
        B_cur = B_new
        params = reported
        notes.extend(f"iteration {t + 1}: {n}" for n in ms.notes)
        elapsed = elapsed0 + time.perf_counter() - t0
        history.append({"iteration": t + 1, "max_change": change, "mc_samples": M,
                        "fallbacks": draws.n_fallback, "min_accept": draws.min_accept,
                        "elapsed": elapsed})
        if callback is not None:
            callback({"rung": rung, "lambda0": lambda0, "iteration": t + 1,
                      "max_change": change, "min_accept": draws.min_accept,
                      "elapsed": elapsed})
        if change < tol:
            converged = True
            break
    if n_fb:
        notes.append(f"{n_fb} posterior samples used the Gibbs fallback")
    G = gamma_expectation(reported.loading, reported.ibp_weights, lambda0, prior.lambda1)
    K_eff = _eff_dim(reported.loading, reported.ibp_weights, lambda0, prior.lambda1)
    wall = elapsed0 + time.perf_counter() - t0
    rec = RungRecord(lambda0, len(history), change, wall, converged, K_eff)
    res = FitResult(reported, G, K_eff, [rec], seed, converged, lambda0, history, notes)
    res.rotated_loading = B_cur
    return res


def dynamic_posterior_exploration(data: ResponseMatrix, prior: PriorConfig, ladder: LadderConfig,
                                  seed: int = 0, init: ModelParams | None = None, rotate: bool = True,
                                  n_jobs: int = 1, callback: Callable | None = None,
                                  evaluate: Callable | None = None) -> FitPath:
    """Refit along the lambda0 ladder, warm-starting each rung from the last.

    ``evaluate(params) -> dict`` (for instance loading MSE against a known
    truth) is stored in each rung's record.
    """
    if prior.lambda1 != ladder.lambda1:
        prior = PriorConfig(**{**prior.__dict__, "lambda1": ladder.lambda1})
    if init is None:
        init = default_init(data, prior.k_star, np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(999,))))
    path = FitPath()
    cur = init
    elapsed = 0.0
    for r, lam0 in enumerate(ladder.lambda0s):
        try:
            res = run_pxl_em(data, prior, cur, lam0, ladder.tol, ladder.max_iter, seed, r,
                             rotate=rotate, n_jobs=n_jobs, callback=callback, elapsed0=elapsed)
        except (PxlError, np.linalg.LinAlgError) as exc:
            path.error = f"rung {r + 1} (lambda0={lam0}): {exc}"
            break
        rec = res.trace[-1]
        elapsed = rec.wall_time
        if evaluate is not None:
            rec.metrics = dict(evaluate(res.params))
        if path:
            prev = path[-1].params.loading
            if np.max(np.abs(prev - res.params.loading), initial=0.0) < ladder.tol:
                path[-1].trace[-1].stabilized = True
        path.append(res)
        cur = res.params
    return path
