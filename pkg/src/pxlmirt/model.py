"""Domain types, prior densities and the effective-dimension rule.

Everything here is a small immutable value object.  Arrays stored on the
objects are flagged read-only after validation so instances can be shared
between threads without copying.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, ParameterError

__all__ = [
    "ItemKind", "BINARY", "CONTINUOUS", "ordinal",
    "ResponseMatrix", "ModelParams", "PriorConfig", "RungRecord", "FitResult",
    "laplace_density", "log_laplace_density", "selection_thresholds",
    "effective_dimension", "validate",
]


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ItemKind:
    """Response type of one item.

    ``tag`` is ``"binary"``, ``"ordinal"`` or ``"continuous"``.  For ordinal
    items ``levels`` is the largest response value L, so responses live in
    {0, ..., L} and the item carries L ordered thresholds.
    """

    tag: str
    levels: int = 0

    def __post_init__(self):
        if self.tag not in ("binary", "ordinal", "continuous"):
            raise ParameterError(f"unknown item kind {self.tag!r}")
        if self.tag == "ordinal":
            if int(self.levels) != self.levels or self.levels < 1:
                raise ParameterError(f"ordinal items need an integer top level >= 1, got {self.levels}")
        elif self.levels != 0:
            raise ParameterError(f"{self.tag} items take no level count")

    @property
    def is_binary(self):
        return self.tag == "binary"

    @property
    def is_ordinal(self):
        return self.tag == "ordinal"

    @property
    def is_continuous(self):
        return self.tag == "continuous"

    @property
    def n_thresholds(self):
        return self.levels if self.is_ordinal else 1

    def __str__(self):
        return f"ordinal:{self.levels}" if self.is_ordinal else self.tag

    @classmethod
    def parse(cls, text: str) -> "ItemKind":
        s = text.strip().lower()
        if s in ("binary", "continuous"):
            return cls(s)
        if s.startswith("ordinal:"):
            try:
                lev = int(s.split(":", 1)[1])
            except ValueError:
                raise ParameterError(f"bad ordinal kind {text!r}") from None
            return cls("ordinal", lev)
        raise ParameterError(f"unknown item kind {text!r}")


BINARY = ItemKind("binary")
CONTINUOUS = ItemKind("continuous")


def ordinal(levels: int) -> ItemKind:
    return ItemKind("ordinal", int(levels))


class ResponseMatrix:
    """N x J grid of observed responses with a kind per item.

    Construction validates every cell; a `DataError` names the first
    offending (row, column).  Missing values are rejected.
    """

    def __init__(self, values, kinds: Sequence[ItemKind], names: Sequence[str] | None = None):
        vals = np.array(values, dtype=float, copy=True)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2:
            raise DataError("responses must form a 2-D grid")
        kinds = tuple(kinds)
        if len(kinds) != vals.shape[1]:
            raise DataError(f"{len(kinds)} item kinds for {vals.shape[1]} columns")
        if names is None:
            names = [f"item{j + 1}" for j in range(vals.shape[1])]
        names = tuple(str(n) for n in names)
        if len(names) != vals.shape[1]:
            raise DataError(f"{len(names)} item names for {vals.shape[1]} columns")
        for j, kind in enumerate(kinds):
            col = vals[:, j]
            bad = ~np.isfinite(col)
            if kind.is_binary:
                bad |= (col != 0) & (col != 1)
                what = "binary cell must be 0 or 1"
            elif kind.is_ordinal:
                bad |= (col != np.round(col)) | (col < 0) | (col > kind.levels)
                what = f"ordinal cell must be an integer in 0..{kind.levels}"
            else:
                what = "continuous cell must be finite"
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise DataError(f"{what}, got {col[i]!r}", row=i + 1, col=names[j])
        vals.setflags(write=False)
        self.values = vals
        self.kinds = kinds
        self.names = names

    @property
    def n_obs(self):
        return self.values.shape[0]

    @property
    def n_items(self):
        return self.values.shape[1]

    @property
    def items(self):
        return list(zip(self.names, self.kinds))

    def all_binary(self):
        return all(k.is_binary for k in self.kinds)

    def subset_rows(self, rows) -> "ResponseMatrix":
        return ResponseMatrix(self.values[rows], self.kinds, self.names)

    def __repr__(self):
        return f"ResponseMatrix(n_obs={self.n_obs}, n_items={self.n_items})"


@dataclass(frozen=True)
class ModelParams:
    """Loadings, intercepts/thresholds, IBP weights and residual variances.

    ``intercepts`` holds one entry per item: a float for binary and
    continuous items, a 1-D array of L increasing thresholds for an ordinal
    item with top level L.  ``resid_var`` has one entry per item and is NaN
    for items that are not continuous.
    """

    loading: np.ndarray
    intercepts: tuple
    ibp_weights: np.ndarray
    resid_var: np.ndarray

    def __post_init__(self):
        B = _frozen(self.loading)
        if B.ndim != 2:
            raise ParameterError("loading must be a J x K matrix")
        ints = []
        for d in self.intercepts:
            if np.ndim(d) == 0:
                ints.append(float(d))
            else:
                ints.append(_frozen(d))
        C = _frozen(self.ibp_weights)
        rv = _frozen(self.resid_var) if self.resid_var is not None else _frozen(np.full(B.shape[0], np.nan))
        object.__setattr__(self, "loading", B)
        object.__setattr__(self, "intercepts", tuple(ints))
        object.__setattr__(self, "ibp_weights", C)
        object.__setattr__(self, "resid_var", rv)

    @property
    def n_items(self):
        return self.loading.shape[0]

    @property
    def n_factors(self):
        return self.loading.shape[1]

    def intercept_vector(self):
        """Scalar intercepts as an array (ordinal items give NaN)."""
        return np.array([d if np.ndim(d) == 0 else np.nan for d in self.intercepts])

    def replace(self, **kw) -> "ModelParams":
        base = dict(loading=self.loading, intercepts=self.intercepts,
                    ibp_weights=self.ibp_weights, resid_var=self.resid_var)
        base.update(kw)
        return ModelParams(**base)

    def to_dict(self):
        return {
            "loading": self.loading.tolist(),
            "intercepts": [d if np.ndim(d) == 0 else list(map(float, d)) for d in self.intercepts],
            "ibp_weights": self.ibp_weights.tolist(),
            "resid_var": [None if not np.isfinite(v) else float(v) for v in self.resid_var],
        }

    @classmethod
    def from_dict(cls, d) -> "ModelParams":
        rv = np.array([np.nan if v is None else v for v in d["resid_var"]], dtype=float)
        ints = tuple(x if np.ndim(x) == 0 else np.asarray(x, float) for x in d["intercepts"])
        return cls(np.asarray(d["loading"], float), ints, np.asarray(d["ibp_weights"], float), rv)


@dataclass(frozen=True)
class PriorConfig:
    """Spike-and-slab LASSO / IBP prior settings and the MC-size schedule.

    The MC schedule is ``mc_base + mc_step * t`` at iteration t (counted
    from zero within a ladder rung); set ``mc_step=0`` for a constant M.
    """

    lambda1: float = 0.5
    lambda0_ladder: tuple = (0.5, 1.0, 3.0, 6.0, 10.0, 20.0, 30.0, 40.0)
    alpha: float = 1.0
    k_star: int = 10
    mc_base: int = 50
    mc_step: int = 10
    ig_shape: float = 0.5
    ig_rate: float = 0.5
    intercept_lambda: float | None = None

    def __post_init__(self):
        if not self.lambda1 > 0:
            raise ParameterError("lambda1 must be positive")
        lad = tuple(float(x) for x in self.lambda0_ladder)
        if not lad:
            raise ParameterError("lambda0 ladder is empty")
        if any(b <= a for a, b in zip(lad, lad[1:])):
            raise ParameterError("lambda0 ladder must be strictly increasing")
        if lad[0] < self.lambda1:
            raise ParameterError("lambda0 values must be at least lambda1")
        object.__setattr__(self, "lambda0_ladder", lad)
        if not self.alpha > 0:
            raise ParameterError("IBP intensity alpha must be positive")
        if int(self.k_star) != self.k_star or self.k_star < 1:
            raise ParameterError("k_star must be a positive integer")
        if self.mc_base < 1 or self.mc_step < 0:
            raise ParameterError("MC schedule needs mc_base >= 1 and mc_step >= 0")
        if not (self.ig_shape > 0 and self.ig_rate > 0):
            raise ParameterError("inverse-gamma hyperparameters must be positive")
        if self.intercept_lambda is not None and self.intercept_lambda < 0:
            raise ParameterError("intercept penalty must be non-negative")

    @property
    def lambda_intercept(self):
        return self.lambda1 if self.intercept_lambda is None else float(self.intercept_lambda)

    def mc_samples(self, t: int) -> int:
        return int(self.mc_base + self.mc_step * t)


@dataclass
class RungRecord:
    lambda0: float
    iterations: int
    max_change: float
    wall_time: float
    converged: bool
    effective_dim: int
    metrics: dict = field(default_factory=dict)
    stabilized: bool = False


@dataclass
class FitResult:
    params: ModelParams
    gamma_expect: np.ndarray
    effective_dim: int
    trace: list
    seed: int
    converged: bool = True
    lambda0: float = float("nan")
    history: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def laplace_density(x, lam):
    """Laplace density (lam/2) exp(-lam |x|)."""
    if not np.all(np.asarray(lam) > 0):
        raise ParameterError("Laplace rate must be positive")
    return 0.5 * lam * np.exp(-lam * np.abs(x))


def log_laplace_density(x, lam):
    if not np.all(np.asarray(lam) > 0):
        raise ParameterError("Laplace rate must be positive")
    return np.log(0.5 * lam) - lam * np.abs(x)


def selection_thresholds(C, lambda0s, lambda1):
    """Per-column magnitude below which the spike density dominates."""
    C = np.asarray(C, float)
    lambda0s = np.broadcast_to(np.asarray(lambda0s, float), C.shape)
    if np.any(lambda0s <= lambda1):
        raise ParameterError("selection threshold undefined for lambda0 <= lambda1")
    return np.log(lambda0s * (1 - C) / (lambda1 * C)) / (lambda0s - lambda1)


def effective_dimension(B, C, lambda0s, lambda1) -> int:
    """Largest column index holding an entry at or above its threshold."""
    B = np.atleast_2d(np.asarray(B, float))
    C = np.asarray(C, float)
    if C.shape != (B.shape[1],) or np.shape(np.broadcast_to(lambda0s, C.shape)) != C.shape:
        raise ParameterError("column count of B must match C and lambda0s")
    thr = selection_thresholds(C, lambda0s, lambda1)
    active = np.flatnonzero((np.abs(B) >= thr).any(axis=0))
    return int(active[-1] + 1) if active.size else 0


def validate(params: ModelParams, data: ResponseMatrix | None = None) -> list:
    """Return human-readable invariant violations (empty when valid)."""
    out = []
    B, C = params.loading, params.ibp_weights
    J, K = B.shape
    if not np.all(np.isfinite(B)):
        out.append("loading contains non-finite entries")
    if C.shape != (K,):
        out.append(f"ibp_weights has length {C.size}, expected {K}")
    else:
        if np.any(np.diff(C) > 0):
            out.append("ibp_weights are not non-increasing")
        if np.any((C <= 0) | (C > 1)):
            out.append("ibp_weights outside (0, 1]")
    if len(params.intercepts) != J:
        out.append(f"{len(params.intercepts)} intercepts for {J} items")
    if params.resid_var.shape != (J,):
        out.append("resid_var length does not match item count")
    for j, d in enumerate(params.intercepts):
        if np.ndim(d) == 1:
            if np.any(np.diff(d) < 0):
                out.append(f"item {j + 1}: ordinal thresholds not increasing")
            if not np.all(np.isfinite(d)):
                out.append(f"item {j + 1}: non-finite thresholds")
        elif not math.isfinite(d):
            out.append(f"item {j + 1}: non-finite intercept")
    if data is not None:
        if data.n_items != J:
            out.append(f"data has {data.n_items} items, params have {J}")
        else:
            for j, kind in enumerate(data.kinds):
                d = params.intercepts[j]
                if kind.is_ordinal:
                    if np.ndim(d) != 1 or len(d) != kind.levels:
                        out.append(f"item {j + 1}: expected {kind.levels} thresholds")
                elif np.ndim(d) != 0:
                    out.append(f"item {j + 1}: expected a scalar intercept")
                if kind.is_continuous:
                    v = params.resid_var[j]
                    if not (np.isfinite(v) and v > 0):
                        out.append(f"item {j + 1}: residual variance must be positive")
    return out
